"""Decay-rate inversion and region estimate."""
