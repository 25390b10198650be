"""Enclosure indicator and energy functionals."""
