"""Finite-difference wave synthesis."""
