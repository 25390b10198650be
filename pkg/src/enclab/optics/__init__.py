"""Fermat/Snell geometry and shapes."""
