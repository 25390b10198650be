"""Time-domain enclosure laboratory."""

__version__ = "0.1.0"
