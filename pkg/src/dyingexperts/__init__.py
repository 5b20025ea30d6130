"""Online learning with dying experts."""

__version__ = "0.1.0"
