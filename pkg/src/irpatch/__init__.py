"""Shape-and-location optimization of constant-valued occluding patches."""

__version__ = "0.1.0"
