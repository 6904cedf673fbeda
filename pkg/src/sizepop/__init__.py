"""Size-structured population dynamics with nonlocal growth and delayed recruitment."""

__version__ = "0.1.0"
