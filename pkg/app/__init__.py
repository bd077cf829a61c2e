"""NonSticky Euler-Maruyama laboratory package."""

__version__ = "0.1.0"
