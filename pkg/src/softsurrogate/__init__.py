"""Long-horizon policy value estimation from short-horizon on-policy prefixes."""

__version__ = "0.1.0"
