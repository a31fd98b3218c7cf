"""High-contrast random composites: micro-spectral predictions and direct spectral checks."""

__version__ = "0.1.0"
