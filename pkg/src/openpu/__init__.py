"""Open-set spectral classification trained from labeled known classes and wild data."""

__version__ = "0.1.0"
