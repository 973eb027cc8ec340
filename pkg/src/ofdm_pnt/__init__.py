"""TOA error bounds and estimators for OFDM signals with pilots and unknown data."""

__version__ = "0.1.0"
