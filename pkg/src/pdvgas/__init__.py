"""Path-dependent volatility model for natural gas with storage feedback, calibration, and swing pricing."""

__version__ = "0.1.0"
