"""Detection-style long-horizon forecasting for marked temporal point processes."""

__version__ = "0.1.0"
