"""Regime-switching HAR forecasting of realized volatility."""

__version__ = "0.1.0"
