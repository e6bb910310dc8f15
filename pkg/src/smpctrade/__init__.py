"""Backtesting of SMPC-based and rule-based single-stock trading controllers."""

__version__ = "0.1.0"
