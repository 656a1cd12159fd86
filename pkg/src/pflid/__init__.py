"""Identification of price-responsive flexible-load models from price/power data."""

__version__ = "0.1.0"
