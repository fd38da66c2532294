"""Multi-region climate-economy model with a global emission trading system."""

__version__ = "0.1.0"
