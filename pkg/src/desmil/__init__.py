"""Multi-interest sequential recommendation with HSIC-driven sample re-weighting."""

__version__ = "0.1.0"
