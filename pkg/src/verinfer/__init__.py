"""Optimistic verifiable inference, desk scale."""

__version__ = "0.1.0"
