"""Ledger-backed LwM2M device management suite."""

__version__ = "0.1.0"
