"""Simulated permissioned ledger for air-quality emission records."""

__version__ = "0.1.0"
