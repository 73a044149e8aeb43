"""LUCE simulator - license accountability and compliance for data sharing on a simulated ledger."""

__version__ = "1.0.0"
__author__ = "LUCE Simulator Team"
