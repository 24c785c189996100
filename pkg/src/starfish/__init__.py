"""Starfish: multi-party rebalancing for payment channels, plus a network simulator."""
from .core import InvalidAmount, InvariantViolation, Ledger

__version__ = "0.1.0"

__all__ = ["InvalidAmount", "InvariantViolation", "Ledger", "__version__"]
