"""Implicit-consensus ledger: per-node chains sealed by BFT-agreed check points."""

__version__ = "0.1.0"
