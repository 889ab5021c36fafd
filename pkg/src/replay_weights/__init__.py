"""Prioritization-based weighted loss for TD off-policy learning."""

__version__ = "0.1.0"
