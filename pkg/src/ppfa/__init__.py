"""Federated learning with learned, budget-constrained parameter distortion."""
from . import attack, distortion, federation, metrics, numkit, privacy

__all__ = ["attack", "distortion", "federation", "metrics", "numkit", "privacy"]
