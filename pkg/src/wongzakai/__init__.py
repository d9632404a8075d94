"""Asymptotic-preserving schemes for a multiscale SDE on the torus and their Wong-Zakai limit."""

from .errors import AccuracyError, CapabilityError, DomainError, InsufficientDataError, WongZakaiError
from .torus import TorusGeometry, TorusPoint, dist, lift_near, wrap

__version__ = "0.1.0"

__all__ = [
    "AccuracyError", "CapabilityError", "DomainError", "InsufficientDataError", "WongZakaiError",
    "TorusGeometry", "TorusPoint", "dist", "lift_near", "wrap",
]
