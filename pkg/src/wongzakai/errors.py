"""Exception types shared across the package."""


class WongZakaiError(Exception):
    """Base class for all package errors."""


class DomainError(WongZakaiError, ValueError):
    """An argument lies outside the domain of an operation."""


class CapabilityError(WongZakaiError):
    """A field lacks a capability (split, exact flow) that an operation needs."""


class AccuracyError(WongZakaiError, ArithmeticError):
    """A reference computation failed to reach its tolerance."""


class InsufficientDataError(WongZakaiError):
    """Too few usable data points for a fit."""
