"""Flat torus geometry: canonical representatives, wrap-around metric, lifting.

Points are stored as numpy arrays whose last axis holds the ``d`` coordinates,
so every function here works on single points and on batches alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TorusGeometry:
    """The torus (R / L Z)^d."""

    dim: int = 1
    period: float = TWO_PI

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise DomainError(f"dimension must be a positive integer, got {self.dim}")
        if not (math.isfinite(self.period) and self.period > 0):
            raise DomainError(f"period must be positive and finite, got {self.period}")

    def wrap(self, v) -> np.ndarray:
        """Canonical representative in [0, L)^d."""
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise DomainError("cannot wrap non-finite coordinates")
        r = np.mod(v, self.period)
        # np.mod can round tiny negative inputs up to exactly L
        return np.where(r >= self.period, 0.0, r)

    def displacement(self, x1, x2) -> np.ndarray:
        """Shortest lattice-shifted difference x1 - x2, each component in [-L/2, L/2]."""
        diff = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
        return diff - self.period * np.round(diff / self.period)

    def dist(self, x1, x2) -> np.ndarray:
        """Flat torus distance, reduced over the last (coordinate) axis."""
        diff = np.abs(self.displacement(x1, x2))
        # scale by the largest component so tiny separations do not underflow to 0
        big = np.max(diff, axis=-1, keepdims=True)
        safe = np.where(big > 0, big, 1.0)
        return big[..., 0] * np.sqrt(np.sum((diff / safe) ** 2, axis=-1))

    def lift_near(self, x, anchor) -> np.ndarray:
        """Representative of ``x`` closest to ``anchor`` in the covering space."""
        x = np.asarray(x, dtype=float)
        anchor = np.asarray(anchor, dtype=float)
        return x + self.period * np.round((anchor - x) / self.period)

    @property
    def diameter(self) -> float:
        return 0.5 * self.period * math.sqrt(self.dim)


@dataclass(frozen=True)
class TorusPoint:
    """A single point of a torus, always in canonical form."""

    coords: np.ndarray
    geom: TorusGeometry = field(default_factory=TorusGeometry)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coords, dtype=float))
        if c.shape != (self.geom.dim,):
            raise DomainError(f"expected {self.geom.dim} coordinates, got shape {c.shape}")
        c = self.geom.wrap(c)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def __eq__(self, other):
        if not isinstance(other, TorusPoint):
            return NotImplemented
        return self.geom == other.geom and bool(np.array_equal(self.coords, other.coords))

    def __hash__(self):
        return hash((self.geom, self.coords.tobytes()))


def wrap(v, geom: TorusGeometry) -> TorusPoint:
    return TorusPoint(np.asarray(v, dtype=float), geom)


def dist(x1: TorusPoint, x2: TorusPoint) -> float:
    if x1.geom != x2.geom:
        raise DomainError("points live on different tori")
    return float(x1.geom.dist(x1.coords, x2.coords))


def lift_near(x: TorusPoint, anchor) -> np.ndarray:
    anchor = np.atleast_1d(np.asarray(anchor, dtype=float))
    return x.geom.lift_near(x.coords, anchor)
