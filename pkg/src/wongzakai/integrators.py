"""One-step integrators for dx/dt = sigma(x) and checks of their order conditions.

Step maps are evaluated in the covering space; :meth:`Integrator.__call__`
wraps once at the end of the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import CapabilityError
from .fields import VectorField, _times

INTEGRATOR_KINDS = ("taylor2", "midpoint", "heun", "strang", "euler", "exact")
SECOND_ORDER_KINDS = ("taylor2", "midpoint", "heun", "strang", "exact")

DEFECT_FLOOR = 1e-13
ORDER_TOL = 1e-4


@dataclass(frozen=True)
class Integrator:
    name: str
    field: VectorField
    step_cover: Callable[[np.ndarray, np.ndarray], np.ndarray]
    declared_order: Union[int, str]

    def __call__(self, t, x) -> np.ndarray:
        return self.field.geom.wrap(self.step_cover(t, np.asarray(x, dtype=float)))

    @property
    def is_second_order(self) -> bool:
        return self.declared_order == "exact" or self.declared_order >= 2


def _taylor2(sigma: VectorField):
    def step(t, x):
        t = _times(t, x)
        s = sigma.eval(x)
        js = np.einsum("...ij,...j->...i", sigma.jacobian(x), s)
        return x + t * s + 0.5 * t * t * js
    return step


def _midpoint(sigma: VectorField):
    f = sigma.eval

    def step(t, x):
        t = _times(t, x)
        return x + t * f(x + 0.5 * t * f(x))
    return step


def _heun(sigma: VectorField):
    f = sigma.eval

    def step(t, x):
        t = _times(t, x)
        s = f(x)
        return x + 0.5 * t * (s + f(x + t * s))
    return step


def _euler(sigma: VectorField):
    f = sigma.eval

    def step(t, x):
        return x + _times(t, x) * f(x)
    return step


def _strang(sigma: VectorField):
    if sigma.split is None:
        raise CapabilityError(f"field {sigma.name!r} has no splitting")
    first, second = sigma.split
    if first.exact_flow is None or second.exact_flow is None:
        raise CapabilityError(f"splitting of {sigma.name!r} lacks closed-form sub-flows")
    phi1, phi2 = first.exact_flow, second.exact_flow

    def step(t, x):
        half = 0.5 * np.asarray(t, dtype=float)
        return phi2(half, phi1(t, phi2(half, x)))
    return step


def _exact(sigma: VectorField):
    if sigma.exact_flow is None:
        raise CapabilityError(f"field {sigma.name!r} has no closed-form flow")
    return sigma.exact_flow


_BUILDERS = {
    "taylor2": (_taylor2, 2),
    "midpoint": (_midpoint, 2),
    "heun": (_heun, 2),
    "strang": (_strang, 2),
    "euler": (_euler, 1),
    "exact": (_exact, "exact"),
}


def make_integrator(kind: str, field: VectorField) -> Integrator:
    try:
        builder, order = _BUILDERS[kind]
    except KeyError:
        raise LookupError(f"unknown integrator {kind!r}; choose from {', '.join(INTEGRATOR_KINDS)}") from None
    return Integrator(kind, field, builder(field), order)


def available_integrators(field: VectorField) -> list[Integrator]:
    out = []
    for kind in INTEGRATOR_KINDS:
        try:
            out.append(make_integrator(kind, field))
        except CapabilityError:
            pass
    return out


def defect(intg: Integrator, t1, t2, x) -> np.ndarray:
    """Phi(t1 + t2, x) - Phi(t1, Phi(t2, x)) as the shortest torus displacement."""
    x = np.asarray(x, dtype=float)
    step = intg.step_cover
    joint = step(np.asarray(t1) + np.asarray(t2), x)
    composed = step(t1, step(t2, x))
    return intg.field.geom.displacement(joint, composed)


# derivative checks at t = 0

@dataclass
class OrderConditionReport:
    integrator: str
    residuals: dict = field(default_factory=dict)
    tol: float = ORDER_TOL

    @property
    def passed(self) -> dict:
        return {k: bool(v < self.tol) for k, v in self.residuals.items()}

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())


IDENTITIES = ("dt", "dt2", "dtdx")


def time_derivatives_at_zero(intg: Integrator, x, h: float = 1e-3):
    """Central finite differences of t -> Phi(t, x) at t = 0.

    Returns (d/dt, d^2/dt^2, d^2/dt dx) with shapes (..., d), (..., d), (..., d, d).
    """
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    step = intg.step_cover

    def at(t, y):
        return step(np.full(batch, t), y)

    p1, m1 = at(h, x), at(-h, x)
    p2, m2 = at(2 * h, x), at(-2 * h, x)
    zero = at(0.0, x)
    first = (p1 - m1) / (2 * h)
    second = (-p2 + 16 * p1 - 30 * zero + 16 * m1 - m2) / (12 * h * h)
    d = x.shape[-1]
    mixed = np.empty(batch + (d, d))
    k = h
    for j in range(d):
        e = np.zeros(d)
        e[j] = k
        mixed[..., :, j] = (at(h, x + e) - at(h, x - e) - at(-h, x + e) + at(-h, x - e)) / (4 * h * k)
    return first, second, mixed


def check_order_conditions(intg: Integrator, samples, h: float = 1e-3, tol: float = ORDER_TOL) -> OrderConditionReport:
    if not 0 < h <= 0.1:
        raise ValueError("finite-difference step must lie in (0, 0.1]")
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    sigma = intg.field
    s = sigma.eval(x)
    jac = sigma.jacobian(x)
    js = np.einsum("...ij,...j->...i", jac, s)
    first, second, mixed = time_derivatives_at_zero(intg, x, h)
    report = OrderConditionReport(intg.name, tol=tol)
    report.residuals["dt"] = float(np.max(np.abs(first - s)))
    report.residuals["dt2"] = float(np.max(np.abs(second - js)))
    report.residuals["dtdx"] = float(np.max(np.abs(mixed - jac)))
    return report


# defect scaling

@dataclass
class DefectReport:
    integrator: str
    p1: float = math.nan
    p2: float = math.nan
    max_defect: float = 0.0
    status: str = "ok"
    passed: bool = False
    points_used: int = 0

    @property
    def total(self) -> float:
        return self.p1 + self.p2


def default_defect_grid(n: int = 8, t_max: float = 0.5) -> np.ndarray:
    return t_max * 2.0 ** -np.arange(n)


def fit_defect_scaling(intg: Integrator, x_samples, t_grid: Sequence[float] = None,
                       floor: float = DEFECT_FLOOR) -> DefectReport:
    """Fit log sup_x |dPhi(t1, t2, x)| = c + p1 log t1 + p2 log t2 over a tensor grid."""
    t_grid = default_defect_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    if t_grid.size < 6:
        raise ValueError("need at least 6 grid points per axis")
    if np.any(t_grid <= 0) or np.any(t_grid > 0.5):
        raise ValueError("defect grid must lie in (0, 0.5]")
    x = np.atleast_2d(np.asarray(x_samples, dtype=float))
    rows = []
    for t1 in t_grid:
        for t2 in t_grid:
            val = np.linalg.norm(defect(intg, t1, t2, x), axis=-1).max()
            rows.append((t1, t2, val))
    rows = np.array(rows)
    report = DefectReport(intg.name, max_defect=float(rows[:, 2].max()))
    keep = rows[:, 2] >= floor
    report.points_used = int(keep.sum())
    if report.points_used < 3:
        report.status = "defect below floor"
        report.passed = True
        return report
    r = rows[keep]
    design = np.column_stack([np.ones(len(r)), np.log(r[:, 0]), np.log(r[:, 1])])
    coef, *_ = np.linalg.lstsq(design, np.log(r[:, 2]), rcond=None)
    report.p1, report.p2 = float(coef[1]), float(coef[2])
    if intg.is_second_order:
        report.passed = 2.8 <= report.total <= 3.3 and min(report.p1, report.p2) >= 0.9
    else:
        report.passed = 1.8 <= report.total <= 2.2
    return report
