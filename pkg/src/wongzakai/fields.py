"""Vector fields on the torus and the flows of dx/dt = sigma(x).

Every callable acts on arrays of shape ``(..., d)``; times broadcast against
the leading axes.  Flows return coordinates in the covering space R^d,
continuous in ``t``, so that integrator algebra never sees a wrap-around jump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import AccuracyError, CapabilityError, DomainError
from .torus import TWO_PI, TorusGeometry

Map = Callable[[np.ndarray], np.ndarray]
Flow = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class VectorField:
    name: str
    geom: TorusGeometry
    eval: Map
    jacobian: Map
    split: Optional[tuple["VectorField", "VectorField"]] = None
    exact_flow: Optional[Flow] = None
    sup_norm: float = math.inf
    sup_jacobian: float = math.inf

    @property
    def dim(self) -> int:
        return self.geom.dim

    def __call__(self, x):
        return self.eval(np.asarray(x, dtype=float))


def _times(t, x):
    """Broadcast times of shape ``batch`` against points of shape ``batch + (d,)``."""
    return np.asarray(t, dtype=float)[..., None]


def gudermannian(u):
    return 2.0 * np.arctan(np.tanh(0.5 * u))


def inverse_gudermannian(x):
    return 2.0 * np.arctanh(np.tan(0.5 * x))


def _cosine_flow(t, x):
    # Branches are separated by the fixed points pi/2 + k*pi.  Lift x into
    # [-pi/2, 3pi/2), then solve on (-pi/2, pi/2) directly and on (pi/2, 3pi/2)
    # through y = x - pi, which obeys dy/dt = -cos(y).
    x = np.asarray(x, dtype=float)
    t = _times(t, x)
    shift = TWO_PI * np.floor((x + 0.5 * math.pi) / TWO_PI)
    y = x - shift
    lower = (y > -0.5 * math.pi) & (y < 0.5 * math.pi)
    upper = (y > 0.5 * math.pi) & (y < 1.5 * math.pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        on_lower = gudermannian(t + inverse_gudermannian(np.where(lower, y, 0.0)))
        on_upper = math.pi + gudermannian(-t + inverse_gudermannian(np.where(upper, y - math.pi, 0.0)))
    out = np.where(lower, on_lower, np.where(upper, on_upper, y))
    return out + shift


def _cosine_plus_one_flow(t, x):
    # dx/dt = 1 + cos x = 2 cos^2(x/2), hence d tan(x/2)/dt = 1; fixed points at pi + 2k pi.
    x = np.asarray(x, dtype=float)
    t = _times(t, x)
    shift = TWO_PI * np.floor((x + math.pi) / TWO_PI)
    y = x - shift
    fixed = y == -math.pi
    with np.errstate(invalid="ignore"):
        moved = 2.0 * np.arctan(np.tan(0.5 * y) + t)
    return np.where(fixed, y, moved) + shift


def _constant(name, geom, c):
    c = np.broadcast_to(np.asarray(c, dtype=float), (geom.dim,)).copy()
    c.setflags(write=False)
    zero_jac = np.zeros((geom.dim, geom.dim))
    return VectorField(
        name=name,
        geom=geom,
        eval=lambda x: np.broadcast_to(c, np.shape(x)).copy(),
        jacobian=lambda x: np.broadcast_to(zero_jac, np.shape(x) + (geom.dim,)).copy(),
        exact_flow=lambda t, x: np.asarray(x, dtype=float) + _times(t, x) * c,
        sup_norm=float(np.linalg.norm(c)),
        sup_jacobian=0.0,
    )


def _require_period(key, geom, period=TWO_PI):
    if not math.isclose(geom.period, period, rel_tol=0, abs_tol=1e-14):
        raise DomainError(f"field {key!r} is only periodic on tori of period {period}, got {geom.period}")


def _require_dim(key, geom, dim):
    if geom.dim != dim:
        raise DomainError(f"field {key!r} lives on T^{dim}, got dimension {geom.dim}")


def _cosine(geom):
    _require_dim("cosine", geom, 1)
    _require_period("cosine", geom)
    shifted = VectorField(
        name="cosine+1",
        geom=geom,
        eval=lambda x: np.cos(x) + 1.0,
        jacobian=lambda x: -np.sin(x)[..., None],
        exact_flow=_cosine_plus_one_flow,
        sup_norm=2.0,
        sup_jacobian=1.0,
    )
    return VectorField(
        name="cosine",
        geom=geom,
        eval=np.cos,
        jacobian=lambda x: -np.sin(x)[..., None],
        split=(shifted, _constant("minus-one", geom, -1.0)),
        exact_flow=_cosine_flow,
        sup_norm=1.0,
        sup_jacobian=1.0,
    )


def _sine_shear(geom):
    _require_dim("sine-shear", geom, 2)
    _require_period("sine-shear", geom)

    def sigma(x):
        return np.stack([np.sin(x[..., 1]), np.cos(x[..., 0])], axis=-1)

    def jac(x):
        out = np.zeros(np.shape(x) + (2,))
        out[..., 0, 1] = np.cos(x[..., 1])
        out[..., 1, 0] = -np.sin(x[..., 0])
        return out

    def shear_x(t, x):
        out = np.array(x, dtype=float)
        out[..., 0] += np.asarray(t) * np.sin(out[..., 1])
        return out

    def shear_y(t, x):
        out = np.array(x, dtype=float)
        out[..., 1] += np.asarray(t) * np.cos(out[..., 0])
        return out

    def jac_x(x):
        out = np.zeros(np.shape(x) + (2,))
        out[..., 0, 1] = np.cos(x[..., 1])
        return out

    def jac_y(x):
        out = np.zeros(np.shape(x) + (2,))
        out[..., 1, 0] = -np.sin(x[..., 0])
        return out

    sx = VectorField(
        "sine-shear-x", geom,
        eval=lambda x: np.stack([np.sin(x[..., 1]), np.zeros(np.shape(x)[:-1])], axis=-1),
        jacobian=jac_x, exact_flow=shear_x, sup_norm=1.0, sup_jacobian=1.0,
    )
    sy = VectorField(
        "sine-shear-y", geom,
        eval=lambda x: np.stack([np.zeros(np.shape(x)[:-1]), np.cos(x[..., 0])], axis=-1),
        jacobian=jac_y, exact_flow=shear_y, sup_norm=1.0, sup_jacobian=1.0,
    )
    return VectorField(
        "sine-shear", geom, eval=sigma, jacobian=jac, split=(sx, sy),
        sup_norm=math.sqrt(2.0), sup_jacobian=1.0,
    )


FIELD_KEYS = ("cosine", "constant", "sine-shear")


def builtin_field(key: str, geom: Optional[TorusGeometry] = None, *, c=1.0) -> VectorField:
    """Look up a catalog field.

    ``"constant"`` accepts any geometry and takes the velocity ``c``; its split
    is two half-velocity constants.  ``"cosine"`` needs T^1 with period 2*pi
    and is split as (cos x + 1) + (-1).  ``"sine-shear"`` needs T^2 with
    period 2*pi and is split into its two shear components.
    """
    if key == "cosine":
        return _cosine(geom or TorusGeometry(1))
    if key == "sine-shear":
        return _sine_shear(geom or TorusGeometry(2))
    if key == "constant":
        geom = geom or TorusGeometry(1)
        c_arr = np.asarray(c, dtype=float)
        if c_arr.ndim and c_arr.shape != (geom.dim,):
            raise DomainError(f"constant velocity has shape {c_arr.shape}, expected ({geom.dim},)")
        full = _constant("constant", geom, c_arr)
        half = _constant("constant/2", geom, 0.5 * c_arr)
        return replace(full, split=(half, half))
    raise LookupError(f"unknown field {key!r}; choose from {', '.join(FIELD_KEYS)}")


def flow_exact(field: VectorField, t, x) -> np.ndarray:
    """Closed-form flow, wrapped to the canonical domain."""
    if field.exact_flow is None:
        raise CapabilityError(f"field {field.name!r} has no closed-form flow")
    return field.geom.wrap(field.exact_flow(t, np.asarray(x, dtype=float)))


def rk4_step(field: VectorField) -> Flow:
    f = field.eval

    def step(h, x):
        h = _times(h, x)
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    return step


@dataclass(frozen=True)
class FlowRef:
    """Reference flow by substepping a one-step map (classical RK4 unless given)."""

    field: VectorField
    substeps_per_unit_time: int = 16
    base_integrator: Optional[Flow] = None
    max_substeps: int = 2**22


def _substep(step, t, x, n):
    h = np.full(np.shape(x)[:-1], t / n)
    for _ in range(n):
        x = step(h, x)
    return x


def flow_reference_cover(ref: FlowRef, t: float, x, tol: float = 1e-12) -> np.ndarray:
    if not tol > 0:
        raise DomainError("tolerance must be positive")
    step = ref.base_integrator or rk4_step(ref.field)
    x = np.asarray(x, dtype=float)
    t = float(t)
    if t == 0.0:
        return x.copy()
    n = max(1, math.ceil(abs(t) * ref.substeps_per_unit_time))
    coarse = _substep(step, t, x, n)
    while n <= ref.max_substeps:
        fine = _substep(step, t, x, 2 * n)
        if np.max(np.linalg.norm(fine - coarse, axis=-1)) < tol:
            return fine
        coarse, n = fine, 2 * n
    raise AccuracyError(f"reference flow did not reach tol={tol} within {ref.max_substeps} substeps")


def flow_reference(ref: FlowRef, t: float, x, tol: float = 1e-12) -> np.ndarray:
    """High-accuracy phi(t, x) by step doubling until successive results agree to ``tol``."""
    return ref.field.geom.wrap(flow_reference_cover(ref, t, x, tol))
