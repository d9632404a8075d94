"""The multiscale scheme, its epsilon -> 0 limit, and exact solution evaluators.

Multiscale scheme, one step (m first, then x with the *new* m):

    m_{n+1} = (m_n + dbeta_n / eps) / (1 + dt / eps^2)
    X_{n+1} = Phi(dt * m_{n+1} / eps, X_n)

Limiting scheme: X_{n+1} = Phi(dbeta_n, X_n).

States are batched: ``x`` has shape ``(samples, d)`` and ``m`` ``(samples,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CapabilityError, DomainError
from .fields import VectorField
from .integrators import Integrator
from .ou import OUParams, OUPaths, implicit_euler_update

MODES = ("multiscale", "limiting")


@dataclass
class SchemeState:
    x: np.ndarray
    m: np.ndarray
    step_index: int = 0


@dataclass
class TrajectoryResult:
    final_x: np.ndarray
    final_m: Optional[np.ndarray]
    path: Optional[np.ndarray] = None


def multiscale_step(state: SchemeState, intg: Integrator, params: OUParams, dt: float, dbeta) -> SchemeState:
    if not dt > 0:
        raise DomainError("dt must be positive")
    eps = params.epsilon
    m = implicit_euler_update(state.m, dbeta, eps, dt)
    x = intg(dt * m / eps, state.x)
    return SchemeState(x, m, state.step_index + 1)


def limiting_step(x, intg: Integrator, dbeta) -> np.ndarray:
    return intg(dbeta, x)


def exact_solution(params: OUParams, paths: OUPaths, field: VectorField, x0, n: int) -> np.ndarray:
    """X^eps(t_n) = phi(zeta(t_n), x0), one value per sample."""
    if field.exact_flow is None:
        raise CapabilityError(f"field {field.name!r} has no closed-form flow")
    zeta = paths.zeta[n]
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), zeta.shape + (field.dim,))
    return field.geom.wrap(field.exact_flow(zeta, x0))


def limiting_solution(field: VectorField, x0, beta) -> np.ndarray:
    """X^0(t) = phi(beta(t), x0)."""
    if field.exact_flow is None:
        raise CapabilityError(f"field {field.name!r} has no closed-form flow")
    beta = np.asarray(beta, dtype=float)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), beta.shape + (field.dim,))
    return field.geom.wrap(field.exact_flow(beta, x0))


@dataclass
class TrajectoryConfig:
    integrator: Integrator
    dt: float
    n_steps: int
    x0: np.ndarray
    params: Optional[OUParams] = None
    mode: str = "multiscale"
    keep_path: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "multiscale" and self.params is None:
            raise DomainError("multiscale mode needs OU parameters")


def run_trajectory(config: TrajectoryConfig, increments) -> TrajectoryResult:
    """Fold the scheme over Brownian increments of shape ``(n_steps, samples)``."""
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 1:
        inc = inc[:, None]
    if inc.shape[0] != config.n_steps:
        raise DomainError(f"expected {config.n_steps} increments, got {inc.shape[0]}")
    intg = config.integrator
    geom = intg.field.geom
    samples = inc.shape[1]
    x = geom.wrap(np.broadcast_to(np.asarray(config.x0, dtype=float), (samples, geom.dim)))
    path = [x] if config.keep_path else None
    if config.mode == "limiting":
        for n in range(config.n_steps):
            x = intg(inc[n], x)
            if path is not None:
                path.append(x)
        m = None
    else:
        state = SchemeState(x, np.full(samples, float(config.params.m0)))
        for n in range(config.n_steps):
            state = multiscale_step(state, intg, config.params, config.dt, inc[n])
            if path is not None:
                path.append(state.x)
        x, m = state.x, state.m
    return TrajectoryResult(x, m, None if path is None else np.stack(path))
