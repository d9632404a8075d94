"""The fast Ornstein-Uhlenbeck component.

``m`` solves dm = -m/eps^2 dt + dbeta/eps.  Along a grid of step dt we carry,
driven by one Brownian path,

* the exact process m(t_n), sampled jointly with the Brownian increments,
* the implicit-Euler chain m_n used by the multiscale scheme,
* zeta(t_n) = (1/eps) int_0^{t_n} m(s) ds and beta(t_n).

Path arrays are time-major: shape ``(n_steps + 1, samples)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError

STIFF_LIMIT = 1e8
_SERIES_CUTOFF = 1e-2
# (1 - e^{-2z})/2 - (1 - e^{-z})^2/z = z^3/12 - z^4/12 + 17 z^5/360 - ...
_COND_VAR_SERIES = (1 / 12, -1 / 12, 17 / 360, -7 / 360, 43 / 6720, -107 / 60480)


@dataclass(frozen=True)
class OUParams:
    epsilon: float
    m0: float = 0.0

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if not math.isfinite(self.m0):
            raise DomainError("m0 must be finite")


@dataclass(frozen=True)
class StepLaw:
    """Joint law of (dbeta_n, I_n) over one step, I_n = int e^{-(t_{n+1}-s)/eps^2} dbeta(s)."""

    dt: float
    z: float            # dt / eps^2
    decay: float        # e^{-z}
    var_dbeta: float
    var_integral: float
    cov: float
    # I_n = load * dbeta_n / sqrt(dt) + residual_sd * xi
    load: float
    residual_sd: float


def step_law(epsilon: float, dt: float) -> StepLaw:
    if not dt > 0:
        raise DomainError("dt must be positive")
    eps2 = epsilon * epsilon
    z = dt / eps2
    if z > STIFF_LIMIT:
        decay, one_minus, one_minus_sq = 0.0, 1.0, 1.0
    else:
        decay = math.exp(-z)
        one_minus = -math.expm1(-z)
        one_minus_sq = -math.expm1(-2.0 * z)
    var_i = 0.5 * eps2 * one_minus_sq
    cov = eps2 * one_minus
    if z < _SERIES_CUTOFF:
        cond = eps2 * sum(c * z ** (k + 3) for k, c in enumerate(_COND_VAR_SERIES))
    else:
        cond = max(var_i - cov * cov / dt, 0.0)
    return StepLaw(dt, z, decay, dt, var_i, cov, cov / math.sqrt(dt), math.sqrt(cond))


def implicit_euler_update(m, dbeta, epsilon: float, dt: float):
    """m_{n+1} = (m_n + dbeta_n / eps) / (1 + dt / eps^2)."""
    return (m + dbeta / epsilon) / (1.0 + dt / (epsilon * epsilon))


def implicit_euler_chain(m0: float, dbeta: np.ndarray, epsilon: float, dt: float) -> np.ndarray:
    out = np.empty((dbeta.shape[0] + 1,) + dbeta.shape[1:])
    out[0] = m0
    for n in range(dbeta.shape[0]):
        out[n + 1] = implicit_euler_update(out[n], dbeta[n], epsilon, dt)
    return out


@dataclass
class OUPaths:
    epsilon: float
    m0: float
    dt: float
    dbeta: np.ndarray       # (N, M)
    integral: np.ndarray    # (N, M)
    m_exact: np.ndarray     # (N+1, M)
    m_disc: np.ndarray      # (N+1, M)
    zeta: Optional[np.ndarray]  # (N+1, M)
    beta: np.ndarray        # (N+1, M)
    # finest path this one was read from; coarsening always aggregates from it
    origin: Optional["OUPaths"] = field(default=None, repr=False, compare=False)

    @property
    def n_steps(self) -> int:
        return self.dbeta.shape[0]

    @property
    def samples(self) -> int:
        return self.dbeta.shape[1]

    @property
    def params(self) -> OUParams:
        return OUParams(self.epsilon, self.m0)


def _running_sum(increments: np.ndarray) -> np.ndarray:
    # row by row: same additions as cumsum along axis 0, but cache friendly for (N, M) arrays
    out = np.empty((increments.shape[0] + 1,) + increments.shape[1:])
    out[0] = 0.0
    for n in range(increments.shape[0]):
        np.add(out[n], increments[n], out=out[n + 1])
    return out


def _exact_chain(m0, integral, epsilon, decay):
    m = np.empty((integral.shape[0] + 1,) + integral.shape[1:])
    m[0] = m0
    scaled = integral / epsilon
    for n in range(integral.shape[0]):
        m[n + 1] = decay * m[n] + scaled[n]
    return m


def _zeta_path(dbeta, integral, m_exact, epsilon, z):
    # over one step, int m ds / eps = dbeta + eps (m_n - m_{n+1}) = dbeta + eps (1 - e^{-z}) m_n - I_n
    one_minus = 1.0 if z > STIFF_LIMIT else -math.expm1(-z)
    return _running_sum(dbeta + epsilon * one_minus * m_exact[:-1] - integral)


def sample_paths(params: OUParams, dt: float, noise: np.ndarray, *, time_major: bool = False,
                 with_zeta: bool = True) -> OUPaths:
    """Exact-in-law OU sample plus implicit-Euler chain on one set of increments.

    ``noise`` holds standard normals of shape ``(samples, n_steps, 2)`` as
    produced by :meth:`wongzakai.rng.NormalStream.normals`, or ``(2, n_steps,
    samples)`` with ``time_major=True``.  ``with_zeta=False`` skips the
    integrated path (``zeta`` is then None).
    """
    noise = np.asarray(noise, dtype=float)
    if time_major:
        if noise.ndim != 3 or noise.shape[0] != 2:
            raise DomainError("time-major noise must have shape (2, n_steps, samples)")
        z1, z2 = noise[0], noise[1]
    else:
        if noise.ndim != 3 or noise.shape[2] != 2:
            raise DomainError("noise must have shape (samples, n_steps, 2)")
        z1 = np.ascontiguousarray(noise[:, :, 0].T)
        z2 = np.ascontiguousarray(noise[:, :, 1].T)
    law = step_law(params.epsilon, dt)
    dbeta = math.sqrt(dt) * z1
    integral = law.load * z1 + law.residual_sd * z2
    m_exact = _exact_chain(params.m0, integral, params.epsilon, law.decay)
    return OUPaths(
        epsilon=params.epsilon,
        m0=params.m0,
        dt=dt,
        dbeta=dbeta,
        integral=integral,
        m_exact=m_exact,
        m_disc=implicit_euler_chain(params.m0, dbeta, params.epsilon, dt),
        zeta=_zeta_path(dbeta, integral, m_exact, params.epsilon, law.z) if with_zeta else None,
        beta=_running_sum(dbeta),
    )


def coarsen(paths: OUPaths, factor: int) -> OUPaths:
    """Same Brownian path seen on the grid of step ``factor * dt``.

    Node values (beta, m_exact, zeta) are subsampled, so they agree exactly with
    the fine path; coarse increments are differences of the subsampled beta;
    the stochastic integrals are re-aggregated from the finest level with the
    exact decay weights and the implicit-Euler chain is rerun on the coarse
    increments.  Because every coarse path aggregates from its finest source,
    coarsening by 2 twice is bit-identical to coarsening by 4 once.
    """
    k = int(factor)
    if k != factor or k < 1 or paths.n_steps % k:
        raise DomainError(f"coarsening factor {factor} must be a positive divisor of {paths.n_steps}")
    if k == 1:
        return paths
    src = paths.origin if paths.origin is not None else paths
    k_total = k * round(paths.dt / src.dt)
    n_coarse = src.n_steps // k_total
    dt = k * paths.dt
    beta = src.beta[::k_total].copy()
    dbeta = np.diff(beta, axis=0)
    z_fine = src.dt / src.epsilon ** 2
    weights = np.exp(-z_fine * np.arange(k_total - 1, -1, -1.0))
    integral = np.einsum("nkm,k->nm", src.integral.reshape(n_coarse, k_total, -1), weights)
    return OUPaths(
        epsilon=src.epsilon,
        m0=src.m0,
        dt=dt,
        dbeta=dbeta,
        integral=integral,
        m_exact=src.m_exact[::k_total].copy(),
        m_disc=implicit_euler_chain(src.m0, dbeta, src.epsilon, dt),
        zeta=None if src.zeta is None else src.zeta[::k_total].copy(),
        beta=beta,
        origin=src,
    )


@dataclass(frozen=True)
class MomentRecord:
    mean_disc: float
    var_disc: float
    mean_exact: float
    var_exact: float
    cov: float
    mse_coupling: float


def moment_oracle(params: OUParams, dt: float, n, cov_scale: float = 1.0) -> MomentRecord:
    """Closed-form Gaussian moments of (m_n, m(t_n)) and E|m_n - m(t_n)|^2.

    With a = 1/(1 + z), E = e^{-z}, z = dt/eps^2 and c = Cov(dbeta, I):

        Var m_n    = (1 - a^{2n}) / (2 + z)
        Var m(t_n) = (1 - e^{-2nz}) / 2
        Cov        = a (c/eps^2) (1 - (aE)^n) / (1 - aE)

    ``cov_scale`` multiplies c; it exists to check that comparisons against
    simulation are sensitive to a perturbed covariance.  ``n`` may be an array.
    """
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise DomainError("n must be non-negative")
    eps = params.epsilon
    law = step_law(eps, dt)
    z = law.z
    log_a = -math.log1p(z)
    mean_disc = params.m0 * np.exp(n * log_a)
    var_disc = -np.expm1(2.0 * n * log_a) / (2.0 + z)
    mean_exact = params.m0 * np.exp(-n * z)
    var_exact = -0.5 * np.expm1(-2.0 * n * z)
    log_ae = log_a - z
    c = cov_scale * law.cov / (eps * eps)
    cov = math.exp(log_a) * c * np.expm1(n * log_ae) / math.expm1(log_ae)
    mse = (mean_disc - mean_exact) ** 2 + var_disc + var_exact - 2.0 * cov
    vals = [mean_disc, var_disc, mean_exact, var_exact, cov, np.maximum(mse, 0.0)]
    if n.ndim == 0:
        vals = [float(v) for v in vals]
    return MomentRecord(*vals)


@dataclass(frozen=True)
class GaussianMoments:
    mean: float
    var: float


def zeta_minus_beta_moments(params: OUParams, t: float) -> GaussianMoments:
    """zeta(t) - beta(t) = eps (m0 - m(t)) is Gaussian with these moments."""
    eps = params.epsilon
    s = t / (eps * eps)
    mean = eps * params.m0 * -math.expm1(-s)
    var = eps * eps * -0.5 * math.expm1(-2.0 * s)
    return GaussianMoments(mean, var)
