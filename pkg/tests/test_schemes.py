import math

import numpy as np
import pytest

from wongzakai.errors import CapabilityError, DomainError
from wongzakai.fields import builtin_field, gudermannian
from wongzakai.integrators import INTEGRATOR_KINDS, make_integrator
from wongzakai.ou import OUParams, sample_paths
from wongzakai.rng import NormalStream, ZeroStream
from wongzakai.schemes import (
    SchemeState, TrajectoryConfig, exact_solution, limiting_solution, limiting_step,
    multiscale_step, run_trajectory,
)

COS = builtin_field("cosine")
HEUN = make_integrator("heun", COS)


def ou(eps, dt, n, samples=100, m0=0.0, seed=0):
    return sample_paths(OUParams(eps, m0), dt, NormalStream(seed).normals(range(samples), n))


def test_quiescent_step():
    s = multiscale_step(SchemeState(np.array([[0.4]]), np.zeros(1)), HEUN, OUParams(0.1), 0.01, np.zeros(1))
    assert s.m[0] == 0.0 and s.x[0, 0] == 0.4 and s.step_index == 1


def test_single_step_by_hand():
    x0 = np.array([[0.3]])
    s = multiscale_step(SchemeState(x0, np.zeros(1)), HEUN, OUParams(1.0), 1.0, np.ones(1))
    assert s.m[0] == 0.5
    u = 0.5
    want = 0.3 + u / 2 * (math.cos(0.3) + math.cos(0.3 + u * math.cos(0.3)))
    assert s.x[0, 0] == pytest.approx(want, abs=1e-15)


def test_bad_step():
    with pytest.raises(DomainError):
        multiscale_step(SchemeState(np.zeros((1, 1)), np.zeros(1)), HEUN, OUParams(0.1), 0.0, np.zeros(1))


def test_limiting_step_zero_increment():
    x = np.array([[1.2]])
    assert np.array_equal(limiting_step(x, HEUN, np.zeros(1)), x)


@pytest.mark.parametrize("kind", INTEGRATOR_KINDS)
def test_constant_field_is_exact_for_every_member(kind):
    f = builtin_field("constant", c=0.8)
    eps, dt, n = 0.05, 2 ** -6, 64
    p = ou(eps, dt, n, m0=0.4)
    run = TrajectoryConfig(make_integrator(kind, f), dt, n, np.array([1.0]), params=OUParams(eps, 0.4))
    res = run_trajectory(run, p.dbeta)
    travel = 1.0 + 0.8 * np.sum(dt * p.m_disc[1:] / eps, axis=0)
    assert np.max(f.geom.dist(res.final_x, f.geom.wrap(travel[:, None]))) < 1e-12
    # and the exact solution is x0 + c zeta
    ex = exact_solution(OUParams(eps, 0.4), p, f, np.array([1.0]), n)
    assert np.max(f.geom.dist(ex, f.geom.wrap(1.0 + 0.8 * p.zeta[n][:, None]))) < 1e-12


def test_m_component_matches_ou_chain():
    eps, dt, n = 0.02, 2 ** -8, 256
    p = ou(eps, dt, n, m0=1.0)
    run = TrajectoryConfig(HEUN, dt, n, np.array([0.0]), params=OUParams(eps, 1.0))
    assert np.array_equal(run_trajectory(run, p.dbeta).final_m, p.m_disc[-1])


def test_exact_solution_cases():
    eps, dt, n = 0.1, 0.01, 50
    p = sample_paths(OUParams(eps, 1.0), dt, ZeroStream().normals(range(3), n))
    x = exact_solution(OUParams(eps, 1.0), p, COS, np.array([0.0]), 0)
    assert np.all(x == 0.0)
    t = n * dt
    x = exact_solution(OUParams(eps, 1.0), p, COS, np.array([0.0]), n)
    assert x[0, 0] == pytest.approx(gudermannian(eps * -math.expm1(-t / eps ** 2)), abs=1e-14)
    with pytest.raises(CapabilityError):
        exact_solution(OUParams(eps), p, builtin_field("sine-shear"), np.zeros(2), n)
    with pytest.raises(CapabilityError):
        limiting_solution(builtin_field("sine-shear"), np.zeros(2), np.zeros(3))


def test_run_trajectory_validation():
    with pytest.raises(DomainError):
        TrajectoryConfig(HEUN, 0.1, 10, np.zeros(1))
    with pytest.raises(DomainError):
        TrajectoryConfig(HEUN, 0.1, 10, np.zeros(1), mode="weird")
    run = TrajectoryConfig(HEUN, 0.1, 10, np.zeros(1), params=OUParams(0.1))
    with pytest.raises(DomainError):
        run_trajectory(run, np.zeros((9, 2)))


def test_zero_steps_and_paths():
    run = TrajectoryConfig(HEUN, 0.1, 0, np.array([0.5]), params=OUParams(0.1, 0.3), keep_path=True)
    res = run_trajectory(run, np.zeros((0, 4)))
    assert np.all(res.final_x == 0.5) and np.all(res.final_m == 0.3)
    run = TrajectoryConfig(HEUN, 0.1, 5, np.array([0.5]), params=OUParams(0.1), keep_path=True)
    assert run_trajectory(run, np.zeros(5)).path.shape == (6, 1, 1)


def test_huge_eps_barely_moves():
    n, dt = 100, 0.01
    inc = NormalStream(3).normals(range(50), n)[:, :, 0].T * math.sqrt(dt)
    run = TrajectoryConfig(HEUN, dt, n, np.array([0.2]), params=OUParams(1e4))
    x = run_trajectory(run, inc).final_x
    # |dt m'/eps| <= dt |sum dbeta| / eps^2 per step
    bound = n * dt * np.max(np.abs(np.cumsum(inc, axis=0))) / 1e8
    assert np.max(COS.geom.dist(x, np.array([0.2]))) <= bound + 1e-15


def test_exact_member_limiting_scheme_telescopes():
    n, dt = 256, 2 ** -8
    inc = NormalStream(5).normals(range(40), n)[:, :, 0].T * math.sqrt(dt)
    run = TrajectoryConfig(make_integrator("exact", COS), dt, n, np.array([0.0]), mode="limiting")
    x = run_trajectory(run, inc).final_x
    want = limiting_solution(COS, np.array([0.0]), inc.sum(axis=0))
    assert np.max(COS.geom.dist(x, want)) < 1e-12


def test_limiting_mode_ignores_eps():
    inc = np.full(8, 0.1)
    a = run_trajectory(TrajectoryConfig(HEUN, 0.1, 8, np.zeros(1), mode="limiting"), inc)
    b = run_trajectory(TrajectoryConfig(HEUN, 0.1, 8, np.zeros(1), params=OUParams(3.0), mode="limiting"), inc)
    assert np.array_equal(a.final_x, b.final_x) and a.final_m is None


def test_euler_limit_misses_stratonovich_correction():
    n, dt, M = 1024, 2 ** -10, 500
    inc = NormalStream(8).normals(range(M), n)[:, :, 0].T * math.sqrt(dt)
    x0 = np.array([0.0])
    euler = run_trajectory(TrajectoryConfig(make_integrator("euler", COS), dt, n, x0, mode="limiting"), inc).final_x
    heun = run_trajectory(TrajectoryConfig(HEUN, dt, n, x0, mode="limiting"), inc).final_x
    exact = limiting_solution(COS, x0, inc.sum(axis=0))
    d_euler = math.sqrt(np.mean(COS.geom.dist(euler, exact) ** 2))
    d_heun = math.sqrt(np.mean(COS.geom.dist(heun, exact) ** 2))
    assert d_euler > 0.05
    assert d_euler > 20 * d_heun


def test_multiscale_tends_to_limiting_scheme():
    n, dt = 64, 2 ** -6
    noise = NormalStream(4).normals(range(200), n)
    dbeta = math.sqrt(dt) * noise[:, :, 0].T
    lim = run_trajectory(TrajectoryConfig(HEUN, dt, n, np.zeros(1), mode="limiting"), dbeta).final_x
    gaps = []
    for eps in (1e-2, 1e-3, 1e-4):
        run = TrajectoryConfig(HEUN, dt, n, np.zeros(1), params=OUParams(eps))
        gaps.append(math.sqrt(np.mean(COS.geom.dist(run_trajectory(run, dbeta).final_x, lim) ** 2)))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-4


def test_sde_gap_scales_with_eps():
    # d2(X^eps(T), X^0(T)) <= C eps, with C stable when the eps grid is refined
    n, dt, M = 256, 2 ** -8, 2000
    noise = NormalStream(6).normals(range(M), n)
    x0 = np.array([0.0])
    ratios = []
    for eps in (0.2, 0.1, 0.05, 0.025, 0.0125):
        p = sample_paths(OUParams(eps, 0.5), dt, noise)
        xe = exact_solution(p.params, p, COS, x0, n)
        x0lim = limiting_solution(COS, x0, p.beta[n])
        ratios.append(math.sqrt(np.mean(COS.geom.dist(xe, x0lim) ** 2)) / eps)
    coarse, fine = max(ratios[:4]), max(ratios)
    assert fine <= 1.25 * coarse
    assert fine < 2.0
