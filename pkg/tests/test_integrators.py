import math

import numpy as np
import pytest

from wongzakai.errors import CapabilityError
from wongzakai.fields import FIELD_KEYS, builtin_field
from wongzakai.integrators import (
    INTEGRATOR_KINDS, available_integrators, check_order_conditions, defect, fit_defect_scaling,
    make_integrator, time_derivatives_at_zero,
)

COS = builtin_field("cosine")
SECOND = ("taylor2", "midpoint", "heun", "strang")


def cover_flow(t, x):
    return COS.exact_flow(np.asarray(t, dtype=float), x)


def test_heun_and_taylor2_spot_values():
    x = np.array([0.0])
    heun = make_integrator("heun", COS)(0.1, x)[0]
    assert heun == pytest.approx(0.05 * (1 + math.cos(0.1)), abs=1e-15)
    assert heun == pytest.approx(0.0997502, abs=1e-7)
    assert make_integrator("taylor2", COS)(0.1, x)[0] == pytest.approx(0.1, abs=1e-16)


def test_midpoint_spot_value():
    x = 1.0
    want = x + 0.3 * math.cos(x + 0.15 * math.cos(x))
    assert make_integrator("midpoint", COS)(0.3, np.array([x]))[0] == pytest.approx(want, abs=1e-15)


def test_strang_spot_value():
    # half step of sigma_2 = -1, full step of cos + 1, half step of -1
    x, t = 0.4, 0.2
    y = x - t / 2
    y = 2 * math.atan(math.tan(y / 2) + t)
    y = y - t / 2
    assert make_integrator("strang", COS)(t, np.array([x]))[0] == pytest.approx(y, abs=1e-14)


@pytest.mark.parametrize("key", FIELD_KEYS)
def test_identity_at_zero(key, rng):
    f = builtin_field(key)
    x = f.geom.wrap(rng.uniform(0, 2 * math.pi, size=(16, f.dim)))
    for intg in available_integrators(f):
        assert np.array_equal(intg(np.zeros(16), x), x), intg.name


def test_capability_and_lookup_errors():
    shear = builtin_field("sine-shear")
    with pytest.raises(CapabilityError):
        make_integrator("exact", shear)
    assert "strang" in [i.name for i in available_integrators(shear)]
    with pytest.raises(LookupError):
        make_integrator("rk4", COS)


def test_every_member_exact_on_constants(rng):
    f = builtin_field("constant", c=0.7)
    x = rng.uniform(0, 6, size=(10, 1))
    t = rng.uniform(-1, 1, size=10)
    for kind in INTEGRATOR_KINDS:
        got = make_integrator(kind, f)(t, x)
        assert np.max(f.geom.dist(got, f.geom.wrap(x + 0.7 * t[:, None]))) < 1e-14, kind


def test_euler_defect_closed_form(rng):
    x = rng.uniform(0, 2 * math.pi, size=(30, 1))
    t1, t2 = rng.uniform(-0.5, 0.5, size=(2, 30))
    got = defect(make_integrator("euler", COS), t1, t2, x)[:, 0]
    xs = x[:, 0]
    assert np.allclose(got, t1 * (np.cos(xs) - np.cos(xs + t2 * np.cos(xs))), atol=1e-14)


def test_defect_vanishes_on_axes(rng):
    x = rng.uniform(0, 2 * math.pi, size=(10, 1))
    for intg in available_integrators(COS):
        assert np.max(np.abs(defect(intg, 0.0, 0.3, x))) < 1e-15
        assert np.max(np.abs(defect(intg, 0.3, 0.0, x))) < 1e-15


def test_exact_member_has_no_defect(rng):
    x = rng.uniform(0, 2 * math.pi, size=(10, 1))
    assert np.max(np.abs(defect(make_integrator("exact", COS), 0.4, -0.3, x))) < 1e-14


def test_order_condition_examples():
    x = np.array([[1.0]])
    first, second, _ = time_derivatives_at_zero(make_integrator("heun", COS), np.array([[0.0]]))
    assert first[0, 0] == pytest.approx(1.0, abs=1e-6)
    target = -math.sin(1) * math.cos(1)
    assert target == pytest.approx(-0.4546, abs=1e-4)
    _, euler2, _ = time_derivatives_at_zero(make_integrator("euler", COS), x)
    assert abs(euler2[0, 0]) < 1e-6
    _, taylor2, _ = time_derivatives_at_zero(make_integrator("taylor2", COS), x)
    assert taylor2[0, 0] == pytest.approx(target, abs=1e-6)


@pytest.mark.parametrize("key", ["cosine", "sine-shear"])
def test_order_conditions_report(key, rng):
    f = builtin_field(key)
    pts = rng.uniform(0, 2 * math.pi, size=(32, f.dim))
    for intg in available_integrators(f):
        rep = check_order_conditions(intg, pts)
        if intg.is_second_order:
            assert rep.all_passed, (intg.name, rep.residuals)
        else:
            assert rep.passed == {"dt": True, "dt2": False, "dtdx": True}


def test_finite_difference_step_validated():
    with pytest.raises(ValueError):
        check_order_conditions(make_integrator("heun", COS), [[0.0]], h=0.5)


@pytest.mark.parametrize("kind", SECOND)
def test_defect_scaling_order_two(kind, rng):
    rep = fit_defect_scaling(make_integrator(kind, COS), rng.uniform(0, 2 * math.pi, size=(32, 1)))
    assert rep.passed and 2.8 <= rep.total <= 3.3
    assert rep.p1 >= 0.9 and rep.p2 >= 0.9


def test_defect_scaling_euler_and_exact(rng):
    pts = rng.uniform(0, 2 * math.pi, size=(32, 1))
    rep = fit_defect_scaling(make_integrator("euler", COS), pts)
    assert 1.8 <= rep.total <= 2.2
    exact = fit_defect_scaling(make_integrator("exact", COS), pts)
    assert exact.status == "defect below floor" and exact.passed


def test_defect_bound_is_symmetric(rng):
    # the fitted bound c t1^p1 t2^p2 holds with the arguments swapped too
    pts = rng.uniform(0, 2 * math.pi, size=(32, 1))
    intg = make_integrator("heun", COS)
    grid = 0.5 * 2.0 ** -np.arange(8)
    vals = np.array([[np.abs(defect(intg, a, b, pts)).max() for b in grid] for a in grid])
    rep = fit_defect_scaling(intg, pts, grid)
    scale = np.max(vals / np.outer(grid ** rep.p1, grid ** rep.p2))
    bound = scale * np.outer(grid ** rep.p1, grid ** rep.p2)
    assert np.all(vals.T <= 4 * bound)


def test_defect_grid_validated():
    with pytest.raises(ValueError):
        fit_defect_scaling(make_integrator("heun", COS), [[0.0]], [0.1, 0.2])
    with pytest.raises(ValueError):
        fit_defect_scaling(make_integrator("heun", COS), [[0.0]], [1.0, 0.5, 0.25, 0.125, 0.06, 0.03])


@pytest.mark.parametrize("kind", SECOND + ("euler",))
def test_local_error_exponent(kind, rng):
    x = rng.uniform(0, 2 * math.pi, size=(32, 1))
    ts = 2.0 ** -np.arange(3, 9)
    intg = make_integrator(kind, COS)
    errs = [np.max(COS.geom.dist(intg(t, x), COS.geom.wrap(cover_flow(t, x)))) for t in ts]
    slope = np.polyfit(np.log(ts), np.log(errs), 1)[0]
    if kind == "euler":
        assert 1.8 <= slope <= 2.2
    else:
        assert slope >= 2.8


@pytest.mark.parametrize("kind", SECOND)
def test_global_order_two(kind):
    x0 = np.array([[0.3], [2.0], [4.0]])
    intg = make_integrator(kind, COS)
    errs, steps = [], [2 ** k for k in range(4, 9)]
    for n in steps:
        x = x0
        for _ in range(n):
            x = intg(1.0 / n, x)
        errs.append(np.max(COS.geom.dist(x, COS.geom.wrap(cover_flow(1.0, x0)))))
    slope = -np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert 1.8 <= slope <= 2.2
