import math

import numpy as np
import pytest

from recursive_hhk.errors import FelicityDomainError
from recursive_hhk.market import MarketParams
from recursive_hhk.paths import evaluate
from recursive_hhk.ez import solve_ez
from recursive_hhk.preferences import (EZParams, ez_felicity, felicity_from_config, l_operator,
                                       lipschitz_bound, ordinal_form, power_felicity,
                                       time_additive_felicity, validate)

from conftest import random_ez

MARKET = MarketParams(T=1.0, r=0.05, beta=1.0, y=1.0, w=1.0)


def sqrt_felicity(delta=0.1):
    return time_additive_felicity(np.sqrt, lambda y: 0.5 / np.sqrt(y),
                                  lambda y: -0.25 * y ** -1.5, delta)


def central(fn, x, h):
    return (fn(x + h) - fn(x - h)) / (2 * h)


def check_partials(spec, t, y, u):
    """Compare the coded partials with central differences at one point."""
    hy, hu, ht = 1e-6 * max(abs(y), 1.0), 1e-6 * max(abs(u), 1.0), 1e-6
    pairs = [
        (spec.f_y(t, y, u), central(lambda s: spec.f(t, s, u), y, hy)),
        (spec.f_u(t, y, u), central(lambda s: spec.f(t, y, s), u, hu)),
        (spec.f_yy(t, y, u), central(lambda s: spec.f_y(t, s, u), y, hy)),
        (spec.f_uy(t, y, u), central(lambda s: spec.f_y(t, y, s), u, hu)),
        (spec.f_ty(t, y, u), central(lambda s: spec.f_y(s, y, u), t, ht)),
    ]
    for coded, fd in pairs:
        assert float(coded) == pytest.approx(float(fd), rel=1e-6, abs=1e-7)


def test_ez_partials_match_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        _, p = random_ez(rng)
        spec = ez_felicity(p)
        y = rng.uniform(0.2, 3.0)
        u = rng.uniform(0.3, 3.0) / (1 - p.rho)
        check_partials(spec, rng.uniform(0, 1), y, u)


@pytest.mark.parametrize("gamma", [-2.0, -0.5, 0.0, 0.3, 0.7])
def test_power_partials_match_finite_differences(gamma):
    rng = np.random.default_rng(1)
    spec = power_felicity(gamma, 0.1)
    for _ in range(20):
        check_partials(spec, rng.uniform(0, 1), rng.uniform(0.2, 3), rng.uniform(-2, 2))


def test_ez_value_at_unit_power_factor():
    p = EZParams(0.1, 0.5, 0.5)
    spec = ez_felicity(p)
    u = 1.0 / (1 - p.rho)
    y = 2.0
    expected = p.delta / p.a * y ** p.a - p.delta * p.psi_ez * u
    assert spec.f(0.0, y, u) == pytest.approx(expected, rel=1e-14)


def test_ez_zero_discount_is_zero():
    spec = ez_felicity(EZParams(0.0, 0.5, 0.5))
    assert spec.f(0.3, 1.7, 2.0) == 0.0
    assert ordinal_form(spec).generator is spec


def test_ez_domain_errors():
    spec = ez_felicity(EZParams(0.1, 0.5, 0.5))
    with pytest.raises(FelicityDomainError):
        spec.f(0.0, 1.0, -1.0)
    with pytest.raises(FelicityDomainError):
        spec.f(0.0, 0.0, 1.0)
    with pytest.raises(FelicityDomainError):
        ez_felicity(EZParams(0.1, 1.0, 0.5))


def test_ez_u_derivative_along_closed_form_utility(desk, desk_ez, ez_spec):
    # f_u = (psi - 1) delta Y^a / J_t - delta psi, with J the discounted Y^a integral
    sol = evaluate(solve_ez(desk, desk_ez).plan, ez_spec, desk)
    form = ordinal_form(ez_spec)
    a, psi, d = desk_ez.a, desk_ez.psi_ez, desk_ez.delta
    for k in (0, 50, 200, 350):
        J = a * sol.z[k]
        y, u = sol.Y.values[k], sol.U[k]
        assert ez_spec.f_u(0.0, y, u) == pytest.approx((psi - 1) * d * y ** a / J - d * psi,
                                                       rel=1e-10)
        assert form.to_utility(form.from_utility(u)) == pytest.approx(u, rel=1e-12)


def test_ordinal_slope_is_derivative_of_map():
    form = ordinal_form(ez_felicity(EZParams(0.1, 0.5, 0.5)))
    z = -1.3  # a = -1 here, so a * z > 0 needs z < 0
    fd = central(form.to_utility, z, 1e-6)
    assert form.slope(z) == pytest.approx(fd, rel=1e-8)


def test_time_additive_examples():
    spec = sqrt_felicity()
    assert spec.f_y(0.0, 4.0, 0.0) == 0.25
    assert spec.f_u(0.5, 2.0, 3.0) == -0.1
    assert spec.f_uy(0.5, 2.0, 3.0) == 0.0 and spec.f_ty(0.5, 2.0, 3.0) == 0.0


def test_l_operator_time_additive_reduction():
    # r g' - delta g' - beta y g'' at g = sqrt, r=.05, delta=.1, beta=1, y=1:
    # 0.025 - 0.05 + 0.25 = 0.225
    spec = sqrt_felicity()
    assert l_operator(spec, MARKET, 0.0, 1.0, 0.7) == pytest.approx(0.225, rel=1e-14)


def test_l_operator_constant_g_vanishes():
    zero = lambda y: 0.0 * y
    spec = time_additive_felicity(lambda y: 0.0 * y + 3.0, zero, zero, 0.1)
    assert l_operator(spec, MARKET, 0.2, 1.5, 1.0) == 0.0


def test_l_operator_positive_along_ez_solution():
    rng = np.random.default_rng(2)
    for _ in range(5):
        m, p = random_ez(rng, 200)
        spec = ez_felicity(p)
        if p.delta == 0:
            continue
        sol = evaluate(solve_ez(m, p).plan, spec, m)
        idx = np.linspace(0, m.grid_n - 1, 100).astype(int)
        lf = l_operator(spec, m, sol.times[idx], sol.Y.values[idx], sol.U[idx])
        assert np.all(lf > 0)


def test_l_operator_positive_at_random_points():
    rng = np.random.default_rng(3)
    for _ in range(50):
        m, p = random_ez(rng)
        spec = ez_felicity(p)
        y = rng.uniform(0.1, 5, 20)
        u = rng.uniform(0.1, 5, 20) / (1 - p.rho)
        assert np.all(l_operator(spec, m, 0.0, y, u) > 0) or p.delta == 0


def test_validate_examples():
    assert validate(EZParams(0.1, 0.5, 0.5), MARKET) == []
    assert "rho != 1" in validate(EZParams(0.1, 1.0, 0.5))
    assert "r + beta/alpha - delta > 0" in validate(EZParams(5.0, 0.5, 0.5), MARKET)
    assert "rho < 1/alpha" in validate(EZParams(0.1, 0.6, 2.0))
    assert len(validate(EZParams(-1.0, -0.5, -2.0))) >= 3


def test_concavity_in_satisfaction_and_utility():
    rng = np.random.default_rng(4)
    for _ in range(200):
        _, p = random_ez(rng)
        spec = ez_felicity(p)
        y1, y2 = rng.uniform(0.2, 3, 2)
        u1, u2 = rng.uniform(0.2, 3, 2) / (1 - p.rho)
        lam = rng.uniform()
        mid = spec.f(0.0, lam * y1 + (1 - lam) * y2, lam * u1 + (1 - lam) * u2)
        chord = lam * spec.f(0.0, y1, u1) + (1 - lam) * spec.f(0.0, y2, u2)
        assert mid >= chord - 1e-12


def test_felicity_from_config():
    ez = felicity_from_config({"felicity": "epstein-zin", "delta": 0.1, "rho": 0.5,
                               "alpha": 0.5})
    assert ez.label == "epstein-zin"
    pw = felicity_from_config({"felicity": "time-additive-power", "exponent": 0.5,
                               "delta": 0.1})
    assert pw.f(0.0, 4.0, 0.0) == pytest.approx(4.0)
    with pytest.raises(FelicityDomainError):
        felicity_from_config({"felicity": "habit"})
    with pytest.raises(FelicityDomainError):
        power_felicity(1.0, 0.1)


def test_lipschitz_bound():
    spec = power_felicity(0.5, 0.3)
    assert lipschitz_bound(spec, (0, 1), (0.5, 2), (-1, 1)) == pytest.approx(0.3)
    box = ez_felicity(EZParams(0.1, 0.5, 0.5), box=(0.5, 2.0, 1.0, 4.0))
    assert box.lipschitz == pytest.approx(
        lipschitz_bound(box, (0, 1), (0.5, 2.0), (1.0, 4.0), n=2), rel=1e-12)


def test_small_satisfaction_is_clamped_with_warning():
    spec = power_felicity(0.5, 0.1)
    with pytest.warns(RuntimeWarning):
        val = spec.f_y(0.0, 1e-14, 0.0)
    assert val == pytest.approx(1e6, rel=1e-12)
