import math

import numpy as np
import pytest
from scipy.integrate import quad

from recursive_hhk.errors import DomainError
from recursive_hhk.ez import ez_budget, ez_rates, k_star, solve_ez, tau_bar
from recursive_hhk.market import MarketParams, price_functional
from recursive_hhk.paths import evaluate, satisfaction, utility_of
from recursive_hhk.preferences import EZParams, ez_felicity

from conftest import random_ez


def test_tau_bar_desk(desk, desk_ez):
    expected = 1 - math.log(1.05 / 1.95) / (-0.9)
    assert tau_bar(desk, desk_ez) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.3122, abs=1e-4)


def test_tau_bar_on_branch_boundary():
    # delta + beta (1 - 1/alpha) = 0 with alpha = .5, beta = 1 needs delta = 1
    m = MarketParams(T=2.0, r=0.0, beta=1.0, y=1.0, w=1.0)
    ez = EZParams(1.0, 0.5, 0.5)
    assert ez_rates(m, ez).D == 0
    assert tau_bar(m, ez) == pytest.approx(2.0 - 1.0 / (0.0 + 1.0), rel=1e-14)
    # continuity across the boundary
    near = EZParams(1.0 + 1e-7, 0.5, 0.5)
    assert tau_bar(m, near) == pytest.approx(1.0, abs=1e-6)


def test_k_star_desk(desk, desk_ez):
    tb = tau_bar(desk, desk_ez)
    expected = (1.95 / 0.15) * (1 - math.exp(-0.075 * tb))
    assert k_star(desk, desk_ez) == pytest.approx(expected, rel=1e-13)
    assert expected == pytest.approx(0.3009, abs=1e-4)


def test_k_star_degenerate_branch():
    # nu = delta - (1 - 1/alpha) r = 0 at alpha = 2, r = .1, delta = .05
    m = MarketParams(T=1.0, r=0.1, beta=1.0, y=1.0, w=1.0)
    ez = EZParams(0.05, 0.3, 2.0)
    assert ez_rates(m, ez).nu == pytest.approx(0.0, abs=1e-17)
    tb = tau_bar(m, ez)
    assert k_star(m, ez) == pytest.approx((1 - 2.0 * (0.05 - 0.1)) * tb, rel=1e-12)


def test_k_star_limit_for_fast_decay(desk, desk_ez):
    # alpha lam / beta -> 1 and tau_bar -> T, so k* -> (1 - e^{-alpha nu T}) / (alpha nu)
    anu = desk_ez.alpha * ez_rates(desk, desk_ez).nu
    limit = -math.expm1(-anu * desk.T) / anu
    gaps = [abs(k_star(desk.replace(beta=b), desk_ez) - limit) for b in (10.0, 100.0, 1e4)]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-4


def test_gulp_case_desk(desk, desk_ez):
    sol = solve_ez(desk, desk_ez)
    ks = k_star(desk, desk_ez)
    assert sol.case == "gulp"
    assert sol.gulp_size == pytest.approx((1 - ks) / (1 + ks), rel=1e-13)
    assert sol.gulp_size == pytest.approx(0.5374, abs=1e-4)
    initial = (1 - 0.5 * 0.05) * 2 / (1 + ks)
    assert sol.rate_at(0.0) == pytest.approx(initial, rel=1e-13)
    assert initial == pytest.approx(1.499, abs=1e-3)
    assert sol.plan.atoms == [(0.0, sol.gulp_size)]
    on = sol.plan.rate > 0
    assert on[0] and not on[int(np.ceil(sol.tau_bar / desk.h)) + 1:].any()


def test_gulp_vanishes_at_threshold(desk, desk_ez):
    ks = k_star(desk, desk_ez)
    sol = solve_ez(desk.replace(w=ks * desk.y), desk_ez)
    assert sol.gulp_size == pytest.approx(0.0, abs=1e-15)


def budget_by_quadrature(sol):
    p = sol.params
    start = 0.0 if sol.case == "gulp" else sol.tau_low
    val, _ = quad(lambda t: math.exp(-p.r * t) * float(sol.rate_at(t)), start, sol.tau_bar,
                  epsabs=0, epsrel=1e-12)
    return val + sol.gulp_size


def test_wait_case_desk(desk, desk_ez):
    sol = solve_ez(desk.replace(w=0.1), desk_ez)
    assert sol.case == "wait"
    assert 0 < sol.tau_low < sol.tau_bar
    assert len(sol.plan.atoms) == 0
    assert budget_by_quadrature(sol) == pytest.approx(0.1, rel=1e-6)
    assert price_functional(sol.plan, sol.params) == pytest.approx(0.1, rel=1e-12)
    # tau_low solves y e^{-beta t} = K^{-alpha} e^{-kappa t}
    k = ez_rates(desk, desk_ez)
    lhs = desk.y * math.exp(-desk.beta * sol.tau_low)
    rhs = sol.K_star ** (-desk_ez.alpha) * math.exp(-k.kappa * sol.tau_low)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    assert sol.M_star == pytest.approx(desk.beta * sol.K_star / (desk.r + desk.beta))


def test_wait_case_degenerate_branch_budget():
    m = MarketParams(T=2.0, r=0.1, beta=1.0, y=1.0, w=0.05)
    ez = EZParams(0.05, 0.3, 2.0)
    sol = solve_ez(m, ez)
    assert sol.case == "wait"
    assert budget_by_quadrature(sol) == pytest.approx(0.05, rel=1e-8)


def test_budget_is_decreasing_in_K(desk, desk_ez):
    tb = tau_bar(desk, desk_ez)
    Ks = np.exp(np.linspace(0, desk_ez.alpha * ez_rates(desk, desk_ez).lam * tb * 2, 20))
    vals = [ez_budget(K, desk, desk_ez, tb) for K in Ks]
    assert np.all(np.diff(vals) <= 0)


def test_immediate_case_for_short_horizon(desk_ez):
    m = MarketParams(T=0.2, r=0.05, beta=1.0, y=1.0, w=1.0)
    assert tau_bar(m, desk_ez) <= 0
    sol = solve_ez(m, desk_ez)
    assert sol.case == "immediate" and sol.plan.atoms == [(0.0, 1.0)]
    phi = evaluate(sol.plan, ez_felicity(desk_ez), m).phi
    assert np.all(np.diff(phi) < 0)


def test_negative_wealth_rejected(desk_ez):
    with pytest.raises(DomainError):
        solve_ez(MarketParams(T=1.0, r=0.05, beta=1.0, y=1.0, w=-1.0), desk_ez)


def test_budget_exact_on_random_instances():
    rng = np.random.default_rng(10)
    cases = set()
    for _ in range(40):
        m, p = random_ez(rng, 200)
        sol = solve_ez(m, p)
        cases.add(sol.case)
        assert abs(price_functional(sol.plan, m) - m.w) <= 1e-6 * m.w
    assert {"gulp", "wait"} <= cases


def test_rho_invariance(desk, desk_ez):
    a = solve_ez(desk, EZParams(0.1, 0.3, 0.5)).plan
    b = solve_ez(desk, EZParams(0.1, 0.5, 0.5)).plan
    np.testing.assert_allclose(a.rate, b.rate, rtol=0, atol=1e-8)
    np.testing.assert_allclose(a.atom_masses, b.atom_masses, rtol=0, atol=1e-8)


@pytest.mark.parametrize("w", [1.0, 0.1])
def test_joint_homogeneity(desk, desk_ez, w):
    one = solve_ez(desk.replace(w=w), desk_ez)
    two = solve_ez(desk.replace(w=2 * w, y=2 * desk.y), desk_ez)
    np.testing.assert_allclose(two.plan.rate, 2 * one.plan.rate, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(two.plan.atom_masses, 2 * one.plan.atom_masses, rtol=1e-9)
    assert two.k_star == one.k_star and two.tau_bar == one.tau_bar


def test_case_continuity_at_threshold(desk, desk_ez):
    ks = k_star(desk, desk_ez)
    above = solve_ez(desk.replace(w=ks * (1 + 1e-9)), desk_ez)
    below = solve_ez(desk.replace(w=ks * (1 - 1e-9)), desk_ez)
    assert above.case == "gulp" and below.case == "wait"
    assert below.tau_low < 1e-8
    np.testing.assert_allclose(above.plan.rate, below.plan.rate, rtol=1e-6)


@pytest.mark.parametrize("w", [1.0, 0.1])
def test_closed_form_satisfaction_matches_plan(desk, desk_ez, w):
    sol = solve_ez(desk.replace(w=w), desk_ez)
    # compared at grid nodes: inside the cells holding tau_low or tau_bar a
    # cell-constant rate cannot follow the exact path
    g = sol.params.grid
    np.testing.assert_allclose(satisfaction(sol.plan, sol.params).values, sol.Y_path.at(g),
                               rtol=1e-6)


@pytest.mark.parametrize("w", [1.0, 0.1])
def test_closed_form_utility(desk, desk_ez, ez_spec, w):
    sol = solve_ez(desk.replace(w=w), desk_ez)
    p = desk_ez
    J, _ = quad(lambda s: p.delta * math.exp(-p.delta * s) * float(sol.Y_path.at(s)) ** p.a,
                0, 1, points=[v for v in (sol.tau_low, sol.tau_bar) if np.isfinite(v)],
                epsabs=0, epsrel=1e-12)
    assert sol.U0 == pytest.approx(J ** p.psi_ez / (1 - p.rho), rel=1e-9)
    # the discretized plan's utility is close to the continuous optimum
    assert utility_of(sol.plan, ez_spec, sol.params) == pytest.approx(sol.U0, rel=1e-5)


def test_multiplier_is_marginal_value_of_wealth(desk, desk_ez):
    sol = solve_ez(desk, desk_ez)
    eps = 1e-5
    up = solve_ez(desk.replace(w=1 + eps), desk_ez).U0
    down = solve_ez(desk.replace(w=1 - eps), desk_ez).U0
    assert sol.multiplier == pytest.approx((up - down) / (2 * eps), rel=1e-7)


def test_to_dict_round_trip(desk, desk_ez):
    d = solve_ez(desk, desk_ez).to_dict()
    assert d["case"] == "gulp" and d["preferences"]["rho"] == 0.5
    assert len(d["plan"]["rate"]) == desk.grid_n
