import json
import math

import numpy as np
import pytest

from recursive_hhk.errors import DomainError, FelicityDomainError
from recursive_hhk.ez import solve_ez
from recursive_hhk.kkt import Tolerances, extract_multiplier, support_cells, verify_kkt
from recursive_hhk.market import ConsumptionPlan, MarketParams
from recursive_hhk.paths import utility_gradient
from recursive_hhk.preferences import FelicitySpec


def test_flat_phi():
    M, where = extract_multiplier(np.full(11, 5.0), MarketParams(1, 0, 1, 1, 1, 10))
    assert M == 5.0 and len(where) == 11


def test_decreasing_phi():
    M, where = extract_multiplier(np.linspace(3, 1, 11), MarketParams(1, 0, 1, 1, 1, 10))
    assert M == 3.0 and list(where) == [0.0]


def test_non_finite_gradient_rejected():
    with pytest.raises(DomainError):
        extract_multiplier(np.array([1.0, np.nan]))


def test_argmax_of_gulp_solution_is_consumption_interval(desk, desk_ez, ez_spec):
    sol = solve_ez(desk, desk_ez)
    M, where = extract_multiplier(utility_gradient(sol.plan, ez_spec, desk), tol_phi=1e-4)
    assert where[0] == 0.0
    # Phi leaves M quadratically after tau_bar, so the band is a few cells wider
    assert where[-1] == pytest.approx(sol.tau_bar, abs=0.01)
    assert np.all(np.diff(where) == pytest.approx(desk.h))


def test_empty_plan_fails_budget(desk, ez_spec):
    rep = verify_kkt(ConsumptionPlan.empty(desk), ez_spec, desk)
    assert rep.budget_gap == 1.0 and not rep.passed["budget"] and not rep.ok
    assert rep.support_interval is None


@pytest.mark.parametrize("w", [1.0, 0.1])
def test_ez_solution_passes(desk, desk_ez, ez_spec, w):
    m = desk.replace(w=w)
    rep = verify_kkt(solve_ez(m, desk_ez).plan, ez_spec, m)
    assert rep.ok, rep.to_dict(with_path=False)
    assert rep.support_connected and rep.off_support_strict
    assert rep.support_flatness <= 1e-4


def test_moving_mass_to_horizon_breaks_complementarity(desk, desk_ez, ez_spec):
    sol = solve_ez(desk, desk_ez)
    moved = 0.1 * sol.gulp_size
    plan = ConsumptionPlan(desk.T, desk.grid_n, sol.plan.rate, [0.0, desk.T],
                           [sol.gulp_size - moved, moved * math.exp(desk.r * desk.T)])
    rep = verify_kkt(plan, ez_spec, desk)
    assert rep.passed["budget"]
    assert not rep.passed["complementarity"]
    assert not rep.support_connected


def test_price_scaling(desk, desk_ez, ez_spec):
    plan = solve_ez(desk, desk_ez).plan
    base = verify_kkt(plan, ez_spec, desk)
    for c in (0.5, 3.0):
        scaled = verify_kkt(plan, ez_spec, desk, price_scale=c)
        assert scaled.M == pytest.approx(base.M / c, rel=1e-14)
        assert scaled.passed == base.passed


def test_support_cells_marks_atoms_and_rates(desk):
    rate = np.zeros(desk.grid_n)
    rate[10:20] = 1.0
    plan = ConsumptionPlan(desk.T, desk.grid_n, rate, [0.5], [1.0])
    node = support_cells(plan, desk)
    assert node[10:21].all() and node[200] and node.sum() == 12


def test_domain_failure_is_inconclusive(desk):
    def f(t, y, u):
        raise FelicityDomainError("always")

    spec = FelicitySpec("broken", f, f, f, f, f, f)
    plan = ConsumptionPlan.from_atoms(desk, [(0.0, 1.0)])
    rep = verify_kkt(plan, spec, desk)
    assert rep.inconclusive and not rep.ok and rep.passed["budget"]
    assert "always" in rep.message


def test_tolerances_are_respected(desk, desk_ez, ez_spec):
    plan = solve_ez(desk.replace(w=0.1), desk_ez).plan
    strict = verify_kkt(plan, ez_spec, desk.replace(w=0.1), Tolerances(comp=1e-16))
    assert not strict.passed["complementarity"]


def test_report_json(desk, desk_ez, ez_spec):
    rep = verify_kkt(solve_ez(desk, desk_ez).plan, ez_spec, desk)
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["pass"]["all"] is True
    assert len(d["phi_path"]["Phi"]) == desk.grid_n + 1
