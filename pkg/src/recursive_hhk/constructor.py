"""Optimal plans for general felicities.

For a fixed multiplier ``M`` the optimal plan consumes on one interval
``[t0, t1]`` where ``Phi_t = M``.  Differentiating ``Phi`` shows that on this
interval satisfaction sits at the level ``I_t`` solving

    f_y(t, I_t, U_t) = (r + beta) M e^{-rt} / (beta E_t),

with ``E_t = exp(int_0^t f_u)``.  Consumption starts when ``y e^{-beta t}``
has decayed to ``I_t`` (immediately, with a gulp, if ``y < I_0``) and stops at
the last time ``t1`` where stopping yields ``Phi = M``.  Because ``U`` and
``E`` depend on the plan, the triple is found by Picard iteration started
from the zero plan.  An outer root-find on ``M`` meets the budget.

All computations use the felicity's ordinal coordinate (see
:func:`recursive_hhk.preferences.ordinal_form`), so ``M`` here is the
multiplier of the ordinal utility; ``M_utility`` converts it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError, FelicityDomainError
from .kkt import KKTReport, Tolerances, verify_kkt
from .market import ConsumptionPlan, MarketParams, cell_discounts
from .paths import GradientPath, PathSolution, SatisfactionPath, UtilityPath, _solve, satisfaction
from .preferences import FelicitySpec, l_operator, ordinal_form

__all__ = [
    "TripleSolution",
    "PicardStep",
    "rate_ode_rhs",
    "solve_for_multiplier",
    "picard_iterate",
    "solve",
]

log = logging.getLogger(__name__)

_GL8 = np.polynomial.legendre.leggauss(8)
_GL16 = np.polynomial.legendre.leggauss(16)
_GL48 = np.polynomial.legendre.leggauss(48)


def rate_ode_rhs(spec: FelicitySpec, params: MarketParams, t, Y, U):
    """Satisfaction slope and consumption rate that keep ``Phi`` flat.

    Returns ``(dY/dt, rate)`` with ``rate = -Lf / (beta f_yy)`` and
    ``dY/dt = beta (rate - Y)``.
    """
    fyy = np.asarray(spec.f_yy(t, Y, U), dtype=float)
    if np.any(fyy == 0):
        raise DomainError("f_yy vanishes: consumption rate is singular")
    lf = l_operator(spec, params, t, Y, U)
    rate = -lf / (params.beta * fyy)
    return params.beta * (rate - np.asarray(Y)), rate


@dataclass
class PicardStep:
    n: int
    t0: float
    t1: float
    regime: str
    delta: float

    def to_dict(self) -> dict:
        return {"n": self.n, "t0": self.t0, "t1": self.t1, "regime": self.regime,
                "delta": self.delta}


@dataclass
class TripleSolution:
    """Consumption interval, plan and paths for one multiplier.

    ``regime`` is ``"interval"`` (consumption in rates on ``[t0, t1]``, with a
    gulp when ``t0 = 0``), ``"immediate"`` (a single gulp at 0) or ``"none"``.
    """

    M: float
    M_utility: float
    t0: float
    t1: float
    regime: str
    gulp: float
    plan: ConsumptionPlan
    Y_path: SatisfactionPath
    U_path: UtilityPath
    Phi_path: GradientPath
    verified: bool
    budget: float
    history: list = field(default_factory=list)
    report: KKTReport | None = None

    def to_dict(self) -> dict:
        out = {"M": self.M, "M_utility": self.M_utility, "t0": self.t0, "t1": self.t1,
               "regime": self.regime, "gulp": self.gulp, "budget": self.budget,
               "verified": self.verified, "U0": float(self.U_path.values[0]),
               "history": [h.to_dict() for h in self.history], "plan": self.plan.to_dict()}
        if self.report is not None:
            out["kkt"] = self.report.to_dict(with_path=False)
        return out


class _Iterate:
    """Hermite interpolants of ``z`` and ``log E`` from one backward pass."""

    def __init__(self, sol: PathSolution):
        self.sol = sol
        self.z = CubicHermiteSpline(sol.times, sol.z, sol.dz)
        self.log_E = CubicHermiteSpline(sol.times, sol.log_E, sol.dlog_E)


class _Problem:
    def __init__(self, spec: FelicitySpec, params: MarketParams):
        self.spec = spec
        self.form = ordinal_form(spec)
        self.gen = self.form.generator
        self.params = params
        self._zero = None

    def zero_iterate(self) -> _Iterate:
        if self._zero is None:
            p = self.params
            Y0 = satisfaction(ConsumptionPlan.empty(p), p)
            self._zero = _Iterate(_solve(Y0, self.spec, p, gradient=True))
        return self._zero

    # level I_t -----------------------------------------------------------
    def target(self, it: _Iterate, M: float, t):
        p = self.params
        return (p.r + p.beta) * M * np.exp(-p.r * t - it.log_E(t)) / p.beta

    def level(self, it: _Iterate, M: float, t) -> np.ndarray:
        """Solve ``F_y(t, I, z_t) = target_t`` for ``I`` (F_y is decreasing in y)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        z = it.z(t)
        goal = self.target(it, M, t)
        fy = lambda ly: self.gen.f_y(t, np.exp(ly), z)
        ref = math.log(max(self.params.y, 1e-6))
        lo = np.full(t.shape, ref - 1.0)
        hi = np.full(t.shape, ref + 1.0)
        floor, ceil = math.log(1e-11), math.log(1e250)
        step = 1.0
        for _ in range(200):
            low_bad = fy(lo) < goal
            high_bad = fy(hi) > goal
            if not (low_bad.any() or high_bad.any()):
                break
            if np.any(low_bad & (lo <= floor)) or np.any(high_bad & (hi >= ceil)):
                raise FelicityDomainError("no satisfaction level in [1e-11, 1e250] matches "
                                          "the multiplier")
            lo = np.where(low_bad, np.maximum(lo - step, floor), lo)
            hi = np.where(high_bad, np.minimum(hi + step, ceil), hi)
            step *= 2.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            above = fy(mid) > goal
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
            if np.max(hi - lo) < 1e-13:
                break
        ly = 0.5 * (lo + hi)
        # one Newton step in y
        y = np.exp(ly)
        fyy = self.gen.f_yy(t, y, z)
        newton = y - (self.gen.f_y(t, y, z) - goal) / np.where(fyy != 0, fyy, -np.inf)
        ok = (newton > np.exp(lo)) & (newton < np.exp(hi))
        return np.where(ok, newton, y)

    # Phi if consumption stops at t with Y_t = level -----------------------
    def phi_stop_nodes(self, it: _Iterate, levels: np.ndarray, ts: np.ndarray) -> np.ndarray:
        p = self.params
        x, wts = _GL48
        half = 0.5 * (p.T - ts)[:, None]
        s = ts[:, None] + half * (x[None, :] + 1.0)
        return self._phi_integrand_sum(it, levels[:, None], ts[:, None], s, half * wts[None, :])

    def phi_stop(self, it: _Iterate, level: float, t: float, breaks=()) -> float:
        p = self.params
        edges = [t] + sorted(b for b in breaks if t < b < p.T) + [p.T]
        x, wts = _GL16
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            s = a + 0.5 * (b - a) * (x + 1.0)
            total += self._phi_integrand_sum(it, level, t, s, 0.5 * (b - a) * wts)
        return float(total)

    def _phi_integrand_sum(self, it, level, t, s, weights):
        p = self.params
        Ys = level * np.exp(-p.beta * (s - t))
        fy = self.gen.f_y(s, Ys, it.z(s))
        expo = it.log_E(s) + (p.r + p.beta) * t - p.beta * s
        return p.beta * np.sum(weights * np.exp(expo) * fy, axis=-1)

    # one Picard map -------------------------------------------------------
    def step(self, it: _Iterate, M: float):
        """Consumption structure implied by the previous iterate."""
        p = self.params
        grid = p.grid
        log_y = math.log(p.y)
        prev_breaks = getattr(it, "breaks", ())

        levels = self.level(it, M, grid)
        gap = log_y - p.beta * grid - np.log(levels)  # > 0 while y e^{-beta t} above I_t
        stop = self.phi_stop_nodes(it, levels, grid) - M
        above = np.flatnonzero(stop >= 0)

        if len(above) == 0:
            # interval consumption never pays: at most a gulp at 0
            g0 = lambda L: self.phi_stop(it, math.exp(L), 0.0, prev_breaks) - M
            if g0(log_y) <= 0:
                return "none", math.nan, math.nan, p.y
            hi = log_y + 1.0
            while g0(hi) > 0:
                hi += 2.0 * (hi - log_y)
                if hi > 600:
                    raise ConvergenceError("no gulp size matches the multiplier")
            L = brentq(g0, log_y, hi, xtol=1e-14, rtol=1e-15)
            return "immediate", 0.0, 0.0, math.exp(L)

        j = above[-1]
        if j == len(grid) - 1:
            t1 = p.T
        else:
            def g1(t):
                lev = float(self.level(it, M, t)[0])
                return self.phi_stop(it, lev, t, prev_breaks) - M
            lo_t = grid[j]
            t1 = brentq(g1, lo_t, grid[j + 1], xtol=1e-14, rtol=1e-15) if g1(lo_t) > 0 else lo_t

        if gap[0] <= 0:
            t0 = 0.0
        else:
            cross = np.flatnonzero(gap <= 0)
            if len(cross) == 0:
                return "none", math.nan, math.nan, p.y
            k = cross[0]

            def g0(t):
                return log_y - p.beta * t - math.log(float(self.level(it, M, t)[0]))
            t0 = brentq(g0, grid[k - 1], grid[k], xtol=1e-14, rtol=1e-15)
        if t0 > t1:
            return "none", math.nan, math.nan, p.y
        return "interval", t0, t1, math.nan

    def path(self, it: _Iterate, M: float, regime, t0, t1, level) -> SatisfactionPath:
        p = self.params
        beta, y = p.beta, p.y
        if regime == "none":
            evaluator = lambda t, left: y * np.exp(-beta * np.asarray(t, dtype=float))
            return SatisfactionPath(p.grid, evaluator, beta, (), "picard-none")
        if regime == "immediate":
            def evaluator(t, left):
                t = np.asarray(t, dtype=float)
                pre = (t <= 0) if left else (t < 0)
                return np.where(pre, y, level * np.exp(-beta * t))
            return SatisfactionPath(p.grid, evaluator, beta, (), "picard-immediate")
        I1 = float(self.level(it, M, t1)[0])

        def evaluator(t, left):
            t = np.asarray(t, dtype=float)
            flat = np.atleast_1d(t)
            out = y * np.exp(-beta * flat)
            on = (flat >= t0) & (flat <= t1)
            if left and t0 == 0.0:
                on &= flat > 0
            if on.any():
                out[on] = self.level(it, M, flat[on])
            after = flat > t1
            out[after] = I1 * np.exp(-beta * (flat[after] - t1))
            return out.reshape(t.shape)

        return SatisfactionPath(p.grid, evaluator, beta, (t0, t1), "picard")

    def plan(self, it: _Iterate, M, regime, t0, t1, level) -> tuple[ConsumptionPlan, float, float]:
        """Plan (cell rates carry exact present values), its gulp and its cost."""
        p = self.params
        if regime == "none":
            return ConsumptionPlan.empty(p), 0.0, 0.0
        if regime == "immediate":
            gulp = (level - p.y) / p.beta
            return ConsumptionPlan.from_atoms(p, [(0.0, gulp)]), gulp, gulp
        g = p.grid
        lo = np.clip(g[:-1], t0, t1)
        hi = np.clip(g[1:], t0, t1)
        live = hi > lo
        a, b = lo[live], hi[live]
        x, wts = _GL8
        s = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * x[None, :]
        Is = self.level(it, M, s.ravel()).reshape(s.shape)
        Ia = self.level(it, M, a)
        Ib = self.level(it, M, b)
        # int e^{-rt} dC with dC = dY/beta + Y dt, by parts
        int_Y = 0.5 * (b - a) * np.sum(wts * np.exp(-p.r * s) * Is, axis=1)
        pv = (np.exp(-p.r * b) * Ib - np.exp(-p.r * a) * Ia) / p.beta + (p.r / p.beta + 1.0) * int_Y
        pv_all = np.zeros(p.grid_n)
        pv_all[live] = np.maximum(pv, 0.0)
        rate = pv_all / cell_discounts(p)
        gulp = 0.0
        if t0 == 0.0:
            gulp = max(float(Ia[0]) - p.y, 0.0) / p.beta if len(Ia) else 0.0
        plan = ConsumptionPlan(p.T, p.grid_n, rate, [0.0], [gulp])
        return plan, gulp, gulp + float(pv_all.sum())


def _picard(prob: _Problem, M: float, max_n: int, tol: float, start: _Iterate | None = None):
    it = start or prob.zero_iterate()
    history = []
    regime, t0, t1, level = "none", math.nan, math.nan, prob.params.y
    for n in range(1, max_n + 1):
        regime, t0, t1, level = prob.step(it, M)
        Y = prob.path(it, M, regime, t0, t1, level)
        sol = _solve(Y, prob.spec, prob.params, gradient=True)
        delta = float(np.max(np.abs(sol.z - it.sol.z)))
        history.append(PicardStep(n, t0, t1, regime, delta))
        log.debug("picard %s", history[-1].to_dict())
        prev, it = it, _Iterate(sol)
        it.breaks = tuple(b for b in (t0, t1) if np.isfinite(b))
        it.prev = prev
        it.structure = (regime, t0, t1, level)
        if delta < tol:
            return it, history, True
    return it, history, False


def picard_iterate(spec: FelicitySpec, params: MarketParams, M: float, max_n: int = 50,
                   tol: float = 1e-10) -> list[PicardStep]:
    """Run the Picard scheme for a fixed ordinal multiplier and return its history.

    Iteration ``n`` builds ``Y^(n)`` from ``(U^(n-1), E^(n-1))`` and solves
    ``U^(n)``; ``delta`` is the sup-norm change of the (ordinal) utility.
    """
    if not M > 0:
        raise DomainError("multiplier must be positive")
    prob = _Problem(spec, params)
    _, history, _ = _picard(prob, M, max_n, tol)
    return history


def _assemble(prob: _Problem, M: float, it: _Iterate, history, converged: bool,
              tolerances: Tolerances, budget_target: float | None) -> TripleSolution:
    p = prob.params
    regime, t0, t1, level = it.structure
    # the plan comes from the Picard map applied to the converged iterate
    plan, gulp, cost = prob.plan(it.prev, M, regime, t0, t1, level)
    if budget_target is not None and cost > 0:
        # remove the root-finder's last rounding so the budget is exact
        scale = budget_target / cost
        plan, gulp, cost = plan.scaled(scale), gulp * scale, budget_target
    report = verify_kkt(plan, prob.spec, p.replace(w=cost), tolerances) if cost > 0 else None
    sol = _solve(satisfaction(plan, p), prob.spec, p, gradient=True)
    verified = bool(converged and (report is None or report.ok))
    return TripleSolution(M=M, M_utility=M * sol.slope0, t0=t0, t1=t1, regime=regime,
                          gulp=gulp, plan=plan, Y_path=sol.Y, U_path=sol.utility_path(),
                          Phi_path=sol.gradient_path(), verified=verified, budget=cost,
                          history=history, report=report)


def solve_for_multiplier(spec: FelicitySpec, params: MarketParams, M: float,
                         max_n: int = 50, tol: float = 1e-10,
                         tolerances: Tolerances | None = None) -> TripleSolution:
    """Triple ``(t0, t1, C^M)`` for an ordinal multiplier ``M`` by Picard iteration."""
    if not M > 0:
        raise DomainError("multiplier must be positive")
    prob = _Problem(spec, params)
    it, history, converged = _picard(prob, M, max_n, tol)
    if not converged:
        raise ConvergenceError("Picard iteration did not converge",
                               diagnostics={"history": [h.to_dict() for h in history]})
    return _assemble(prob, M, it, history, converged, tolerances or Tolerances(), None)


def solve(spec: FelicitySpec, params: MarketParams, max_n: int = 50, tol: float = 1e-10,
          tolerances: Tolerances | None = None) -> TripleSolution:
    """Budget-exact optimal plan: root-find the multiplier with ``cost(M) = w``."""
    prob = _Problem(spec, params)
    w = params.w
    tolerances = tolerances or Tolerances()
    if w == 0:
        it = prob.zero_iterate()
        it.structure = ("none", math.nan, math.nan, params.y)
        it.prev = it
        return _assemble(prob, math.inf, it, [], True, tolerances, None)

    evals: dict[float, tuple] = {}

    def run(L):
        if L not in evals:
            M = math.exp(L)
            # warm start from the nearest multiplier tried so far; the fixed point
            # does not depend on the starting iterate
            near = min(evals, key=lambda k: abs(k - L), default=None)
            start = None if near is None else evals[near][1]
            it, history, ok = _picard(prob, M, max_n, tol, start)
            if not ok:
                raise ConvergenceError("Picard iteration did not converge",
                                       diagnostics={"M": M,
                                                    "history": [h.to_dict() for h in history]})
            regime, t0, t1, level = it.structure
            _, _, cost = prob.plan(it.prev, M, regime, t0, t1, level)
            evals[L] = (cost, it, history)
        return evals[L][0] - w

    M0 = float(np.max(prob.zero_iterate().sol.phi_ordinal))
    if not (M0 > 0 and np.isfinite(M0)):
        raise ConvergenceError("zero-plan gradient does not give a starting multiplier",
                               diagnostics={"M0": M0})
    L_hi = math.log(M0)
    for _ in range(200):
        if run(L_hi) < 0:
            break
        L_hi += 1.0
    else:
        raise ConvergenceError("no multiplier leaves wealth unspent", diagnostics={"M0": M0})
    L_lo = L_hi - 1.0
    for _ in range(400):
        if run(L_lo) > 0:
            break
        L_lo -= 1.0
    else:
        raise ConvergenceError("budget never reaches w; try the immediate-consumption regime",
                               diagnostics={"M0": M0, "last_M": math.exp(L_lo)})
    L = brentq(run, L_lo, L_hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    run(L)

    pts = sorted(evals.items())
    costs = np.array([c for _, (c, _, _) in pts])
    if np.any(np.diff(costs) > 1e-9 * max(w, 1.0)):
        log.warning("budget is not monotone in the multiplier over the bracket")
        raise ConvergenceError("budget is not monotone in the multiplier",
                               diagnostics={"M": [math.exp(k) for k, _ in pts],
                                            "cost": costs.tolist()})
    cost, it, history = evals[L]
    return _assemble(prob, math.exp(L), it, history, True, tolerances, w)
