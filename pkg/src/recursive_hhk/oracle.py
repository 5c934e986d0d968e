"""Brute-force maximizers used as independent ground truth.

``exhaustive_search`` enumerates every atom-only plan on a few time points
whose present values are multiples of a fixed quantum.  Utilities of all
candidates are integrated together (RK4 vectorized over the batch).

``projected_gradient_ascent`` maximizes ``U_0`` over plans made of a gulp at
0 plus cell rates.  In present-value coordinates (mass of each piece times
its discount) the budget set is a scaled simplex and the partial derivatives
are price-weighted cell averages of the utility gradient; steps use FISTA
with backtracking and an exact simplex projection.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

from .errors import DomainError
from .market import ConsumptionPlan, MarketParams, cell_discounts
from .paths import _backward, _knots, evaluate, utility_of
from .preferences import FelicitySpec, ordinal_form

__all__ = [
    "DiscretizedProblem",
    "OracleResult",
    "exhaustive_search",
    "projected_gradient_ascent",
    "atom_plan_utilities",
    "project_simplex",
    "MAX_CANDIDATES",
]

MAX_CANDIDATES = 10_000_000


@dataclass(frozen=True)
class DiscretizedProblem:
    """Atom-only plans on ``times`` with present values in multiples of ``w / quanta``."""

    params: MarketParams
    spec: FelicitySpec
    times: tuple
    quanta: int

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if not 1 <= len(times) <= 6:
            raise DomainError("exhaustive mode allows 1 to 6 control points")
        if any(t < 0 or t > self.params.T for t in times):
            raise DomainError("control points must lie in [0, T]")
        if int(self.quanta) != self.quanta or self.quanta < 1:
            raise DomainError("quanta must be a positive integer")
        object.__setattr__(self, "times", times)

    @property
    def quantum(self) -> float:
        return self.params.w / self.quanta

    @property
    def n_candidates(self) -> int:
        n = len(self.times)
        return int(comb(self.quanta + n, n, exact=True))


@dataclass
class OracleResult:
    plan: ConsumptionPlan
    utility: float
    evaluations: int
    converged: bool = True
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"utility": self.utility, "evaluations": self.evaluations,
                "converged": self.converged, "plan": self.plan.to_dict()}


def atom_plan_utilities(times, masses, spec: FelicitySpec, params: MarketParams) -> np.ndarray:
    """``U_0`` for a batch of atom-only plans sharing atom ``times``.

    ``masses`` has shape ``(batch, len(times))``.
    """
    times = np.asarray(times, dtype=float)
    masses = np.atleast_2d(np.asarray(masses, dtype=float))
    form = ordinal_form(spec)
    beta, y = params.beta, params.y
    knots, _ = _knots(params.grid, times)
    a, b = knots[:-1], knots[1:]
    mid = 0.5 * (a + b)

    def kernel(t, left):
        hit = (times[None, :] < t[:, None]) if left else (times[None, :] <= t[:, None])
        return np.where(hit, beta * np.exp(-beta * np.abs(t[:, None] - times[None, :])), 0.0)

    stage = []
    for t, left in ((b, True), (mid, False), (a, False)):
        stage.append((y * np.exp(-beta * t), kernel(t, left)))
    out = np.empty(len(masses))
    chunk = max(1, 4_000_000 // max(len(knots), 1))
    for s in range(0, len(masses), chunk):
        m = masses[s:s + chunk]
        ys = [base[:, None] + K @ m.T for base, K in stage]
        z, _, _ = _backward(form.generator, beta, knots, ys[0], ys[1], ys[2], form.terminal,
                            gradient=False)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[s:s + chunk] = form.to_utility(z[0])
    return out


def _compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``."""
    rows = []
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        edges = (-1,) + bars + (total + parts - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(parts)])
    return np.array(rows, dtype=float).reshape(-1, parts)


def exhaustive_search(prob: DiscretizedProblem) -> OracleResult:
    """Best quantized atom-only plan (spending at most ``w`` in present value)."""
    if prob.n_candidates > MAX_CANDIDATES:
        raise DomainError(f"{prob.n_candidates} candidates exceed the limit of {MAX_CANDIDATES}")
    p = prob.params
    times = np.array(prob.times)
    n = len(times)
    if p.w == 0:
        plan = ConsumptionPlan.empty(p)
        return OracleResult(plan, utility_of(plan, prob.spec, p), 1)
    # one extra slot holds unspent quanta
    counts = _compositions(prob.quanta, n + 1)[:, :n]
    masses = counts * prob.quantum * np.exp(p.r * times)[None, :]
    utils = atom_plan_utilities(times, masses, prob.spec, p)
    best = int(np.nanargmax(utils))
    plan = ConsumptionPlan.from_atoms(p, zip(times, masses[best]))
    return OracleResult(plan, float(utils[best]), len(utils))


def project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0 : sum x = total}``."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    k = np.arange(1, len(v) + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _to_plan(x: np.ndarray, params: MarketParams, disc: np.ndarray) -> ConsumptionPlan:
    return ConsumptionPlan(params.T, params.grid_n, x[1:] / disc, [0.0], [x[0]])


def projected_gradient_ascent(params: MarketParams, spec: FelicitySpec, grid_n: int | None = None,
                              steps: int = 500, start: ConsumptionPlan | None = None,
                              seed: int | None = None, rtol: float = 1e-13) -> OracleResult:
    """Maximize ``U_0`` over a gulp at 0 plus cell rates on ``grid_n`` cells.

    Starts from ``start``, from a random feasible plan when ``seed`` is given,
    or from the uniform present-value allocation.  Stops after ``steps``
    iterations or when ``rtol``-relative progress stalls for 25 iterations.
    """
    p = params if grid_n is None else params.replace(grid_n=grid_n)
    w = p.w
    disc = cell_discounts(p)
    if w == 0:
        plan = ConsumptionPlan.empty(p)
        return OracleResult(plan, utility_of(plan, spec, p), 1)
    if start is not None:
        start.check_grid(p)
        if np.any((start.atom_times > 0)):
            raise DomainError("start plan may only have an atom at t = 0")
        x = np.concatenate([[start.atom_masses.sum()], start.rate * disc])
        x = project_simplex(x, w)
    elif seed is not None:
        x = np.random.default_rng(seed).exponential(size=p.grid_n + 1)
        x *= w / x.sum()
    else:
        x = np.full(p.grid_n + 1, w / (p.grid_n + 1))

    # paths run on a grid twice as fine so every cell has a midpoint node and
    # d U / d x_i = int_cell gradV dt / disc_i comes from Simpson's rule
    fine = p.replace(grid_n=2 * p.grid_n)

    def value_and_grad(x):
        sol = evaluate(_to_plan(x, p, disc).refine(2), spec, fine)
        gv = sol.grad
        g = np.empty_like(x)
        g[0] = gv[0]
        g[1:] = p.h / 6.0 * (gv[:-2:2] + 4.0 * gv[1::2] + gv[2::2]) / disc
        return sol.U0, g

    def value(x):
        return utility_of(_to_plan(x, p, disc).refine(2), spec, fine)

    fx, _ = value_and_grad(x)
    best_x, best_f = x, fx
    yk, tk = x, 1.0
    step = None
    evals, stall, history = 1, 0, [fx]
    for _ in range(steps):
        fy, gy = value_and_grad(yk)
        evals += 1
        if step is None:
            step = 0.1 * w / max(np.max(np.abs(gy)), 1e-300)
        while True:
            cand = project_simplex(yk + step * gy, w)
            d = cand - yk
            fc = value(cand)
            evals += 1
            if fc >= fy + gy @ d - (d @ d) / (2 * step) or step < 1e-30:
                break
            step *= 0.5
        t_next = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
        if fc < fx:
            # adaptive restart: drop momentum when the objective goes down
            yk, tk = x, 1.0
            stall += 1
            step *= 1.5
            continue
        yk = cand + ((tk - 1) / t_next) * (cand - x)
        yk = project_simplex(yk, w)
        tk = t_next
        gain = fc - fx
        x, fx = cand, fc
        step *= 1.2
        history.append(fx)
        if fx > best_f:
            best_x, best_f = x, fx
        stall = stall + 1 if gain <= rtol * max(abs(fx), 1.0) else 0
        if stall >= 25:
            break
    converged = stall >= 25
    return OracleResult(_to_plan(best_x, p, disc), float(best_f), evals, converged, history)
