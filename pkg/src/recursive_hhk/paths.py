"""Satisfaction, utility and utility-gradient paths of a consumption plan.

The satisfaction level uses the exponential kernel

    Y_t = y e^{-beta t} + beta * int_0^t e^{-beta (t-s)} dC_s,

which is evaluated exactly for atoms plus piecewise-constant rates.  The
utility solves the backward ODE ``dU/dt = -f(t, Y_t, U_t)``, ``U_T = 0``, by
classical RK4 on the plan grid with cells split at atom times (``Y`` jumps
there, ``U`` does not).

The gradient

    gradV(t) = int_t^T exp(int_0^s f_u) f_y beta e^{-beta (s-t)} ds

is obtained from two linear ODEs integrated alongside ``U`` with the same RK4
stages: ``q_t = int_t^T f_u`` (so the integrating factor is
``exp(q_0 - q_t)``, kept in log form) and

    G' = (beta - f_u) G - beta f_y,   G_T = 0,

which gives ``gradV(t) = exp(q_0 - q_t) * G_t``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import FelicityDomainError
from .market import ConsumptionPlan, MarketParams, PathSample, cumulative
from .preferences import FelicitySpec, ordinal_form

__all__ = [
    "SatisfactionPath",
    "UtilityPath",
    "GradientPath",
    "PathSolution",
    "satisfaction",
    "solve_utility",
    "utility_gradient",
    "evaluate",
    "utility_of",
    "write_paths_csv",
]


class SatisfactionPath(PathSample):
    """Satisfaction sampled on the grid, plus an exact evaluator between nodes.

    ``at(t, left=True)`` returns the left limit ``Y_{t-}``; the default is the
    right-continuous value.  ``breakpoints`` lists interior times where ``Y``
    jumps or has a kink that the utility integrator must not step across.
    """

    def __init__(self, times, evaluator, beta, breakpoints=(), provenance=""):
        times = np.asarray(times, dtype=float)
        super().__init__(times, evaluator(times, False))
        object.__setattr__(self, "_evaluator", evaluator)
        object.__setattr__(self, "beta", float(beta))
        object.__setattr__(self, "breakpoints", np.unique(np.asarray(breakpoints, dtype=float)))
        object.__setattr__(self, "provenance", provenance)

    def at(self, t, left: bool = False):
        return self._evaluator(np.asarray(t, dtype=float), left)

    def with_jump(self, time: float, mass: float) -> "SatisfactionPath":
        """Path after adding a (possibly negative) point mass of consumption at ``time``."""
        beta, base = self.beta, self._evaluator

        def evaluator(t, left):
            t = np.asarray(t, dtype=float)
            hit = (t > time) if left else (t >= time)
            return base(t, left) + np.where(hit, beta * mass * np.exp(-beta * np.abs(t - time)), 0.0)

        return SatisfactionPath(self.times, evaluator, beta,
                                np.append(self.breakpoints, time), self.provenance)


@dataclass(frozen=True)
class UtilityPath(PathSample):
    """Utility on the grid.

    ``ordinal`` holds the solution in the felicity's ordinal coordinate; for
    specs without an ordinal form it equals ``values``.  The terminal utility
    is the limit of the ordinal map at the terminal condition, which is
    ``+inf`` for Epstein-Zin parameters with a negative exponent.
    """

    ordinal: np.ndarray = None


@dataclass(frozen=True)
class GradientPath(PathSample):
    """``gradV(C)(t)`` on the grid with its price-normalized version ``Phi``."""

    phi: np.ndarray = None
    ordinal_scale: float = 1.0


@dataclass
class PathSolution:
    """Everything one backward pass produces, on the plan grid."""

    times: np.ndarray
    Y: SatisfactionPath
    z: np.ndarray          # utility in ordinal coordinates
    U: np.ndarray          # utility
    log_E: np.ndarray      # log integrating factor int_0^t f_u (ordinal)
    G: np.ndarray
    dz: np.ndarray         # dz/dt at grid nodes (right limits)
    dlog_E: np.ndarray
    slope0: float          # du/dz at t = 0
    params: MarketParams

    @property
    def grad_ordinal(self) -> np.ndarray:
        return np.exp(self.log_E) * self.G

    @property
    def grad(self) -> np.ndarray:
        return self.grad_ordinal * self.slope0

    @property
    def phi(self) -> np.ndarray:
        return np.exp(self.params.r * self.times) * self.grad

    @property
    def phi_ordinal(self) -> np.ndarray:
        return np.exp(self.params.r * self.times) * self.grad_ordinal

    @property
    def U0(self) -> float:
        return float(self.U[0])

    def utility_path(self) -> UtilityPath:
        return UtilityPath(self.times, self.U, ordinal=self.z)

    def gradient_path(self) -> GradientPath:
        return GradientPath(self.times, self.grad, phi=self.phi, ordinal_scale=self.slope0)


def _plan_evaluator(plan: ConsumptionPlan, params: MarketParams):
    """Exact satisfaction of a plan and its values at grid nodes."""
    beta, n, grid = params.beta, params.grid_n, params.grid
    h = params.h
    decay = np.exp(-beta * h)
    rate = plan.rate
    s, m = plan.atom_times, plan.atom_masses
    inputs = np.zeros(n + 1)
    inputs[1:] = rate * (-np.expm1(-beta * h))
    inputs[0] = params.y
    if len(s):
        # atom in (t_{j-1}, t_j] feeds node j
        j = np.searchsorted(grid, s, side="left")
        np.add.at(inputs, j, beta * m * np.exp(-beta * (grid[j] - s)))
    y_nodes = lfilter([1.0], [1.0, -decay], inputs)

    def evaluator(t, left):
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t)
        i = np.searchsorted(grid, flat, side="left" if left else "right") - 1
        before_start = i < 0
        i = np.clip(i, 0, n - 1)
        tau = flat - grid[i]
        out = y_nodes[i] * np.exp(-beta * tau) + rate[i] * (-np.expm1(-beta * tau))
        if len(s):
            lo = grid[i][:, None]
            tt = flat[:, None]
            inside = (s[None, :] > lo) & ((s[None, :] < tt) if left else (s[None, :] <= tt))
            contrib = beta * m[None, :] * np.exp(-beta * np.clip(tt - s[None, :], 0.0, None))
            out = out + np.sum(np.where(inside, contrib, 0.0), axis=1)
        out = np.where(before_start, params.y * np.exp(-beta * flat), out)
        return out.reshape(t.shape)

    return evaluator


def satisfaction(plan: ConsumptionPlan, params: MarketParams) -> SatisfactionPath:
    """Satisfaction path ``Y^C`` of a plan, right-continuous at atoms."""
    plan.check_grid(params)
    interior = plan.atom_times[(plan.atom_times > 0) & (plan.atom_times < params.T)]
    return SatisfactionPath(params.grid, _plan_evaluator(plan, params), params.beta,
                            interior, provenance="plan")


def _knots(times: np.ndarray, breakpoints: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    T = times[-1]
    extra = breakpoints[(breakpoints > 0) & (breakpoints < T)]
    knots = np.unique(np.concatenate([times, extra]))
    return knots, np.searchsorted(knots, times)


def _stage_values(ypath: SatisfactionPath, knots: np.ndarray):
    a, b = knots[:-1], knots[1:]
    mid = 0.5 * (a + b)
    return ypath.at(b, left=True), ypath.at(mid), ypath.at(a)


def _backward(gen: FelicitySpec, beta: float, knots, y_b, y_m, y_a, z_T,
              gradient: bool = True):
    """RK4 sweep from ``knots[-1]`` down to ``knots[0]``.

    ``y_*`` hold satisfaction at the right end (left limit), midpoint and
    left end (right limit) of every segment; they may carry a trailing batch
    axis, in which case ``z`` is solved for every batch member at once.
    """
    nseg = len(knots) - 1
    a, b = knots[:-1], knots[1:]
    mid = 0.5 * (a + b)
    hs = b - a
    z = np.empty((nseg + 1,) + np.shape(y_a)[1:])
    z[-1] = z_T
    if gradient:
        zs = np.empty((4,) + z.shape[:1] + z.shape[1:])[:, :-1]
    F = gen.f
    k = nseg - 1
    try:
        for k in range(nseg - 1, -1, -1):
            h, zb = hs[k], z[k + 1]
            k1 = -F(b[k], y_b[k], zb)
            z2 = zb - 0.5 * h * k1
            k2 = -F(mid[k], y_m[k], z2)
            z3 = zb - 0.5 * h * k2
            k3 = -F(mid[k], y_m[k], z3)
            z4 = zb - h * k3
            k4 = -F(a[k], y_a[k], z4)
            z[k] = zb - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if gradient:
                zs[0, k], zs[1, k], zs[2, k], zs[3, k] = zb, z2, z3, z4
    except FelicityDomainError as exc:
        raise FelicityDomainError(str(exc), time=float(b[k])) from exc
    if not gradient:
        return z, None, None
    if z.ndim > 1:
        raise ValueError("gradient is only available for a single path")
    ts = (b, mid, mid, a)
    ys = (y_b, y_m, y_m, y_a)
    A = np.array([gen.f_u(ts[i], ys[i], zs[i]) for i in range(4)])
    B = np.array([gen.f_y(ts[i], ys[i], zs[i]) for i in range(4)])
    q = np.zeros(nseg + 1)
    q[:-1] = np.cumsum((hs / 6.0 * (A[0] + 2 * A[1] + 2 * A[2] + A[3]))[::-1])[::-1]
    G = np.zeros(nseg + 1)
    g = 0.0
    Al, Bl = A.T.tolist(), B.T.tolist()
    hl = hs.tolist()
    for k in range(nseg - 1, -1, -1):
        A1, A2, A3, A4 = Al[k]
        B1, B2, B3, B4 = Bl[k]
        h = hl[k]
        k1 = (beta - A1) * g - beta * B1
        k2 = (beta - A2) * (g - 0.5 * h * k1) - beta * B2
        k3 = (beta - A3) * (g - 0.5 * h * k2) - beta * B3
        k4 = (beta - A4) * (g - h * k3) - beta * B4
        g = g - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        G[k] = g
    return z, q, G


def _solve(ypath: SatisfactionPath, spec: FelicitySpec, params: MarketParams,
           gradient: bool = True) -> PathSolution:
    form = ordinal_form(spec)
    gen = form.generator
    times = ypath.times
    knots, at_grid = _knots(times, ypath.breakpoints)
    y_b, y_m, y_a = _stage_values(ypath, knots)
    z, q, G = _backward(gen, params.beta, knots, y_b, y_m, y_a, form.terminal, gradient)
    zg = z[at_grid]
    with np.errstate(divide="ignore", invalid="ignore"):
        U = form.to_utility(zg)
    slope0 = float(form.slope(zg[0]))
    if not gradient:
        return PathSolution(times, ypath, zg, U, None, None, None, None, slope0, params)
    log_E = q[0] - q[at_grid]
    yg = ypath.values
    dz = -gen.f(times, yg, zg)
    dlog_E = gen.f_u(times, yg, zg)
    return PathSolution(times, ypath, zg, U, log_E, G[at_grid], dz, dlog_E, slope0, params)


def solve_utility(Y: SatisfactionPath, spec: FelicitySpec, params: MarketParams | None = None
                  ) -> UtilityPath:
    """Backward RK4 solution of ``dU/dt = -f(t, Y_t, U_t)``, ``U_T = 0``, on Y's grid."""
    if params is None:
        params = _params_from_path(Y)
    return _solve(Y, spec, params, gradient=False).utility_path()


def _params_from_path(Y: SatisfactionPath) -> MarketParams:
    # r and w do not enter the utility integration
    return MarketParams(T=float(Y.times[-1]), r=0.0, beta=Y.beta, y=float(Y.at(0.0, left=True)),
                        w=0.0, grid_n=len(Y.times) - 1)


def evaluate(plan: ConsumptionPlan, spec: FelicitySpec, params: MarketParams) -> PathSolution:
    """Satisfaction, utility and gradient of a plan in one pass."""
    return _solve(satisfaction(plan, params), spec, params, gradient=True)


def utility_gradient(plan: ConsumptionPlan, spec: FelicitySpec, params: MarketParams
                     ) -> GradientPath:
    """Utility gradient ``gradV(C)`` and ``Phi_t = e^{rt} gradV(C)(t)`` on the grid."""
    return evaluate(plan, spec, params).gradient_path()


def utility_of(plan: ConsumptionPlan, spec: FelicitySpec, params: MarketParams) -> float:
    """``U_0`` of a plan."""
    return float(_solve(satisfaction(plan, params), spec, params, gradient=False).U[0])


def write_paths_csv(path, plan: ConsumptionPlan, sol: PathSolution) -> None:
    """CSV with columns ``t, C_cum, Y, U, gradV, Phi`` at 17 significant digits."""
    cum = cumulative(plan, np.minimum(sol.times, plan.T))
    rows = zip(sol.times, cum, sol.Y.values, sol.U, sol.grad, sol.phi)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "C_cum", "Y", "U", "gradV", "Phi"])
        for row in rows:
            out.writerow([f"{v:.17g}" for v in row])
