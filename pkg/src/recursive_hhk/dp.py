"""Value iteration on the state (t, wealth X, satisfaction Y).

Iterate ``n`` solves a control problem whose running reward uses the
previous iterate for the utility argument,

    U^(n)(s, x, y) = sup_C int_s^T f(r, Y_r, U^(n-1)(r, X_r, Y_r)) dr,   U^(0) = 0,

with ``dX = r X dt - dC`` and ``dY = beta (dC - Y dt)``.  Each iterate is a
finite-horizon dynamic program solved backward over a uniform time grid with
a discrete control set: an optional gulp (a fraction of current wealth) at
the start of a step, then a constant rate over the step.  Values off the
state grid come from bilinear interpolation.  Like the other solvers this
works in the felicity's ordinal utility coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError
from .market import ConsumptionPlan, MarketParams
from .preferences import FelicitySpec, ordinal_form

__all__ = ["GridSpec", "ValueGrid", "DPPolicy", "DPResult", "make_grid", "bellman_step",
           "iterate_to_convergence", "extract_policy_plan", "GULP_FRACTIONS"]

GULP_FRACTIONS = (0.0, 0.25, 0.5, 1.0)


@dataclass(frozen=True)
class GridSpec:
    n_t: int = 50
    n_x: int = 40
    n_y: int = 40
    rate_levels: int = 16

    def doubled(self) -> "GridSpec":
        return GridSpec(2 * self.n_t, 2 * self.n_x, 2 * self.n_y, self.rate_levels + 1)


@dataclass
class ValueGrid:
    """Iterate ``n`` of the value (ordinal coordinate) on ``times x xs x ys``."""

    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    n: int = 0

    def interpolator(self, k: int):
        return RegularGridInterpolator((self.xs, self.ys), self.values[k], method="linear",
                                       bounds_error=False, fill_value=None)

    def at(self, k: int, x, y):
        x = np.clip(x, self.xs[0], self.xs[-1])
        y = np.clip(y, self.ys[0], self.ys[-1])
        return self.interpolator(k)(np.stack([np.ravel(x), np.ravel(y)], axis=-1)).reshape(
            np.shape(x))


@dataclass
class DPPolicy:
    """Chosen gulp fraction and rate for every grid state and time step."""

    gulp_fraction: np.ndarray
    rate: np.ndarray


@dataclass
class DPResult:
    grid: ValueGrid
    previous: ValueGrid
    policy: DPPolicy
    history: list
    converged: bool
    clamped: int
    spec: FelicitySpec = field(repr=False, default=None)
    params: MarketParams = field(repr=False, default=None)
    rates: np.ndarray = field(repr=False, default=None)

    def value_at(self, x: float, y: float, utility: bool = True) -> float:
        z = float(self.grid.at(0, np.array(x), np.array(y)))
        if not utility:
            return z
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(ordinal_form(self.spec).to_utility(z))


def make_grid(params: MarketParams, gs: GridSpec) -> ValueGrid:
    """State box covering every reachable (X, Y) with 5% margin."""
    grow = math.exp(params.r * params.T)
    x_max = 1.05 * params.w * grow if params.w > 0 else 1.0
    y_max = 1.05 * (params.y + params.beta * params.w * grow)
    y_min = 0.5 * params.y * math.exp(-params.beta * params.T)
    times = np.linspace(0.0, params.T, gs.n_t + 1)
    xs = np.linspace(0.0, x_max, gs.n_x)
    ys = np.linspace(y_min, y_max, gs.n_y)
    return ValueGrid(times, xs, ys, np.zeros((gs.n_t + 1, gs.n_x, gs.n_y)), 0)


def _rate_ladder(grid: ValueGrid, levels: int) -> np.ndarray:
    dt = grid.times[1] - grid.times[0]
    c_max = grid.xs[-1] / dt
    return np.concatenate([[0.0], c_max * 2.0 ** -np.arange(levels)])


class _Stepper:
    """Exact one-step propagation of (X, Y) under a gulp then a constant rate."""

    def __init__(self, params: MarketParams, dt: float, rates: np.ndarray):
        self.p = params
        self.dt = dt
        self.rates = rates
        r, b = params.r, params.beta
        self.grow = math.exp(r * dt)
        self.annuity = dt if r == 0 else math.expm1(r * dt) / r   # X' = x e^{r dt} - c annuity
        self.decay = math.exp(-b * dt)

    def controls(self, x, y):
        """All (post-gulp state, next state, gulp fraction, rate) for states x, y.

        Output arrays have shape ``state_shape + (n_gulp, n_rate)``.
        """
        f = np.asarray(GULP_FRACTIONS)[:, None]
        xg = x[..., None, None] * (1.0 - f)
        yg = y[..., None, None] + self.p.beta * f * x[..., None, None]
        afford = xg * self.grow / self.annuity
        c = np.minimum(self.rates[None, :], afford)
        x_next = np.maximum(xg * self.grow - c * self.annuity, 0.0)
        y_next = yg * self.decay + c * (1.0 - self.decay)
        shape = np.broadcast_shapes(xg.shape, c.shape)
        return (np.broadcast_to(xg, shape), np.broadcast_to(yg, shape), x_next, y_next, c)


def bellman_step(grid: ValueGrid, spec: FelicitySpec, params: MarketParams,
                 rates: np.ndarray, want_policy: bool = True):
    """Iterate ``n`` from iterate ``n - 1`` (``grid``) by one backward sweep in time.

    Returns ``(new_grid, policy, clamped)`` where ``clamped`` counts next
    states that fell outside the box and were projected onto it.
    """
    gen = ordinal_form(spec).generator
    terminal = ordinal_form(spec).terminal
    times = grid.times
    dt = times[1] - times[0]
    step = _Stepper(params, dt, rates)
    X, Yg = np.meshgrid(grid.xs, grid.ys, indexing="ij")
    xg, yg, xn, yn, c = step.controls(X, Yg)
    clamped = int(np.sum((xn > grid.xs[-1]) | (yn > grid.ys[-1]) | (yn < grid.ys[0])))
    new = np.empty_like(grid.values)
    new[-1] = terminal
    gulp_pol = np.zeros((len(times) - 1,) + X.shape)
    rate_pol = np.zeros_like(gulp_pol)
    n_rate = len(rates)
    for k in range(len(times) - 2, -1, -1):
        t0, t1 = times[k], times[k + 1]
        u_start = grid.at(k, xg, yg)
        u_end = grid.at(k + 1, xn, yn)
        reward = 0.5 * dt * (gen.f(t0, yg, u_start) + gen.f(t1, yn, u_end))
        cont = _interp_next(grid, new[k + 1], xn, yn)
        total = (reward + cont).reshape(X.shape + (-1,))
        best = np.argmax(total, axis=-1)
        new[k] = np.take_along_axis(total, best[..., None], axis=-1)[..., 0]
        if want_policy:
            gi, ri = np.divmod(best, n_rate)
            gulp_pol[k] = np.asarray(GULP_FRACTIONS)[gi]
            rate_pol[k] = np.take_along_axis(c.reshape(X.shape + (-1,)), best[..., None],
                                             axis=-1)[..., 0]
    return (ValueGrid(times, grid.xs, grid.ys, new, grid.n + 1),
            DPPolicy(gulp_pol, rate_pol), clamped)


def _interp_next(grid: ValueGrid, values: np.ndarray, x, y):
    x = np.clip(x, grid.xs[0], grid.xs[-1])
    y = np.clip(y, grid.ys[0], grid.ys[-1])
    f = RegularGridInterpolator((grid.xs, grid.ys), values, method="linear")
    return f(np.stack([x.ravel(), y.ravel()], axis=-1)).reshape(x.shape)


def iterate_to_convergence(spec: FelicitySpec, params: MarketParams,
                           grid_spec: GridSpec | None = None, tol: float = 1e-8,
                           n_max: int = 60, callback=None) -> DPResult:
    """Value iteration until the sup-norm change of successive iterates drops below ``tol``.

    ``history`` holds, per iterate, the sup-norm change and the value at the
    initial state ``(0, w, y)``.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    gs = grid_spec or GridSpec()
    grid = make_grid(params, gs)
    rates = _rate_ladder(grid, gs.rate_levels)
    history = []
    current, prev, policy, clamped, converged = grid, grid, None, 0, False
    for _ in range(n_max):
        new, policy, clamped = bellman_step(current, spec, params, rates)
        delta = float(np.max(np.abs(new.values - current.values)))
        entry = {"n": new.n, "delta": delta,
                 "value": float(new.at(0, np.array(params.w), np.array(params.y)))}
        history.append(entry)
        if callback is not None:
            callback(entry)
        prev, current = current, new
        if delta < tol:
            converged = True
            break
    # the final iterate's running reward used ``prev``; the rollout needs both
    return DPResult(current, prev, policy, history, converged, clamped, spec, params, rates)


def extract_policy_plan(result: DPResult, start: tuple[float, float] | None = None
                        ) -> ConsumptionPlan:
    """Greedy forward rollout from ``(0, x, y)`` into a plan on the DP time grid.

    At each step the control is re-optimized at the exact current state
    against the converged value, so the rollout never leaves ``X >= 0``.
    """
    p, grid = result.params, result.grid
    x, y = start if start is not None else (p.w, p.y)
    gen = ordinal_form(result.spec).generator
    times = grid.times
    dt = times[1] - times[0]
    step = _Stepper(p, dt, result.rates)
    rate = np.zeros(len(times) - 1)
    atoms = []
    ref = result.previous
    for k in range(len(times) - 1):
        xs_, ys_ = np.array([x]), np.array([y])
        xg, yg, xn, yn, c = step.controls(xs_, ys_)
        reward = 0.5 * dt * (gen.f(times[k], yg, ref.at(k, xg, yg))
                             + gen.f(times[k + 1], yn, ref.at(k + 1, xn, yn)))
        total = (reward + grid.at(k + 1, xn, yn)).ravel()
        best = int(np.argmax(total))
        gi, ri = divmod(best, len(result.rates))
        gulp = GULP_FRACTIONS[gi] * x
        if gulp > 0:
            atoms.append((times[k], gulp))
        rate[k] = float(c[(0,) + np.unravel_index(best, c.shape[1:])])
        x, y = float(xn.ravel()[best]), float(yn.ravel()[best])
    return ConsumptionPlan(p.T, len(times) - 1, rate, [a[0] for a in atoms],
                           [a[1] for a in atoms])
