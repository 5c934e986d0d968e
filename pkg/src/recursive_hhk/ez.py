"""Closed-form optimal plan for the Epstein-Zin felicity.

With ``a = 1 - 1/alpha`` the solution is governed by a handful of rates:

    lam   = r + beta/alpha - delta     (positive for admissible parameters)
    kappa = alpha (delta - r)          (decay of Y while consuming)
    nu    = delta - a r                (alpha*nu = r + kappa)
    D     = delta + beta a

Consumption stops at ``tau_bar = T - log(1 + D/lam)/D``.  While consuming,
``Y_t = Y_s e^{-kappa (t - s)}`` and the rate is ``(alpha lam / beta) Y_t``.
If wealth exceeds ``k_star * y`` there is an initial gulp, otherwise the
investor waits until ``tau_low`` when ``y e^{-beta t}`` meets the consumption
path.  The plan does not depend on ``rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError
from .market import ConsumptionPlan, MarketParams, exp_integral, price_functional
from .paths import SatisfactionPath
from .preferences import EZParams, validate

__all__ = ["EZSolution", "ez_rates", "tau_bar", "k_star", "solve_ez", "ez_budget"]


@dataclass(frozen=True)
class EZRates:
    lam: float
    kappa: float
    nu: float
    D: float


def ez_rates(params: MarketParams, ez: EZParams) -> EZRates:
    a = ez.a
    return EZRates(lam=params.r + params.beta / ez.alpha - ez.delta,
                   kappa=ez.alpha * (ez.delta - params.r),
                   nu=ez.delta - a * params.r,
                   D=ez.delta + params.beta * a)


def tau_bar(params: MarketParams, ez: EZParams) -> float:
    """Last consumption time.  May be ``<= 0``, which means consume everything at once."""
    k = ez_rates(params, ez)
    if not k.lam > 0:
        return -math.inf
    x = k.D / k.lam
    if abs(x) < 1e-8:
        # log1p(x)/D -> 1/lam (= 1/(r+beta) on the boundary D = 0)
        return params.T - (1.0 - 0.5 * x + x * x / 3.0) / k.lam
    return params.T - math.log1p(x) / k.D


def k_star(params: MarketParams, ez: EZParams, tb: float | None = None) -> float:
    """Wealth-to-satisfaction threshold separating the gulp and wait cases."""
    if tb is None:
        tb = tau_bar(params, ez)
    k = ez_rates(params, ez)
    x = ez.alpha * k.nu * tb
    # (lam/(beta nu)) (1 - e^{-alpha nu tb}), continuous through nu = 0
    frac = tb if abs(x) < 1e-12 else -math.expm1(-x) / (ez.alpha * k.nu)
    return ez.alpha * k.lam / params.beta * frac


def ez_budget(K: float, params: MarketParams, ez: EZParams, tb: float) -> float:
    """Present value of the wait-case plan with constant ``K`` (decreasing in ``K``)."""
    k = ez_rates(params, ez)
    t_lo = (math.log(K) + math.log(params.y) / ez.alpha) / k.lam
    t_lo = min(max(t_lo, 0.0), tb)
    scale = ez.alpha * k.lam / params.beta * K ** (-ez.alpha)
    return scale * float(exp_integral(ez.alpha * k.nu, t_lo, tb))


@dataclass(frozen=True)
class EZSolution:
    """Optimal Epstein-Zin plan and the quantities that characterize it.

    ``case`` is ``"gulp"``, ``"wait"`` or ``"immediate"``.  ``K_star`` and
    ``M_star = beta K_star / (r + beta)`` describe the consumption path
    ``Y_t = K_star^{-alpha} e^{-kappa t}``; they are reported in the gulp case
    as well.  ``multiplier`` is the Lagrange multiplier in utility units.
    """

    case: str
    tau_bar: float
    tau_low: float
    k_star: float
    K_star: float
    M_star: float
    gulp_size: float
    plan: ConsumptionPlan
    Y_path: SatisfactionPath
    U0: float
    multiplier: float
    params: MarketParams
    ez: EZParams

    def rate_at(self, t):
        """Closed-form consumption rate at ``t`` (zero off the consumption interval)."""
        t = np.asarray(t, dtype=float)
        if self.case == "immediate":
            return np.zeros_like(t)
        k = ez_rates(self.params, self.ez)
        start = 0.0 if self.case == "gulp" else self.tau_low
        on = (t >= start) & (t <= self.tau_bar)
        c = self.ez.alpha * k.lam / self.params.beta * self.K_star ** (-self.ez.alpha)
        return np.where(on, c * np.exp(-k.kappa * t), 0.0)

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "tau_bar": self.tau_bar,
            "tau_low": self.tau_low,
            "k_star": self.k_star,
            "K_star": self.K_star,
            "M_star": self.M_star,
            "gulp_size": self.gulp_size,
            "U0": self.U0,
            "multiplier": self.multiplier,
            "market": self.params.to_dict(),
            "preferences": {"felicity": "epstein-zin", "delta": self.ez.delta,
                            "rho": self.ez.rho, "alpha": self.ez.alpha},
            "plan": self.plan.to_dict(),
        }


def _pieces_evaluator(pieces, params: MarketParams):
    """Y from ``(start, Y_start, decay)`` pieces; the last piece runs to T."""
    starts = np.array([p[0] for p in pieces])
    levels = np.array([p[1] for p in pieces])
    decays = np.array([p[2] for p in pieces])

    def evaluator(t, left):
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t)
        i = np.searchsorted(starts, flat, side="left" if left else "right") - 1
        pre = i < 0
        i = np.clip(i, 0, len(starts) - 1)
        out = levels[i] * np.exp(-decays[i] * (flat - starts[i]))
        out = np.where(pre, params.y * np.exp(-params.beta * flat), out)
        return out.reshape(t.shape)

    return evaluator


def _closed_form_J(pieces, ez: EZParams, T: float) -> float:
    """``int_0^T delta e^{-delta s} Y_s^a ds`` over piecewise-exponential Y."""
    a, d = ez.a, ez.delta
    total = 0.0
    ends = [p[0] for p in pieces[1:]] + [T]
    for (s, ys, k), e in zip(pieces, ends):
        if e <= s:
            continue
        total += d * ys ** a * math.exp(-d * s) * float(exp_integral(d + a * k, 0.0, e - s))
    return total


def _rate_cells(params: MarketParams, coef: float, kappa: float, start: float, stop: float,
                budget: float) -> np.ndarray:
    """Cell rates for ``coef e^{-kappa t}`` on [start, stop].

    Each cell carries the exact present value of the rate over its overlap
    with [start, stop] (``kappa + r = alpha nu``), so the budget is exact; the
    final rescale by ``budget`` only removes rounding.
    """
    g = params.grid
    lo = np.clip(g[:-1], start, stop)
    hi = np.clip(g[1:], start, stop)
    gain = exp_integral(kappa + params.r, lo, hi)
    rate = coef * gain / exp_integral(params.r, g[:-1], g[1:])
    rate = np.where(hi > lo, rate, 0.0)
    pv = float(np.dot(rate, exp_integral(params.r, g[:-1], g[1:])))
    return rate * (budget / pv) if pv > 0 else rate


def solve_ez(params: MarketParams, ez: EZParams) -> EZSolution:
    """Optimal plan for the Epstein-Zin felicity on the market grid."""
    bad = validate(ez)
    if bad:
        raise DomainError("inadmissible Epstein-Zin parameters: " + ", ".join(bad))
    beta, y, w, T = params.beta, params.y, params.w, params.T
    k = ez_rates(params, ez)
    tb = tau_bar(params, ez)
    alpha = ez.alpha

    if not tb > 0 or not k.lam > 0:
        plan = ConsumptionPlan.from_atoms(params, [(0.0, w)])
        pieces = [(0.0, y + beta * w, beta)]
        return _finish("immediate", tb, math.nan, math.nan, math.nan, w, plan, pieces,
                       params, ez)

    ks = k_star(params, ez, tb)
    coef_y = alpha * k.lam / beta  # rate per unit of satisfaction while consuming
    if w >= ks * y:
        gulp = (w - ks * y) / (1.0 + beta * ks)
        Y0 = (y + beta * w) / (1.0 + beta * ks)
        K = Y0 ** (-1.0 / alpha)
        t_lo = 0.0
        rate = _rate_cells(params, coef_y * Y0, k.kappa, 0.0, tb, w - gulp)
        plan = ConsumptionPlan(T, params.grid_n, rate, [0.0], [gulp])
        pieces = [(0.0, Y0, k.kappa), (tb, Y0 * math.exp(-k.kappa * tb), beta)]
        case = "gulp"
    else:
        L_lo = -math.log(y) / alpha                       # tau_low = 0: budget = k* y
        L_hi = (alpha * k.lam * tb - math.log(y)) / alpha  # tau_low = tau_bar: budget = 0
        fn = lambda L: ez_budget(math.exp(L), params, ez, tb) - w
        try:
            L = brentq(fn, L_lo, L_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        except ValueError as exc:
            trace = {"L_lo": L_lo, "f_lo": fn(L_lo), "L_hi": L_hi, "f_hi": fn(L_hi)}
            raise ConvergenceError("could not bracket K_star", diagnostics=trace) from exc
        K = math.exp(L)
        t_lo = (L + math.log(y) / alpha) / k.lam
        if not 0.0 <= t_lo <= tb:
            raise ConvergenceError("waiting time outside [0, tau_bar]",
                                   diagnostics={"tau_low": t_lo, "tau_bar": tb})
        gulp = 0.0
        YK = K ** (-alpha)
        rate = _rate_cells(params, coef_y * YK, k.kappa, t_lo, tb, w)
        plan = ConsumptionPlan(T, params.grid_n, rate)
        pieces = [(0.0, y, beta), (t_lo, YK * math.exp(-k.kappa * t_lo), k.kappa),
                  (tb, YK * math.exp(-k.kappa * tb), beta)]
        case = "wait"
    return _finish(case, tb, t_lo, ks, K, gulp, plan, pieces, params, ez)


def _finish(case, tb, t_lo, ks, K, gulp, plan, pieces, params, ez) -> EZSolution:
    Y_path = SatisfactionPath(params.grid, _pieces_evaluator(pieces, params), params.beta,
                              [p[0] for p in pieces], provenance=f"ez-{case}")
    if ez.delta > 0:
        J = _closed_form_J(pieces, ez, params.T)
        with np.errstate(divide="ignore"):
            U0 = float(J ** ez.psi_ez / (1.0 - ez.rho))
    else:
        J, U0 = math.nan, 0.0
    M_star = params.beta * K / (params.r + params.beta) if np.isfinite(K) else math.nan
    # d U0 / d w = delta M_star J^{psi - 1}
    mult = ez.delta * M_star * J ** (ez.psi_ez - 1.0) if ez.delta > 0 else math.nan
    budget = price_functional(plan, params)
    if params.w > 0 and abs(budget - params.w) > 1e-9 * params.w:
        raise ConvergenceError("closed-form plan misses the budget",
                               diagnostics={"budget": budget, "w": params.w})
    return EZSolution(case, tb, t_lo, ks, K, M_star, gulp, plan, Y_path, U0, mult, params, ez)
