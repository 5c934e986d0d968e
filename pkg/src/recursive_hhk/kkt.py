"""Kuhn-Tucker audit of a candidate optimal plan.

A budget-feasible plan is optimal iff, for some multiplier ``M > 0``,

    (i)   int psi dC = w,
    (ii)  gradV(C)(t) <= M psi_t for all t,
    (iii) int (gradV(C) - M psi) dC = 0.

With ``Phi_t = gradV(C)(t) / psi_t`` the multiplier is ``max Phi`` and the
plan must only consume where ``Phi`` attains it.  Everything is checked on
the plan grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FelicityDomainError
from .market import ConsumptionPlan, MarketParams, cell_discounts, price_functional
from .paths import GradientPath, evaluate
from .preferences import FelicitySpec

__all__ = ["Tolerances", "KKTReport", "extract_multiplier", "verify_kkt", "support_cells"]


@dataclass(frozen=True)
class Tolerances:
    budget: float = 1e-6
    phi: float = 1e-4
    comp: float = 1e-6


@dataclass
class KKTReport:
    """Outcome of :func:`verify_kkt`.  ``passed`` holds one flag per condition."""

    M: float
    budget_gap: float
    max_overshoot: float
    complementarity_gap: float
    support_interval: tuple[float, float] | None
    support_connected: bool
    support_flatness: float
    off_support_strict: bool
    passed: dict = field(default_factory=dict)
    inconclusive: bool = False
    message: str = ""
    times: np.ndarray | None = None
    phi: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return not self.inconclusive and all(self.passed.values())

    def to_dict(self, with_path: bool = True) -> dict:
        out = {
            "M": self.M,
            "budget_gap": self.budget_gap,
            "max_overshoot": self.max_overshoot,
            "complementarity_gap": self.complementarity_gap,
            "support_interval": "empty" if self.support_interval is None
            else list(self.support_interval),
            "support_connected": self.support_connected,
            "support_flatness": self.support_flatness,
            "off_support_strict": self.off_support_strict,
            "pass": dict(self.passed, all=self.ok),
            "inconclusive": self.inconclusive,
        }
        if self.message:
            out["message"] = self.message
        if with_path and self.phi is not None:
            out["phi_path"] = {"t": self.times.tolist(), "Phi": self.phi.tolist()}
        return out


def extract_multiplier(grad: GradientPath | np.ndarray, params: MarketParams | None = None,
                       tol_phi: float = 1e-4):
    """``M = max Phi`` over the grid and the grid times within ``tol_phi`` (relative) of it."""
    if isinstance(grad, GradientPath):
        times, phi = grad.times, grad.phi
    else:
        phi = np.asarray(grad, dtype=float)
        times = params.grid if params is not None else np.arange(len(phi), dtype=float)
    if not np.all(np.isfinite(phi)):
        raise DomainError("gradient has non-finite values")
    M = float(np.max(phi))
    near = phi >= M - tol_phi * abs(M)
    return M, times[near]


def support_cells(plan: ConsumptionPlan, params: MarketParams) -> np.ndarray:
    """Boolean mask over grid nodes touched by the plan.

    A cell with rate above ``1e-10 w / T`` marks both of its end nodes; an
    atom marks the nearest node.
    """
    eps = 1e-10 * max(params.w, 1e-300) / params.T
    node = np.zeros(params.grid_n + 1, dtype=bool)
    cells = plan.rate > eps
    node[:-1] |= cells
    node[1:] |= cells
    if len(plan.atom_times):
        idx = np.rint(plan.atom_times / params.h).astype(int)
        node[np.clip(idx, 0, params.grid_n)] = True
    return node


def _interior_nodes(plan: ConsumptionPlan, params: MarketParams) -> np.ndarray:
    """Nodes inside the consumption set: atom nodes and nodes between two consuming cells."""
    eps = 1e-10 * max(params.w, 1e-300) / params.T
    cells = plan.rate > eps
    node = np.zeros(params.grid_n + 1, dtype=bool)
    node[1:-1] = cells[:-1] & cells[1:]
    if len(plan.atom_times):
        idx = np.rint(plan.atom_times / params.h).astype(int)
        node[np.clip(idx, 0, params.grid_n)] = True
    return node


def _connected(mask: np.ndarray) -> bool:
    idx = np.flatnonzero(mask)
    return len(idx) == 0 or idx[-1] - idx[0] + 1 == len(idx)


def verify_kkt(plan: ConsumptionPlan, spec: FelicitySpec, params: MarketParams,
               tolerances: Tolerances | None = None, price_scale: float = 1.0) -> KKTReport:
    """Audit the three Kuhn-Tucker conditions plus the single-interval support.

    ``price_scale`` multiplies the price ``psi``; the multiplier scales by
    ``1/price_scale`` and every pass/fail flag is unchanged.
    """
    tol = tolerances or Tolerances()
    plan.check_grid(params)
    cost = price_functional(plan, params, scale=price_scale)
    target = price_scale * params.w
    budget_gap = abs(cost - target) / target if target > 0 else abs(cost)
    try:
        sol = evaluate(plan, spec, params)
    except FelicityDomainError as exc:
        return KKTReport(np.nan, budget_gap, np.nan, np.nan, None, False, np.nan, False,
                         passed={"budget": budget_gap <= tol.budget}, inconclusive=True,
                         message=str(exc))
    phi = sol.phi / price_scale
    times = sol.times
    M, _ = extract_multiplier(phi, params, tol.phi)
    node = support_cells(plan, params)
    off = ~node

    # condition (ii), relative to M, off the support (on it, (iii) applies)
    rel = (phi - M) / M
    max_overshoot = float(np.max(rel[off])) if off.any() else 0.0

    # condition (iii): int (Phi/M - 1) psi dC, normalized by the budget
    psi = np.exp(-params.r * plan.atom_times)
    phi_atoms = np.interp(plan.atom_times, times, phi)
    comp = float(np.sum((phi_atoms / M - 1.0) * psi * plan.atom_masses))
    cell_phi = 0.5 * (phi[:-1] + phi[1:])
    comp += float(np.sum((cell_phi / M - 1.0) * plan.rate * cell_discounts(params)))
    comp_gap = abs(comp) / target if target > 0 else abs(comp)

    if node.any():
        idx = np.flatnonzero(node)
        interval = (float(times[idx[0]]), float(times[idx[-1]]))
        inner = _interior_nodes(plan, params)
        inner = inner if inner.any() else node
        flatness = float(np.max(np.abs(phi[inner] - M)) / M)
    else:
        interval, flatness = None, 0.0
    connected = bool(_connected(node))
    strict = bool(np.all(phi[off] < M)) if off.any() else True

    passed = {
        "budget": budget_gap <= tol.budget,
        "gradient_bound": max_overshoot <= tol.phi,
        "complementarity": comp_gap <= tol.comp,
        "support_interval": connected,
    }
    return KKTReport(M, budget_gap, max_overshoot, comp_gap, interval, connected, flatness,
                     strict, passed, times=times, phi=phi)
