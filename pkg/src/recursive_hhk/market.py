"""Consumption plans, market parameters and the price functional.

A consumption plan is a nonnegative measure on ``[0, T]`` made of point
masses ("gulps") plus a rate that is constant on each cell of a uniform time
grid.  The cumulative consumption ``C_t`` is right-continuous with
``C_{0-} = 0``, so an atom at ``t = 0`` is an initial gulp.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GridMismatchError

__all__ = [
    "MarketParams",
    "ConsumptionPlan",
    "PathSample",
    "price_functional",
    "cumulative",
    "mix",
    "cell_discounts",
    "exp_integral",
]


def exp_integral(rate, a, b):
    """Return ``int_a^b exp(-rate * t) dt`` without cancellation for small rates."""
    rate = np.asarray(rate, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    width = b - a
    x = rate * width
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, rate)
    big = np.exp(-rate * a) * (-np.expm1(-x)) / safe
    # second-order series keeps the rate -> 0 limit exact to rounding
    series = np.exp(-rate * a) * width * (1.0 - 0.5 * x + x * x / 6.0)
    return np.where(small, series, big)


@dataclass(frozen=True)
class MarketParams:
    """Deterministic market and preference-independent primitives.

    ``r`` is the interest rate (price ``psi_t = exp(-r t)``), ``beta`` the
    decay of the satisfaction kernel, ``y`` the initial satisfaction and
    ``w`` the initial wealth.  ``grid_n`` is the number of uniform cells on
    ``[0, T]`` shared by plans, paths and audits.
    """

    T: float
    r: float
    beta: float
    y: float
    w: float
    grid_n: int = 400

    def __post_init__(self):
        problems = []
        if not self.T > 0:
            problems.append("T > 0")
        if not self.r >= 0:
            problems.append("r >= 0")
        if not self.beta > 0:
            problems.append("beta > 0")
        if not self.y > 0:
            problems.append("y > 0")
        if not self.w >= 0:
            problems.append("w >= 0")
        if int(self.grid_n) != self.grid_n or self.grid_n < 2:
            problems.append("grid_n >= 2 integer")
        if problems:
            raise DomainError("invalid market parameters: " + ", ".join(problems))
        object.__setattr__(self, "grid_n", int(self.grid_n))

    @property
    def h(self) -> float:
        return self.T / self.grid_n

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.grid_n + 1)

    def price(self, t):
        return np.exp(-self.r * np.asarray(t, dtype=float))

    def replace(self, **changes) -> "MarketParams":
        values = {k: getattr(self, k) for k in ("T", "r", "beta", "y", "w", "grid_n")}
        values.update(changes)
        return MarketParams(**values)

    def to_dict(self) -> dict:
        return {"T": self.T, "r": self.r, "beta": self.beta, "y": self.y,
                "w": self.w, "grid_n": self.grid_n}


def cell_discounts(params: MarketParams) -> np.ndarray:
    """``int e^{-rt} dt`` over every grid cell, computed in closed form."""
    g = params.grid
    return exp_integral(params.r, g[:-1], g[1:])


@dataclass(frozen=True)
class PathSample:
    """A scalar function of time sampled on a plan grid."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape:
            raise GridMismatchError("times and values differ in shape")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.times)

    def __call__(self, t):
        return np.interp(t, self.times, self.values)


@dataclass(frozen=True)
class ConsumptionPlan:
    """Atoms plus a piecewise-constant rate on ``grid_n`` uniform cells of ``[0, T]``.

    Atoms are stored sorted with coincident times merged.  Zero-mass atoms are
    dropped.
    """

    T: float
    grid_n: int
    rate: np.ndarray = None
    atom_times: np.ndarray = field(default=None)
    atom_masses: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError("plan horizon must be positive")
        n = int(self.grid_n)
        rate = np.zeros(n) if self.rate is None else np.array(self.rate, dtype=float)
        if rate.shape != (n,):
            raise GridMismatchError(f"rate has shape {rate.shape}, expected ({n},)")
        if not np.all(np.isfinite(rate)) or np.any(rate < 0):
            raise DomainError("rate values must be finite and nonnegative")
        times = np.array([] if self.atom_times is None else self.atom_times, dtype=float)
        masses = np.array([] if self.atom_masses is None else self.atom_masses, dtype=float)
        if times.shape != masses.shape or times.ndim != 1:
            raise DomainError("atom times and masses must be 1-d and equally long")
        if np.any(~np.isfinite(masses)) or np.any(masses < 0):
            raise DomainError("atom masses must be finite and nonnegative")
        if np.any(~np.isfinite(times)) or np.any(times < 0) or np.any(times > self.T):
            raise DomainError("atom times must lie in [0, T]")
        keep = masses > 0
        times, masses = times[keep], masses[keep]
        if len(times):
            uniq, inverse = np.unique(times, return_inverse=True)
            merged = np.zeros(len(uniq))
            np.add.at(merged, inverse, masses)
            times, masses = uniq, merged
        for name, arr in (("rate", rate), ("atom_times", times), ("atom_masses", masses)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "grid_n", n)
        object.__setattr__(self, "T", float(self.T))

    @classmethod
    def empty(cls, params: MarketParams) -> "ConsumptionPlan":
        return cls(params.T, params.grid_n)

    @classmethod
    def from_atoms(cls, params: MarketParams, atoms, rate=None) -> "ConsumptionPlan":
        atoms = list(atoms)
        times = [a[0] for a in atoms]
        masses = [a[1] for a in atoms]
        return cls(params.T, params.grid_n, rate, times, masses)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return [(float(t), float(m)) for t, m in zip(self.atom_times, self.atom_masses)]

    @property
    def h(self) -> float:
        return self.T / self.grid_n

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.grid_n + 1)

    @property
    def total(self) -> float:
        return float(self.atom_masses.sum() + self.rate.sum() * self.h)

    def check_grid(self, params: MarketParams) -> None:
        if self.grid_n != params.grid_n or not np.isclose(self.T, params.T, rtol=0, atol=1e-14):
            raise GridMismatchError(
                f"plan grid (T={self.T}, n={self.grid_n}) does not match "
                f"market grid (T={params.T}, n={params.grid_n})")

    def refine(self, factor: int) -> "ConsumptionPlan":
        """Same measure represented on a grid with ``factor`` times more cells."""
        factor = int(factor)
        if factor < 1:
            raise DomainError("refinement factor must be a positive integer")
        return ConsumptionPlan(self.T, self.grid_n * factor, np.repeat(self.rate, factor),
                               self.atom_times, self.atom_masses)

    def scaled(self, c: float) -> "ConsumptionPlan":
        return ConsumptionPlan(self.T, self.grid_n, self.rate * c, self.atom_times,
                               self.atom_masses * c)

    def with_atom(self, t: float, mass: float) -> "ConsumptionPlan":
        return ConsumptionPlan(self.T, self.grid_n, self.rate,
                               np.append(self.atom_times, t), np.append(self.atom_masses, mass))

    def to_dict(self) -> dict:
        return {"atoms": [[t, m] for t, m in self.atoms], "rate": self.rate.tolist(),
                "grid_n": self.grid_n, "T": self.T}

    @classmethod
    def from_dict(cls, data: dict) -> "ConsumptionPlan":
        missing = {"atoms", "rate", "grid_n", "T"} - set(data)
        if missing:
            raise DomainError(f"plan JSON lacks keys {sorted(missing)}")
        atoms = data["atoms"]
        times = [float(a[0]) for a in atoms]
        masses = [float(a[1]) for a in atoms]
        return cls(float(data["T"]), int(data["grid_n"]), data["rate"], times, masses)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ConsumptionPlan":
        return cls.from_dict(json.loads(text))


def price_functional(plan: ConsumptionPlan, params: MarketParams, scale: float = 1.0) -> float:
    """Cost ``int psi_t dC_t`` of a plan at price ``psi_t = scale * exp(-r t)``.

    Atom contributions are exact; each rate cell is integrated analytically.
    """
    plan.check_grid(params)
    if np.any(plan.atom_times > params.T) or np.any(plan.atom_times < 0):
        raise DomainError("atom time outside [0, T]")
    atoms = float(np.sum(plan.atom_masses * np.exp(-params.r * plan.atom_times)))
    rates = float(np.dot(plan.rate, cell_discounts(params)))
    return scale * (atoms + rates)


def cumulative(plan: ConsumptionPlan, t) -> np.ndarray | float:
    """Right-continuous cumulative consumption ``C_t`` (vectorized in ``t``)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > plan.T * (1 + 1e-14)):
        raise DomainError("cumulative() queried outside [0, T]")
    h = plan.h
    cell_mass = np.concatenate([[0.0], np.cumsum(plan.rate * h)])
    flat = np.atleast_1d(t_arr)
    idx = np.clip(np.floor(flat / h).astype(int), 0, plan.grid_n - 1)
    from_rate = cell_mass[idx] + plan.rate[idx] * (flat - idx * h)
    atom_cum = np.concatenate([[0.0], np.cumsum(plan.atom_masses)])
    from_atoms = atom_cum[np.searchsorted(plan.atom_times, flat, side="right")]
    out = (from_rate + from_atoms).reshape(t_arr.shape)
    return float(out) if out.ndim == 0 else out


def mix(plan1: ConsumptionPlan, plan2: ConsumptionPlan, lam: float) -> ConsumptionPlan:
    """Convex combination ``lam * plan1 + (1 - lam) * plan2``."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError("mixing weight must lie in [0, 1]")
    if plan1.grid_n != plan2.grid_n or plan1.T != plan2.T:
        raise GridMismatchError("cannot mix plans on different grids")
    times = np.concatenate([plan1.atom_times, plan2.atom_times])
    masses = np.concatenate([lam * plan1.atom_masses, (1 - lam) * plan2.atom_masses])
    rate = lam * plan1.rate + (1 - lam) * plan2.rate
    return ConsumptionPlan(plan1.T, plan1.grid_n, rate, times, masses)
