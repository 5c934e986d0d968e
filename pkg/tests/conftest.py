import numpy as np
import pytest

from recursive_hhk.market import ConsumptionPlan, MarketParams
from recursive_hhk.preferences import (EZParams, FelicitySpec, ez_felicity, power_felicity,
                                      validate)


def _zero(t, y, u):
    return np.zeros(np.broadcast(np.asarray(t), np.asarray(y), np.asarray(u)).shape)


def quad_felicity(gamma=-1.0, delta=0.1, eps=0.02):
    """``g(y) - delta u - eps u^2 / 2`` with power ``g``: depends on ``u`` nonlinearly."""
    g = power_felicity(gamma, 0.0)

    def f(t, y, u):
        u = np.asarray(u, dtype=float)
        return g.f(t, y, u) - delta * u - 0.5 * eps * u * u

    def f_u(t, y, u):
        return -delta - eps * np.asarray(u, dtype=float) + _zero(t, y, u)

    return FelicitySpec("quad", f, g.f_y, f_u, g.f_yy, _zero, _zero,
                        params={"gamma": gamma, "delta": delta, "eps": eps})


def increasing_felicity(eps=0.05):
    """``sqrt(y) + eps u``: increasing in ``u`` and nonnegative for ``u >= 0``."""

    def f(t, y, u):
        return np.sqrt(np.asarray(y, dtype=float)) + eps * np.asarray(u, dtype=float)

    def f_y(t, y, u):
        return 0.5 / np.sqrt(np.asarray(y, dtype=float)) + _zero(t, y, u)

    def f_yy(t, y, u):
        return -0.25 * np.asarray(y, dtype=float) ** -1.5 + _zero(t, y, u)

    def f_u(t, y, u):
        return eps + _zero(t, y, u)

    return FelicitySpec("increasing", f, f_y, f_u, f_yy, _zero, _zero, params={"eps": eps})


@pytest.fixture
def desk():
    """Market used throughout: T=1, r=.05, beta=1, y=1, w=1."""
    return MarketParams(T=1.0, r=0.05, beta=1.0, y=1.0, w=1.0, grid_n=400)


@pytest.fixture
def desk_ez():
    return EZParams(delta=0.1, rho=0.5, alpha=0.5)


@pytest.fixture
def ez_spec(desk_ez):
    return ez_felicity(desk_ez)


def random_plan(rng, params, n_atoms=2, rate_scale=1.0):
    rate = rate_scale * rng.exponential(size=params.grid_n) * (rng.random(params.grid_n) < 0.5)
    times = rng.uniform(0, params.T, n_atoms)
    masses = rng.exponential(size=n_atoms)
    return ConsumptionPlan(params.T, params.grid_n, rate, times, masses)


def random_ez(rng, market_grid_n=400, need_w=True):
    """Admissible random (market, EZ) pair."""
    while True:
        alpha = float(rng.choice([rng.uniform(0.25, 0.9), rng.uniform(1.2, 3.0)]))
        rho = float(rng.uniform(0.05, min(0.95, 1.0 / alpha - 0.05)))
        delta = float(rng.uniform(0.0, 0.3))
        r = float(rng.uniform(0.0, 0.1))
        beta = float(rng.uniform(0.3, 2.0))
        y = float(rng.uniform(0.3, 2.0))
        w = float(rng.uniform(0.05, 2.0)) if need_w else 0.0
        T = float(rng.uniform(0.5, 2.0))
        m = MarketParams(T, r, beta, y, w, market_grid_n)
        p = EZParams(delta, rho, alpha)
        if not validate(p, m):
            return m, p
