"""Felicity (aggregator) functions ``f(t, y, u)`` and their partial derivatives.

Two families are built in: the time-additive aggregator ``g(y) - delta*u``
and the Epstein-Zin aggregator.  All evaluators are vectorized over numpy
arrays.

The Epstein-Zin aggregator is not Lipschitz in ``u`` at the terminal condition
``U_T = 0``, so integrating ``dU/dt = -f`` directly from ``T`` is ill-posed.
Its FelicitySpec therefore carries an :class:`OrdinalForm`: an increasing change of
utility coordinate ``z = phi(u)`` under which the recursion becomes the
time-additive power aggregator.  Path computations run in the ordinal
coordinate and map back with ``to_utility``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FelicityDomainError
from .market import MarketParams

__all__ = [
    "Y_MIN",
    "FelicitySpec",
    "OrdinalForm",
    "EZParams",
    "ez_felicity",
    "time_additive_felicity",
    "power_felicity",
    "felicity_from_config",
    "l_operator",
    "validate",
    "lipschitz_bound",
    "ordinal_form",
]

Y_MIN = 1e-12

Evaluator = Callable[..., np.ndarray]


def _floor_y(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise FelicityDomainError("felicity evaluated at satisfaction y <= 0")
    if np.any(y < Y_MIN):
        warnings.warn(f"satisfaction below {Y_MIN:g} clamped", RuntimeWarning, stacklevel=3)
        y = np.maximum(y, Y_MIN)
    return y


@dataclass(frozen=True)
class OrdinalForm:
    """Equivalent recursion in an increasing utility coordinate ``z = phi(u)``.

    ``generator`` is the aggregator of ``z``; ``to_utility`` maps ``z`` back to
    ``u`` and ``slope`` is ``du/dz``.  ``terminal`` is the value of ``z`` at the
    horizon.
    """

    generator: "FelicitySpec"
    to_utility: Callable[[np.ndarray], np.ndarray]
    slope: Callable[[np.ndarray], np.ndarray]
    from_utility: Callable[[np.ndarray], np.ndarray]
    terminal: float = 0.0


@dataclass(frozen=True)
class FelicitySpec:
    """An aggregator with hand-coded partials.

    ``lipschitz`` is a declared bound on ``|df/du|`` over the working box the
    felicity was built for (``None`` when no box was declared).
    """

    label: str
    f: Evaluator
    f_y: Evaluator
    f_u: Evaluator
    f_yy: Evaluator
    f_ty: Evaluator
    f_uy: Evaluator
    params: dict = field(default_factory=dict)
    lipschitz: float | None = None
    ordinal: OrdinalForm | None = None

    def to_dict(self) -> dict:
        return {"felicity": self.label, **self.params}


def ordinal_form(spec: FelicitySpec) -> OrdinalForm:
    """The felicity's ordinal form, or the identity form when it has none."""
    if spec.ordinal is not None:
        return spec.ordinal
    ident = lambda z: np.asarray(z, dtype=float)
    one = lambda z: np.ones_like(np.asarray(z, dtype=float))
    return OrdinalForm(spec, ident, one, ident, 0.0)


def _zero_like(t, y, u):
    return np.zeros(np.broadcast(np.asarray(t), np.asarray(y), np.asarray(u)).shape)


def time_additive_felicity(g, g1, g2, delta: float, label: str = "time-additive",
                           params: dict | None = None) -> FelicitySpec:
    """``f(t, y, u) = g(y) - delta * u`` from ``g`` and its first two derivatives."""
    delta = float(delta)

    def f(t, y, u):
        return g(_floor_y(y)) - delta * np.asarray(u, dtype=float) + 0.0 * np.asarray(t)

    def f_y(t, y, u):
        return g1(_floor_y(y)) + _zero_like(t, y, u)

    def f_u(t, y, u):
        return -delta + _zero_like(t, y, u)

    def f_yy(t, y, u):
        return g2(_floor_y(y)) + _zero_like(t, y, u)

    record = {"delta": delta} if params is None else dict(params)
    return FelicitySpec(label, f, f_y, f_u, f_yy, _zero_like, _zero_like,
                        params=record, lipschitz=abs(delta))


def power_felicity(exponent: float, delta: float, scale: float = 1.0) -> FelicitySpec:
    """Time-additive power felicity ``g(y) = scale * y**exponent / exponent``.

    ``exponent = 0`` gives ``scale * log(y)``.  Requires ``exponent < 1`` and
    ``scale > 0`` for strict monotonicity and concavity.
    """
    gam, s = float(exponent), float(scale)
    if not gam < 1 or not s > 0:
        raise FelicityDomainError("power felicity needs exponent < 1 and scale > 0")
    if gam == 0.0:
        g = lambda y: s * np.log(y)
        g1 = lambda y: s / y
        g2 = lambda y: -s / (y * y)
    else:
        g = lambda y: s * y ** gam / gam
        g1 = lambda y: s * y ** (gam - 1.0)
        g2 = lambda y: s * (gam - 1.0) * y ** (gam - 2.0)
    params = {"exponent": gam, "delta": float(delta)}
    if s != 1.0:
        params["scale"] = s
    return time_additive_felicity(g, g1, g2, delta, label="time-additive-power", params=params)


@dataclass(frozen=True)
class EZParams:
    """Epstein-Zin preference parameters: time preference ``delta``, relative
    risk aversion ``rho`` and elasticity of intertemporal substitution ``alpha``."""

    delta: float
    rho: float
    alpha: float

    @property
    def a(self) -> float:
        """Curvature exponent ``1 - 1/alpha`` applied to satisfaction."""
        return 1.0 - 1.0 / self.alpha

    @property
    def psi_ez(self) -> float:
        return (1.0 - self.rho) / self.a


def validate(p: EZParams, m: MarketParams | None = None) -> list[str]:
    """List every violated admissibility constraint (empty means admissible)."""
    bad = []
    if not p.delta >= 0:
        bad.append("delta >= 0")
    if not p.rho > 0:
        bad.append("rho > 0")
    if p.rho == 1:
        bad.append("rho != 1")
    if not p.alpha > 0:
        bad.append("alpha > 0")
    if p.alpha == 1:
        bad.append("alpha != 1")
    if p.alpha > 0 and not p.rho < 1.0 / p.alpha:
        bad.append("rho < 1/alpha")
    if m is not None and p.alpha > 0 and not m.r + m.beta / p.alpha - p.delta > 0:
        bad.append("r + beta/alpha - delta > 0")
    return bad


def ez_felicity(p: EZParams, box: tuple[float, float, float, float] | None = None) -> FelicitySpec:
    """Epstein-Zin aggregator
    ``f = delta/a * y**a * ((1-rho) u)**(1 - 1/psi) - delta*psi*u`` with ``a = 1 - 1/alpha``.

    ``box = (y_lo, y_hi, u_lo, u_hi)`` declares a working box and sets the
    felicity's Lipschitz bound from the box corners.
    """
    bad = validate(p)
    if bad:
        raise FelicityDomainError("inadmissible Epstein-Zin parameters: " + ", ".join(bad))
    d, rho, a, psi = float(p.delta), float(p.rho), p.a, p.psi_ez
    q = 1.0 - 1.0 / psi  # power on (1-rho) u

    def _v(u):
        v = (1.0 - rho) * np.asarray(u, dtype=float)
        if np.any(~(v > 0)):
            raise FelicityDomainError("Epstein-Zin felicity needs (1-rho)*u > 0")
        return v

    def f(t, y, u):
        y, v = _floor_y(y), _v(u)
        return d / a * y ** a * v ** q - d * psi * np.asarray(u) + 0.0 * np.asarray(t)

    def f_y(t, y, u):
        y, v = _floor_y(y), _v(u)
        return d * y ** (a - 1.0) * v ** q + 0.0 * np.asarray(t)

    def f_yy(t, y, u):
        y, v = _floor_y(y), _v(u)
        return d * (a - 1.0) * y ** (a - 2.0) * v ** q + 0.0 * np.asarray(t)

    def f_u(t, y, u):
        y, v = _floor_y(y), _v(u)
        return d * (psi - 1.0) * y ** a * v ** (q - 1.0) - d * psi + 0.0 * np.asarray(t)

    def f_uy(t, y, u):
        y, v = _floor_y(y), _v(u)
        return d * (psi - 1.0) * a * y ** (a - 1.0) * v ** (q - 1.0) + 0.0 * np.asarray(t)

    lip = None
    if box is not None:
        y_lo, y_hi, u_lo, u_hi = box
        corners = [abs(float(f_u(0.0, yy, uu))) for yy in (y_lo, y_hi) for uu in (u_lo, u_hi)]
        lip = max(corners)

    ordinal = None
    if d > 0:
        # z = J / a where J_t = int_t^T delta e^{delta(t-s)} Y_s^a ds and
        # (1-rho) U = J**psi; z follows the power felicity delta*y**a/a - delta*z.
        def to_utility(z):
            with np.errstate(divide="ignore"):
                return (a * np.asarray(z, dtype=float)) ** psi / (1.0 - rho)

        def slope(z):
            with np.errstate(divide="ignore"):
                return (a * np.asarray(z, dtype=float)) ** (psi - 1.0)

        def from_utility(u):
            return _v(u) ** (1.0 / psi) / a

        ordinal = OrdinalForm(power_felicity(a, d, scale=d), to_utility, slope, from_utility)

    return FelicitySpec("epstein-zin", f, f_y, f_u, f_yy, _zero_like, f_uy,
                        params={"delta": d, "rho": rho, "alpha": float(p.alpha)},
                        lipschitz=lip, ordinal=ordinal)


def felicity_from_config(block: dict) -> FelicitySpec:
    """Build a FelicitySpec from a config block such as ``{"felicity": "epstein-zin", ...}``."""
    kind = block.get("felicity")
    if kind == "epstein-zin":
        return ez_felicity(EZParams(block["delta"], block["rho"], block["alpha"]))
    if kind == "time-additive-power":
        return power_felicity(block["exponent"], block["delta"], block.get("scale", 1.0))
    raise FelicityDomainError(f"unknown felicity {kind!r}")


def l_operator(spec: FelicitySpec, params: MarketParams, t, y, u):
    """``r f_y + f_u f_y + f_ty - beta y f_yy - f f_uy``.

    Its positivity makes the optimal consumption set a single interval.
    """
    fy = spec.f_y(t, y, u)
    return (params.r * fy + spec.f_u(t, y, u) * fy + spec.f_ty(t, y, u)
            - params.beta * np.asarray(y) * spec.f_yy(t, y, u)
            - spec.f(t, y, u) * spec.f_uy(t, y, u))


def lipschitz_bound(spec: FelicitySpec, t_range, y_range, u_range, n: int = 25) -> float:
    """Largest ``|df/du|`` over an ``n**3`` lattice of the given box."""
    t = np.linspace(*t_range, n)
    y = np.linspace(*y_range, n)
    u = np.linspace(*u_range, n)
    tt, yy, uu = np.meshgrid(t, y, u, indexing="ij")
    return float(np.max(np.abs(spec.f_u(tt, yy, uu))))
