"""Time coefficients alpha(t), beta(t), gamma(t) of spatially linear interpolants.

x_t = alpha(t) x0 + beta(t) x1 + gamma(t) z.  For one-sided schedules the
latent z plays the role of x0 and gamma vanishes; for mirror schedules
alpha vanishes and beta is identically one.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidCombination, ConfigError

Fn = Callable[[np.ndarray], np.ndarray]

ENDPOINT_EPS = 1e-6


class Kind(enum.Enum):
    TWO_SIDED = "two-sided"
    ONE_SIDED = "one-sided"
    MIRROR = "mirror"


def _arr(t):
    return np.asarray(t, dtype=np.float64)


def _const(c: float) -> Fn:
    return lambda t: np.full_like(_arr(t), c, dtype=np.float64)


@dataclass(frozen=True)
class GammaSpec:
    """A scalar noise coefficient gamma(t) with its derivative.

    ``gg`` is a closed form of gamma*gamma' valid on the closed interval
    when available; ``singular`` marks a derivative that blows up at the
    endpoints.
    """

    name: str
    param: Optional[float]
    gamma: Fn
    d_gamma: Fn
    gg: Optional[Fn]
    gg_limit_0: float
    gg_limit_1: float
    singular: bool = False

    @property
    def ident(self) -> str:
        if self.name in ("bb", "sigmoid"):
            key = "a" if self.name == "bb" else "f"
            return f"{self.name}:{key}={self.param:g}"
        return self.name


def gamma_none() -> GammaSpec:
    z = _const(0.0)
    return GammaSpec("none", None, z, z, z, 0.0, 0.0)


def gamma_brownian_bridge(a: float = 1.0) -> GammaSpec:
    if not a > 0:
        raise InvalidCombination(f"Brownian-bridge parameter must be positive, got {a}")

    def g(t):
        t = _arr(t)
        return np.sqrt(np.clip(a * t * (1.0 - t), 0.0, None))

    def dg(t):
        t = _arr(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            return 0.5 * a * (1.0 - 2.0 * t) / g(t)

    def gg(t):
        return 0.5 * a * (1.0 - 2.0 * _arr(t))

    return GammaSpec("bb", float(a), g, dg, gg, a / 2.0, -a / 2.0, singular=True)


def gamma_quadratic() -> GammaSpec:
    g = lambda t: _arr(t) * (1.0 - _arr(t))
    dg = lambda t: 1.0 - 2.0 * _arr(t)
    return GammaSpec("quad", None, g, dg, lambda t: g(t) * dg(t), 0.0, 0.0)


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def gamma_sigmoid_sum(f: float = 20.0) -> GammaSpec:
    c = _sigmoid(-f / 2 + 1) - _sigmoid(-f / 2 - 1)

    def g(t):
        u = f * (_arr(t) - 0.5)
        return _sigmoid(u + 1) - _sigmoid(u - 1) - c

    def dg(t):
        u = f * (_arr(t) - 0.5)
        s1, s2 = _sigmoid(u + 1), _sigmoid(u - 1)
        return f * (s1 * (1 - s1) - s2 * (1 - s2))

    return GammaSpec("sigmoid", float(f), g, dg, lambda t: g(t) * dg(t), 0.0, 0.0)


def gamma_sin_squared() -> GammaSpec:
    g = lambda t: np.sin(np.pi * _arr(t)) ** 2
    dg = lambda t: np.pi * np.sin(2 * np.pi * _arr(t))
    return GammaSpec("sin2", None, g, dg, lambda t: g(t) * dg(t), 0.0, 0.0)


def parse_gamma(ident) -> GammaSpec:
    """Parse a gamma identifier such as ``"bb:a=2"`` or ``"sin2"``."""
    if isinstance(ident, GammaSpec):
        return ident
    if ident is None:
        return gamma_none()
    s = str(ident).strip().lower()
    m = re.fullmatch(r"(bb|sigmoid)(?::([af])=([-+0-9.eE]+))?", s)
    if m:
        name, key, val = m.groups()
        if key is not None and key != ("a" if name == "bb" else "f"):
            raise ConfigError(f"bad parameter in gamma id {ident!r}")
        if name == "bb":
            return gamma_brownian_bridge(float(val) if val else 1.0)
        return gamma_sigmoid_sum(float(val) if val else 20.0)
    table = {"none": gamma_none, "quad": gamma_quadratic, "sin2": gamma_sin_squared}
    if s not in table:
        raise ConfigError(f"unknown gamma id {ident!r}")
    return table[s]()


@dataclass(frozen=True)
class Schedule:
    name: str
    kind: Kind
    alpha: Fn
    beta: Fn
    gamma: Fn
    d_alpha: Fn
    d_beta: Fn
    d_gamma: Fn
    gg_limit_0: float = 0.0
    gg_limit_1: float = 0.0
    gamma_singular: bool = False
    gamma_name: str = "none"
    gg_fn: Optional[Fn] = None
    aa_fn: Optional[Fn] = None
    alpha_singular: bool = False
    declared_vp: Optional[bool] = None
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def ident(self) -> dict:
        return {"name": self.name, "gamma": self.gamma_name}

    def latent_coef(self, t):
        """Coefficient multiplying the Gaussian latent: gamma, or alpha if one-sided."""
        return self.alpha(t) if self.kind is Kind.ONE_SIDED else self.gamma(t)

    def d_latent_coef(self, t):
        return self.d_alpha(t) if self.kind is Kind.ONE_SIDED else self.d_gamma(t)

    def latent_product(self, t):
        """gamma*gamma' (or alpha*alpha' for one-sided), endpoint-safe."""
        return aa_product(self, t) if self.kind is Kind.ONE_SIDED else gg_product(self, t)

    @property
    def has_noise(self) -> bool:
        return self.kind is not Kind.ONE_SIDED

    def needs_window(self) -> bool:
        """True when some derivative or inverse coefficient is singular at an endpoint."""
        return self.gamma_singular or self.alpha_singular or self.kind is not Kind.ONE_SIDED


def gg_product(s: Schedule, t):
    """gamma(t)*gamma'(t), using the stored limits near the endpoints."""
    t = _arr(t)
    tt = np.clip(t, ENDPOINT_EPS, 1 - ENDPOINT_EPS)
    with np.errstate(invalid="ignore", divide="ignore"):
        mid = s.gg_fn(tt) if s.gg_fn is not None else s.gamma(tt) * s.d_gamma(tt)
    out = np.where(t < ENDPOINT_EPS, s.gg_limit_0, np.where(t > 1 - ENDPOINT_EPS, s.gg_limit_1, mid))
    return out if out.ndim else float(out)


def aa_product(s: Schedule, t):
    t = _arr(t)
    if s.aa_fn is not None:
        out = s.aa_fn(t)
    else:
        out = s.alpha(t) * s.d_alpha(t)
    out = np.asarray(out, dtype=np.float64)
    return out if out.ndim else float(out)


def bb_product(s: Schedule, t):
    out = np.asarray(s.beta(t) * s.d_beta(t), dtype=np.float64)
    return out if out.ndim else float(out)


def time_reversed(s: Schedule) -> Schedule:
    """The two-sided schedule seen backwards: alpha~(t) = beta(1 - t), beta~(t) = alpha(1 - t), gamma~(t) = gamma(1 - t).

    Interpolating (x1, x0) with it at time 1 - t gives the same law as (x0, x1) with s at t.
    """
    if s.kind is not Kind.TWO_SIDED:
        raise InvalidCombination("time reversal is defined for two-sided schedules")
    r = lambda f: (lambda t: f(1.0 - _arr(t)))
    nr = lambda f: (lambda t: -f(1.0 - _arr(t)))
    gg = None if s.gg_fn is None else nr(s.gg_fn)
    return Schedule(f"reversed({s.name})", s.kind, r(s.beta), r(s.alpha), r(s.gamma), nr(s.d_beta), nr(s.d_alpha),
                    nr(s.d_gamma), -s.gg_limit_1, -s.gg_limit_0, s.gamma_singular, s.gamma_name, gg, None,
                    s.alpha_singular, s.declared_vp, dict(s.extra))


SCHEDULE_NAMES = {
    "linear": "Linear",
    "trig": "Trig",
    "encdec": "EncDec",
    "sbdm-vp": "SBDM_VP",
    "mirror": "MirrorFlat",
}


def _canon_name(name: str) -> str:
    n = str(name).strip()
    if n.lower() in SCHEDULE_NAMES:
        return SCHEDULE_NAMES[n.lower()]
    if n in SCHEDULE_NAMES.values():
        return n
    raise ConfigError(f"unknown schedule name {name!r}")


def make_schedule(name: str, gamma_name="none") -> Schedule:
    """Build one of the named schedules.

    ``name`` is one of linear, trig, encdec, sbdm-vp, mirror (or the
    CamelCase variants); ``gamma_name`` a gamma identifier or GammaSpec.
    """
    nm = _canon_name(name)
    g = parse_gamma(gamma_name)
    has_g = g.name != "none"
    common = dict(
        gamma=g.gamma,
        d_gamma=g.d_gamma,
        gg_limit_0=g.gg_limit_0,
        gg_limit_1=g.gg_limit_1,
        gamma_singular=g.singular,
        gamma_name=g.ident,
        gg_fn=g.gg,
    )
    key = [k for k, v in SCHEDULE_NAMES.items() if v == nm][0]

    if nm == "Linear":
        kind = Kind.TWO_SIDED if has_g else Kind.ONE_SIDED
        sch = Schedule(key, kind, lambda t: 1 - _arr(t), lambda t: _arr(t) + 0.0,
                       d_alpha=_const(-1.0), d_beta=_const(1.0), **common)
    elif nm == "Trig":
        kind = Kind.TWO_SIDED if has_g else Kind.ONE_SIDED
        h = math.pi / 2
        if has_g:
            tg = np.linspace(0, 1, 2001)
            if np.max(g.gamma(tg) ** 2) >= 1.0:
                raise InvalidCombination("trig schedule needs gamma(t)^2 < 1 on [0,1]")
        # placeholder schedule to reach gg_product for the prefactor derivative
        proto = Schedule(key, kind, _const(0.0), _const(0.0), d_alpha=_const(0.0), d_beta=_const(0.0), **common)

        def pref(t):
            return np.sqrt(1.0 - g.gamma(t) ** 2)

        def dpref(t):
            return -gg_product(proto, t) / pref(t)

        sch = Schedule(
            key, kind,
            lambda t: pref(t) * np.cos(h * _arr(t)),
            lambda t: pref(t) * np.sin(h * _arr(t)),
            d_alpha=lambda t: dpref(t) * np.cos(h * _arr(t)) - pref(t) * h * np.sin(h * _arr(t)),
            d_beta=lambda t: dpref(t) * np.sin(h * _arr(t)) + pref(t) * h * np.cos(h * _arr(t)),
            **common)
    elif nm == "EncDec":
        if not has_g:
            raise InvalidCombination("encdec needs a gamma: without it x_t collapses to 0 at t=1/2")
        c2 = lambda t: np.cos(np.pi * _arr(t)) ** 2
        dc2 = lambda t: -np.pi * np.sin(2 * np.pi * _arr(t))
        sch = Schedule(
            key, Kind.TWO_SIDED,
            lambda t: np.where(_arr(t) < 0.5, c2(t), 0.0),
            lambda t: np.where(_arr(t) > 0.5, c2(t), 0.0),
            d_alpha=lambda t: np.where(_arr(t) < 0.5, dc2(t), 0.0),
            d_beta=lambda t: np.where(_arr(t) > 0.5, dc2(t), 0.0),
            **common)
    elif nm == "SBDM_VP":
        if has_g:
            raise InvalidCombination("sbdm-vp is one-sided and takes no gamma")

        def da(t):
            t = _arr(t)
            with np.errstate(divide="ignore"):
                return -t / np.sqrt(1.0 - t * t)

        sch = Schedule(key, Kind.ONE_SIDED, lambda t: np.sqrt(np.clip(1 - _arr(t) ** 2, 0, None)),
                       lambda t: _arr(t) + 0.0, d_alpha=da, d_beta=_const(1.0),
                       aa_fn=lambda t: -_arr(t), alpha_singular=True, **common)
    else:  # MirrorFlat
        if not has_g:
            raise InvalidCombination("mirror schedule needs a gamma")
        sch = Schedule(key, Kind.MIRROR, _const(0.0), _const(1.0),
                       d_alpha=_const(0.0), d_beta=_const(0.0), **common)

    vp = _vp_error(sch, np.linspace(0, 1, 2001)) <= 1e-10
    return Schedule(**{**sch.__dict__, "declared_vp": bool(vp)})


def _vp_error(s: Schedule, grid) -> float:
    if s.kind is Kind.MIRROR:
        return float("inf")
    tot = s.alpha(grid) ** 2 + s.beta(grid) ** 2 + s.gamma(grid) ** 2
    return float(np.max(np.abs(tot - 1.0)))


@dataclass
class ScheduleReport:
    violations: list
    variance_preserving: bool
    max_vp_error: float

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(s: Schedule, n_grid: int = 10_000, tol: float = 1e-10) -> ScheduleReport:
    """Check the structural invariants of a schedule on a dense grid."""
    v = []
    grid = np.linspace(0.0, 1.0, n_grid)
    inner = grid[1:-1]

    def at(fn, t):
        return float(np.asarray(fn(np.array([t])))[0])

    def expect(label, fn, t, val):
        got = at(fn, t)
        if not abs(got - val) <= tol:
            v.append(f"boundary: {label}({t:g}) = {got!r}, expected {val!r}")

    if s.kind is Kind.TWO_SIDED:
        for lab, fn, t, val in [("alpha", s.alpha, 0, 1), ("alpha", s.alpha, 1, 0), ("beta", s.beta, 0, 0),
                                ("beta", s.beta, 1, 1), ("gamma", s.gamma, 0, 0), ("gamma", s.gamma, 1, 0)]:
            expect(lab, fn, t, val)
        if np.any(s.gamma(inner) <= 0):
            v.append("positivity: gamma(t) must be > 0 on (0,1)")
    elif s.kind is Kind.ONE_SIDED:
        for lab, fn, t, val in [("alpha", s.alpha, 0, 1), ("alpha", s.alpha, 1, 0),
                                ("beta", s.beta, 0, 0), ("beta", s.beta, 1, 1)]:
            expect(lab, fn, t, val)
        if np.any(s.alpha(grid[:-1]) <= 0):
            v.append("positivity: alpha(t) must be > 0 on [0,1)")
    else:
        for lab, fn, t, val in [("beta", s.beta, 0, 1), ("beta", s.beta, 1, 1),
                                ("gamma", s.gamma, 0, 0), ("gamma", s.gamma, 1, 0)]:
            expect(lab, fn, t, val)
        if np.any(s.gamma(inner) <= 0):
            v.append("positivity: gamma(t) must be > 0 on (0,1)")

    for arr, lab in [(s.alpha(grid), "alpha"), (s.beta(grid), "beta"), (s.gamma(grid), "gamma")]:
        if not np.all(np.isfinite(arr)):
            v.append(f"finiteness: {lab} not finite on [0,1]")

    # gamma*gamma' must approach the stored limits
    seq = 10.0 ** -np.arange(2, 9)
    with np.errstate(divide="ignore", invalid="ignore"):
        near0 = s.gamma(seq) * s.d_gamma(seq)
        near1 = s.gamma(1 - seq) * s.d_gamma(1 - seq)
    for lab, vals, lim in [("0", near0, s.gg_limit_0), ("1", near1, s.gg_limit_1)]:
        if not np.all(np.isfinite(vals)) or abs(vals[-1] - lim) > 1e-6:
            v.append(f"gamma*gamma' limit at t={lab}: got {vals[-1]!r}, stored {lim!r}")

    vp_err = _vp_error(s, grid)
    vp = vp_err <= tol
    if s.declared_vp and not vp:
        v.append(f"variance-preserving flag set but max |a^2+b^2+g^2-1| = {vp_err:.3e}")
    return ScheduleReport(v, bool(vp), vp_err)
