"""A uniform (t, x) -> R^d interface over analytic, learned and composite fields."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import gmm_oracle as go
from .rng import PURPOSE_MISC, StreamRNG
from .schedules import Schedule, gg_product

FD_STEP = 1e-5


@dataclass(frozen=True)
class DriftField:
    fn: Callable
    div_fn: Optional[Callable] = None
    tag: str = "Composite"
    name: str = ""

    def evaluate(self, t, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.asarray(self.fn(t, x), dtype=np.float64)

    __call__ = evaluate

    def divergence(self, t, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.div_fn is not None:
            return np.asarray(self.div_fn(t, x), dtype=np.float64)
        return fd_divergence(self.fn, t, x)

    @property
    def exact_divergence(self) -> bool:
        return self.div_fn is not None


def fd_divergence(fn, t, x, h: float = FD_STEP) -> np.ndarray:
    out = np.zeros(x.shape[0])
    for i in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[i] = h
        out += (fn(t, x + e)[:, i] - fn(t, x - e)[:, i]) / (2 * h)
    return out


def rademacher_probes(n: int, d: int, probes: int = 8, seed: int = 0) -> np.ndarray:
    """+-1 probes of shape (probes, n, d); row i always gets the same probes."""
    u = StreamRNG(seed).uniforms(np.arange(n, dtype=np.uint64), probes * d, slot=7, purpose=PURPOSE_MISC)
    return np.where(u < 0.5, -1.0, 1.0).reshape(n, probes, d).transpose(1, 0, 2)


def hutchinson_divergence(fn, t, x, probes: int = 8, seed: int = 0, h: float = FD_STEP) -> np.ndarray:
    """Unbiased trace estimate mean_k v_k . J v_k, with J v from a central difference."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.zeros(x.shape[0])
    for v in rademacher_probes(x.shape[0], x.shape[1], probes, seed):
        out += np.sum(v * (fn(t, x + h * v) - fn(t, x - h * v)), axis=1) / (2 * h)
    return out / probes


def with_hutchinson(f: "DriftField", probes: int = 8, seed: int = 0) -> "DriftField":
    """f with its divergence replaced by the Hutchinson estimate (probes fixed per row)."""
    return DriftField(f.fn, lambda t, x: hutchinson_divergence(f.evaluate, t, x, probes, seed), f.tag,
                      f"{f.name}[hutchinson]")


def _coef(c, t):
    return c(t) if callable(c) else c


def combine(f: DriftField, g: Optional[DriftField], c) -> DriftField:
    """f + c(t) g; ``c`` is a number or a function of t."""
    if g is None or (not callable(c) and c == 0):
        return f

    def fn(t, x):
        return f.evaluate(t, x) + np.asarray(_coef(c, t)).reshape(-1, 1) * g.evaluate(t, x)

    def div(t, x):
        return f.divergence(t, x) + np.asarray(_coef(c, t)).reshape(-1) * g.divergence(t, x)

    exact = f.exact_divergence and g.exact_divergence
    return DriftField(fn, div if exact else None, "Composite", f"{f.name}+c*{g.name}")


def scaled(f: DriftField, c) -> DriftField:
    def fn(t, x):
        return np.asarray(_coef(c, t)).reshape(-1, 1) * f.evaluate(t, x)

    def div(t, x):
        return np.asarray(_coef(c, t)).reshape(-1) * f.divergence(t, x)

    return DriftField(fn, div if f.exact_divergence else None, "Composite", f"c*{f.name}")


_ATTR = {"b": "velocity", "s": "score", "v": "v", "eta0": "eta0", "eta1": "eta1", "etaz": "etaz"}


class _OracleCache:
    """Remembers the last oracle call so sibling fields at the same (t, x) share it."""

    def __init__(self, mix0, mix1, schedule: Schedule, fields):
        self.mix0, self.mix1 = go.resolve_endpoints(mix0, mix1, schedule)
        self.schedule = schedule
        self.fields = tuple(fields)
        self._key = None
        self._x = None
        self._val = None

    def __call__(self, t, x) -> go.OracleFields:
        key = (np.asarray(t, dtype=np.float64).tobytes(), x.shape)
        if key == self._key and np.array_equal(x, self._x):
            return self._val
        val = go.evaluate(self.mix0, self.mix1, self.schedule, t, x, fields=self.fields)
        self._key, self._x, self._val = key, x.copy(), val
        return val

    def get(self, t, x, name: str) -> np.ndarray:
        if name in self.fields:
            return getattr(self(t, x), name)
        return getattr(go.evaluate(self.mix0, self.mix1, self.schedule, t, x, fields=(name,)), name)


def _oracle_field(cache: _OracleCache, which: str) -> DriftField:
    attr = _ATTR[which]
    schedule = cache.schedule
    div_fn = None
    if which == "b":
        div_fn = lambda t, x: cache.get(t, x, "div_b")
    elif which == "s":
        div_fn = lambda t, x: cache.get(t, x, "div_s")
    elif which == "etaz":
        div_fn = lambda t, x: -np.asarray(schedule.latent_coef(t)).reshape(-1) * cache.get(t, x, "div_s")
    return DriftField(lambda t, x: cache.get(t, x, attr), div_fn, "AnalyticGMM", which)


def gmm_fields(mix0, mix1, schedule: Schedule, which=("b", "s"), divergence: bool = False) -> tuple:
    """Analytic fields sharing one oracle evaluation per (t, x).

    ``which`` lists names from b, s, v, eta0, eta1, etaz.  With
    ``divergence`` the shared call also computes the exact divergences.
    """
    names = [_ATTR[w] for w in which]
    if divergence:
        names += ["div_b", "div_s"]
    cache = _OracleCache(mix0, mix1, schedule, names)
    return tuple(_oracle_field(cache, w) for w in which)


def gmm_field(mix0, mix1, schedule: Schedule, which: str = "b") -> DriftField:
    """Analytic field: one of b, s, v, eta0, eta1, etaz."""
    fields = [_ATTR[which]] + {"b": ["div_b"], "s": ["div_s"], "etaz": ["div_s"]}.get(which, [])
    return _oracle_field(_OracleCache(mix0, mix1, schedule, fields), which)


def gmm_forward_drift(mix0, mix1, schedule: Schedule, eps: float) -> DriftField:
    """b + eps s in one oracle call."""
    b, s = gmm_fields(mix0, mix1, schedule, ("b", "s"), divergence=True)
    f = combine(b, s, eps)
    return DriftField(f.fn, f.div_fn, "AnalyticGMM", "bF")


def learned_field(model) -> DriftField:
    return DriftField(lambda t, x: model(t, x), lambda t, x: model.divergence(t, x), "Learned",
                      model.target_tag.value)


class _FeatureCache:
    """Feature matrix of the last (t, x), shared by models on one feature map."""

    def __init__(self, fmap):
        self.fmap = fmap
        self._key = None
        self._x = None
        self._P = None

    def __call__(self, t, x) -> np.ndarray:
        key = (np.asarray(t, dtype=np.float64).tobytes(), x.shape)
        if key == self._key and np.array_equal(x, self._x):
            return self._P
        tt = np.asarray(t, dtype=np.float64)
        tt = np.full(x.shape[0], float(tt)) if tt.ndim == 0 else tt.reshape(-1)
        P = self.fmap.features(tt, x)
        self._key, self._x, self._P = key, x.copy(), P
        return P


def learned_fields(*models) -> tuple:
    """Fields for several models fitted on the same feature map, evaluating features once per (t, x)."""
    fmap = models[0].fmap
    if any(m.fmap is not fmap and m.fmap.spec() != fmap.spec() for m in models):
        return tuple(learned_field(m) for m in models)
    cache = _FeatureCache(fmap)

    def make(m):
        return DriftField(lambda t, x: cache(t, x) @ m.weights.T, lambda t, x: m.divergence(t, x), "Learned",
                          m.target_tag.value)
    return tuple(make(m) for m in models)


def point_mass_field(x0, mix1, a: float, plateau=None) -> DriftField:
    return DriftField(lambda t, x: go.point_mass_drift_ud(x0, mix1, a, float(np.asarray(t).reshape(-1)[0]), x,
                                                          plateau=plateau),
                      None, "AnalyticGMM", "ud")


def time_clipped(f: DriftField, t_lo: float, t_hi: float) -> DriftField:
    """f evaluated at clip(t, t_lo, t_hi); keeps singular fields finite at the endpoints."""
    clip = lambda t: np.clip(np.asarray(t, dtype=np.float64), t_lo, t_hi)
    div = (lambda t, x: f.divergence(clip(t), x)) if f.exact_divergence else None
    return DriftField(lambda t, x: f.evaluate(clip(t), x), div, f.tag, f.name)


def score_from_denoiser(etaz: DriftField, schedule: Schedule) -> DriftField:
    """s = -eta_z / gamma (or / alpha for one-sided); singular at the endpoints."""
    coef = lambda t: -1.0 / np.asarray(schedule.latent_coef(t), dtype=np.float64)
    f = scaled(etaz, coef)
    return DriftField(f.fn, f.div_fn, "Composite", "s(etaz)")


def velocity_from_v_and_score(v: DriftField, s: DriftField, schedule: Schedule) -> DriftField:
    """b = v - gamma gamma' s."""
    f = combine(v, s, lambda t: -np.asarray(gg_product(schedule, t)))
    return DriftField(f.fn, f.div_fn, "Composite", "b(v,s)")


def velocity_from_v_and_denoiser(v: DriftField, etaz: DriftField, schedule: Schedule) -> DriftField:
    """b = v + gamma' eta_z, written as v + (gamma gamma'/gamma) eta_z away from the endpoints."""
    def c(t):
        g = np.asarray(schedule.gamma(t), dtype=np.float64)
        return np.asarray(gg_product(schedule, t)) / g
    f = combine(v, etaz, c)
    return DriftField(f.fn, f.div_fn, "Composite", "b(v,etaz)")


def one_sided_velocity_from_denoiser(etaz: DriftField, schedule: Schedule, target_mean,
                                     beta_min: float = 1e-8) -> DriftField:
    """b = alpha' eta_z + beta' (x - alpha eta_z) / beta for a one-sided schedule.

    Where beta < beta_min (t = 0 and its round-off neighbourhood) the field is
    supplemented by b(0, x) = alpha'(0) x + beta'(0) E[x1].
    """
    mbar = np.asarray(target_mean, dtype=np.float64).reshape(1, -1)

    def fn(t, x):
        tt = np.asarray(t, dtype=np.float64).reshape(-1, 1)
        b = np.asarray(schedule.beta(tt), dtype=np.float64) * np.ones((x.shape[0], 1))
        small = b < beta_min
        out = np.empty_like(x)
        if np.any(small):
            out[:] = float(schedule.d_alpha(np.array(0.0))) * x + float(schedule.d_beta(np.array(0.0))) * mbar
            if np.all(small):
                return out
        eta = etaz.evaluate(t, x)
        a = np.asarray(schedule.alpha(tt), dtype=np.float64)
        da, db = (np.asarray(f(tt), dtype=np.float64) for f in (schedule.d_alpha, schedule.d_beta))
        with np.errstate(divide="ignore", invalid="ignore"):
            reg = da * eta + db * (x - a * eta) / b
        return np.where(small, out, reg)

    return DriftField(fn, None, "Composite", "b(etaz,one-sided)")


def sbdm_velocity(score: DriftField, eta1: DriftField) -> DriftField:
    """For alpha = sqrt(1 - t^2), beta = t:  b = t s + eta_1, regular at t = 1."""
    def fn(t, x):
        return np.asarray(t, dtype=np.float64).reshape(-1, 1) * score.evaluate(t, x) + eta1.evaluate(t, x)

    return DriftField(fn, None, "Composite", "b(sbdm)")
