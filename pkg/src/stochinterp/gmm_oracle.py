"""Closed-form interpolant fields when both endpoints are Gaussian mixtures.

With x0 ~ sum_i p0_i N(m0_i, C0_i), x1 ~ sum_j p1_j N(m1_j, C1_j) and
independent z, x_t is a mixture over pairs (i, j) with

    m_ij(t) = alpha m0_i + beta m1_j
    C_ij(t) = alpha^2 C0_i + beta^2 C1_j + gamma^2 Id

Every conditional expectation follows from Gaussian conditioning inside a
component, then weighting by the responsibilities w_ij(t, x).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import SingularCovariance, ConfigError
from .rng import StreamRNG, PURPOSE_MISC
from .schedules import Kind, Schedule, aa_product, bb_product, gg_product

LOG_FLOOR = -745.0
_LOG2PI = math.log(2 * math.pi)


def _chol(C: np.ndarray) -> np.ndarray:
    """Batched Cholesky with a relative pivot threshold."""
    d = C.shape[-1]
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("covariance is not positive definite") from exc
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    tr = np.trace(C, axis1=-2, axis2=-1)
    if np.any(diag ** 2 < 1e-12 * tr[..., None] / d) or not np.all(np.isfinite(L)):
        raise SingularCovariance("covariance pivot below threshold")
    return L


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    chols: np.ndarray
    log_norms: np.ndarray

    @classmethod
    def create(cls, weights, means, covs) -> "GaussianMixture":
        w = np.atleast_1d(np.asarray(weights, dtype=np.float64))
        m = np.asarray(means, dtype=np.float64)
        if m.ndim == 1:
            m = m[:, None] if w.size > 1 and m.size == w.size else m[None, :]
        n, d = m.shape
        C = np.asarray(covs, dtype=np.float64)
        if C.ndim == 0:
            C = np.broadcast_to(C * np.eye(d), (n, d, d))
        elif C.ndim == 1:
            C = C[:, None, None] * np.eye(d) if d == 1 or C.size == n else np.diag(C)[None]
        elif C.ndim == 2:
            C = np.broadcast_to(C, (n, d, d))
        C = np.array(C, dtype=np.float64)
        if w.shape != (n,) or C.shape != (n, d, d):
            raise ConfigError("mixture shapes are inconsistent")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            if np.any(w <= 0):
                raise ConfigError("mixture weights must be positive")
            w = w / w.sum()
        if not np.allclose(C, np.swapaxes(C, -1, -2), atol=1e-12):
            raise ConfigError("covariances must be symmetric")
        L = _chol(C)
        ln = -0.5 * d * _LOG2PI - np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
        for a in (w, m, C, L, ln):
            a.setflags(write=False)
        return cls(w, m, C, L, ln)

    @classmethod
    def standard_normal(cls, d: int) -> "GaussianMixture":
        return cls.create([1.0], np.zeros((1, d)), np.eye(d)[None])

    @classmethod
    def random(cls, n_modes: int, d: int, seed: int, sigma: float = 7.5, weights=None) -> "GaussianMixture":
        """Means N(0, sigma^2 Id), covariances W^T W / d + Id, uniform weights by default."""
        rng = np.random.default_rng(seed)
        means = sigma * rng.standard_normal((n_modes, d))
        W = rng.standard_normal((n_modes, d, d))
        covs = np.einsum("nki,nkj->nij", W, W) / d + np.eye(d)
        w = np.full(n_modes, 1.0 / n_modes) if weights is None else weights
        return cls.create(w, means, covs)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        dm = self.means - mu
        return np.einsum("k,kij->ij", self.weights, self.covs) + np.einsum("k,ki,kj->ij", self.weights, dm, dm)

    def _comp_terms(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        r = x[:, None, :] - self.means[None]
        Linv = np.linalg.inv(self.chols)
        u = np.einsum("kij,nkj->nki", Linv, r)
        logc = np.log(self.weights)[None] + self.log_norms[None] - 0.5 * np.sum(u * u, axis=-1)
        s_k = -np.einsum("kji,nkj->nki", Linv, u)
        return logc, s_k

    def log_pdf(self, x) -> np.ndarray:
        logc, _ = self._comp_terms(x)
        return np.maximum(logsumexp(logc, axis=1), LOG_FLOOR)

    def score(self, x) -> np.ndarray:
        logc, s_k = self._comp_terms(x)
        w = np.exp(logc - logsumexp(logc, axis=1, keepdims=True))
        return np.einsum("nk,nki->ni", w, s_k)

    def sample(self, n: int, seed: int, streams=None, purpose: int = PURPOSE_MISC) -> np.ndarray:
        """Draw n samples; draw k uses counter stream ``streams[k]`` (default k)."""
        rng = StreamRNG(seed)
        streams = np.arange(n) if streams is None else np.asarray(streams)
        comp = np.searchsorted(np.cumsum(self.weights), rng.uniforms(streams, 1, slot=0, purpose=purpose)[:, 0])
        comp = np.minimum(comp, self.n_components - 1)
        z = rng.normals(streams, self.d, slot=1, purpose=purpose)
        return self.means[comp] + np.einsum("nij,nj->ni", self.chols[comp], z)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(), "covariances": self.covs.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "GaussianMixture":
        try:
            return cls.create(obj["weights"], obj["means"], obj["covariances"])
        except KeyError as exc:
            raise ConfigError(f"mixture spec missing field {exc}") from exc

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path) -> "GaussianMixture":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def resolve_endpoints(mix0: Optional[GaussianMixture], mix1: GaussianMixture, schedule: Schedule):
    """For one-sided and mirror schedules the x0 slot holds N(0, Id) (its coefficient vanishes for mirror)."""
    if schedule.kind is not Kind.TWO_SIDED or mix0 is None:
        if schedule.kind is Kind.TWO_SIDED:
            raise ConfigError("two-sided schedule needs a base mixture")
        return GaussianMixture.standard_normal(mix1.d), mix1
    if mix0.d != mix1.d:
        raise ConfigError("endpoint dimensions differ")
    return mix0, mix1


def _safe_mul(c, v):
    # c * v with 0 * inf treated as 0 (singular alpha' against a zero mean)
    with np.errstate(invalid="ignore"):
        out = c * v
    return np.where(v == 0, 0.0, out)


@dataclass
class BridgeComponents:
    """Pairwise component quantities at one or several times, shapes (T, K, ...)."""

    t: np.ndarray
    log_p: np.ndarray
    idx0: np.ndarray
    idx1: np.ndarray
    m: np.ndarray
    C: np.ndarray
    dm: np.ndarray
    half_dC: np.ndarray
    Linv: np.ndarray
    log_norm: np.ndarray
    coefs: dict


def bridge(mix0, mix1, schedule: Schedule, t) -> BridgeComponents:
    mix0, mix1 = resolve_endpoints(mix0, mix1, schedule)
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    d = mix1.d
    i0 = np.repeat(np.arange(mix0.n_components), mix1.n_components)
    i1 = np.tile(np.arange(mix1.n_components), mix0.n_components)
    log_p = np.log(mix0.weights[i0]) + np.log(mix1.weights[i1])
    a, b, g = (np.asarray(f(t), dtype=np.float64) for f in (schedule.alpha, schedule.beta, schedule.gamma))
    da, db = np.asarray(schedule.d_alpha(t), dtype=np.float64), np.asarray(schedule.d_beta(t), dtype=np.float64)
    aa = np.asarray(aa_product(schedule, t)) * np.ones_like(t)
    bb = np.asarray(bb_product(schedule, t)) * np.ones_like(t)
    gg = np.asarray(gg_product(schedule, t)) * np.ones_like(t)
    m0, m1 = mix0.means[i0], mix1.means[i1]
    C0, C1 = mix0.covs[i0], mix1.covs[i1]
    eye = np.eye(d)
    e1 = lambda c: c[:, None, None]
    e2 = lambda c: c[:, None, None, None]
    m = e1(a) * m0[None] + e1(b) * m1[None]
    dm = _safe_mul(e1(da), m0[None]) + e1(db) * m1[None]
    C = e2(a * a) * C0[None] + e2(b * b) * C1[None] + e2(g * g) * eye
    hC = e2(aa) * C0[None] + e2(bb) * C1[None] + e2(gg) * eye
    L = _chol(C)
    Linv = np.linalg.inv(L)
    log_norm = -0.5 * d * _LOG2PI - np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    lat = np.asarray(schedule.latent_coef(t), dtype=np.float64) * np.ones_like(t)
    coefs = dict(alpha=a, beta=b, gamma=g, latent=lat, d_alpha=da, d_beta=db, aa=aa, bb=bb, gg=gg, C0=C0, C1=C1, m0=m0, m1=m1)
    return BridgeComponents(t, log_p, i0, i1, m, C, dm, hC, Linv, log_norm, coefs)


@dataclass
class OracleFields:
    log_density: np.ndarray
    score: np.ndarray
    velocity: np.ndarray
    v: np.ndarray
    eta0: np.ndarray
    eta1: np.ndarray
    etaz: np.ndarray
    div_b: np.ndarray
    div_s: np.ndarray


def evaluate(mix0, mix1, schedule: Schedule, t, x, fields=("all",)) -> OracleFields:
    """All oracle quantities at points x (n, d) and time(s) t (scalar or (n,))."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    tt = np.asarray(t, dtype=np.float64)
    if tt.ndim and tt.size > 1:
        if tt.shape[0] != x.shape[0]:
            raise ValueError("t must be scalar or match the number of points")
        # group equal times: cheap when callers pass a single repeated time
        uniq, inv = np.unique(tt, return_inverse=True)
        if uniq.size == 1:
            tt = uniq
        else:
            br = bridge(mix0, mix1, schedule, tt)
            return _evaluate_bridge(br, x, per_point=True, fields=fields)
    br = bridge(mix0, mix1, schedule, tt.reshape(-1)[:1])
    return _evaluate_bridge(br, x, per_point=False, fields=fields)


def _evaluate_bridge(br: BridgeComponents, x, per_point: bool, fields) -> OracleFields:
    sel = (lambda a: a) if per_point else (lambda a: a[0][None])
    m, Linv, hC, dm = sel(br.m), sel(br.Linv), sel(br.half_dC), sel(br.dm)
    c = {k: (v if k in ("C0", "C1", "m0", "m1") else sel(v[:, None])) for k, v in br.coefs.items()}
    r = x[:, None, :] - m
    u = np.einsum("nkij,nkj->nki", Linv, r)
    logc = br.log_p[None] + sel(br.log_norm) - 0.5 * np.sum(u * u, axis=-1)
    lse = logsumexp(logc, axis=1)
    w = np.exp(np.maximum(logc - lse[:, None], LOG_FLOOR))
    s_k = -np.einsum("nkji,nkj->nki", Linv, u)
    s = np.einsum("nk,nki->ni", w, s_k)
    want = set(fields)
    full = "all" in want
    need = lambda *names: full or bool(want.intersection(names))
    b = v = eta0 = eta1 = etaz = div_b = div_s = None
    if need("etaz"):
        etaz = -c["latent"] * s
    f_k = None
    if need("velocity", "div_b"):
        f_k = dm - np.einsum("nkij,nkj->nki", hC, s_k)
        b = np.einsum("nk,nki->ni", w, f_k)
    if need("eta0", "eta1", "v"):
        C0s_k = np.einsum("kij,nkj->nki", c["C0"], s_k)
        C1s_k = np.einsum("kij,nkj->nki", c["C1"], s_k)
        eta0 = np.einsum("nk,nki->ni", w, c["m0"][None] - c["alpha"][..., None] * C0s_k)
        eta1 = np.einsum("nk,nki->ni", w, c["m1"][None] - c["beta"][..., None] * C1s_k)
        v_k = (_safe_mul(c["d_alpha"][..., None], c["m0"][None]) - c["aa"][..., None] * C0s_k
               + c["d_beta"][..., None] * c["m1"][None] - c["bb"][..., None] * C1s_k)
        v = np.einsum("nk,nki->ni", w, v_k)
    if need("div_b", "div_s"):
        Cinv = np.einsum("nkji,nkjl->nkil", Linv, Linv)
        if need("div_b"):
            tr_a = np.einsum("nkij,nkji->nk", hC, Cinv)
            div_b = np.sum(w * (tr_a + np.sum(f_k * s_k, -1)), axis=1) - np.sum(b * s, -1)
        if need("div_s"):
            tr_c = np.trace(Cinv, axis1=-2, axis2=-1)
            div_s = np.sum(w * (-tr_c + np.sum(s_k * s_k, -1)), axis=1) - np.sum(s * s, -1)
    return OracleFields(lse, s, b, v, eta0, eta1, etaz, div_b, div_s)


def log_density(mix0, mix1, schedule, t, x) -> np.ndarray:
    return evaluate(mix0, mix1, schedule, t, x, fields=("log_density",)).log_density


def score_s(mix0, mix1, schedule, t, x) -> np.ndarray:
    return evaluate(mix0, mix1, schedule, t, x, fields=("score",)).score


def velocity_b(mix0, mix1, schedule, t, x) -> np.ndarray:
    return evaluate(mix0, mix1, schedule, t, x, fields=("velocity",)).velocity


def velocity_v(mix0, mix1, schedule, t, x) -> np.ndarray:
    return evaluate(mix0, mix1, schedule, t, x, fields=("v",)).v


def eta_fields(mix0, mix1, schedule, t, x):
    f = evaluate(mix0, mix1, schedule, t, x)
    return f.eta0, f.eta1, f.etaz


def linear_sde_moments(mean0, cov0, schedule: Schedule, eps, t_grid, mean1=None, cov1=None,
                       start_mean=None, start_cov=None, drift_offset=None, substeps: int = 1):
    """Exact mean/covariance of the linear SDE between two Gaussians.

    The drift is b + eps*s (plus an optional constant ``drift_offset``) for the
    single-Gaussian pair (mean0, cov0) -> (mean1, cov1); defaults for the target
    are the base itself.  Moments start from (start_mean, start_cov), which
    default to the base.  ``eps`` is a number or a callable of t.
    Returns arrays of shape (T, d) and (T, d, d).
    """
    m0 = np.atleast_1d(np.asarray(mean0, dtype=np.float64))
    d = m0.shape[0]
    C0 = np.asarray(cov0, dtype=np.float64).reshape(d, d)
    m1 = m0 if mean1 is None else np.atleast_1d(np.asarray(mean1, dtype=np.float64))
    C1 = C0 if cov1 is None else np.asarray(cov1, dtype=np.float64).reshape(d, d)
    mu = m0.copy() if start_mean is None else np.atleast_1d(np.asarray(start_mean, dtype=np.float64)).copy()
    S = C0.copy() if start_cov is None else np.asarray(start_cov, dtype=np.float64).reshape(d, d).copy()
    off = np.zeros(d) if drift_offset is None else np.atleast_1d(np.asarray(drift_offset, dtype=np.float64))
    epsf = eps if callable(eps) else (lambda t, e=float(eps): e)
    eye = np.eye(d)
    if schedule.kind is Kind.ONE_SIDED:
        C0eff, m0eff = eye, np.zeros(d)
    else:
        C0eff, m0eff = C0, m0

    def coeffs(t):
        a, b, g = (float(f(np.array(t))) for f in (schedule.alpha, schedule.beta, schedule.gamma))
        aa, bb, gg = aa_product(schedule, t), bb_product(schedule, t), gg_product(schedule, t)
        da, db = float(schedule.d_alpha(np.array(t))), float(schedule.d_beta(np.array(t)))
        mt = a * m0eff + b * m1
        dmt = _safe_mul(da, m0eff) + db * m1
        Ct = a * a * C0eff + b * b * C1 + g * g * eye
        hC = aa * C0eff + bb * C1 + gg * eye
        A = (hC - epsf(t) * eye) @ np.linalg.inv(Ct)
        return mt, dmt, A

    def rhs(t, mu, S):
        mt, dmt, A = coeffs(t)
        e = epsf(t)
        return dmt + A @ (mu - mt) + off, A @ S + S @ A.T + 2.0 * e * eye

    t_grid = np.asarray(t_grid, dtype=np.float64)
    means, covs = [mu.copy()], [S.copy()]
    for k in range(len(t_grid) - 1):
        t0, t1 = t_grid[k], t_grid[k + 1]
        h = (t1 - t0) / substeps
        for j in range(substeps):
            t = t0 + j * h
            k1 = rhs(t, mu, S)
            k2 = rhs(t + h / 2, mu + h / 2 * k1[0], S + h / 2 * k1[1])
            k3 = rhs(t + h / 2, mu + h / 2 * k2[0], S + h / 2 * k2[1])
            k4 = rhs(t + h, mu + h * k3[0], S + h * k3[1])
            mu = mu + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            S = S + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        means.append(mu.copy())
        covs.append(S.copy())
    return np.array(means), np.array(covs)


def plateau_warp(delta: float = 0.05):
    """tau(t) frozen at 0 on [0, delta] and linear afterwards.

    Returns (ratio, d_tau) where ratio(t) = tau(t)/t.
    """
    def ratio(t):
        t = np.asarray(t, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(t > delta, (t - delta) / ((1 - delta) * np.where(t > 0, t, 1.0)), 0.0)
        return r

    def d_tau(t):
        return np.where(np.asarray(t) > delta, 1.0 / (1 - delta), 0.0)

    return ratio, d_tau


def point_mass_drift_ud(x0, mix1: GaussianMixture, a: float, t, x, plateau: Optional[float] = None):
    """Drift of the diffusive bridge from a single point x0 to mix1.

    Uses I(t) = (1 - tau) x0 + tau x1 with tau(t) = t (or the plateau warp)
    and noise gamma(t) = sqrt(2 a t (1 - t)).  Finite on the closed interval.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    t = float(t)
    d = mix1.d
    if plateau is None:
        r, dtau = 1.0, 1.0
    else:
        rf, dtf = plateau_warp(plateau)
        r, dtau = float(rf(t)), float(dtf(t))
    tau = t * r
    eye = np.eye(d)
    Ct = tau * r * mix1.covs + 2 * a * (1 - t) * eye  # C_j(t) = t * Ct_j
    if t >= 1.0:
        Ct = mix1.covs
    Lt = _chol(Ct)
    Linv = np.linalg.inv(Lt)
    m = (1 - tau) * x0[None] + tau * mix1.means  # (K, d)
    res = x[:, None, :] - m[None]
    Ct_inv_res = np.einsum("kji,nkj->nki", Linv, np.einsum("kij,nkj->nki", Linv, res))
    if t > 0:
        logdet = 2 * np.sum(np.log(np.diagonal(Lt, axis1=-2, axis2=-1)), axis=-1)
        quad = np.sum(res * Ct_inv_res, axis=-1) / t
        logc = np.log(mix1.weights)[None] - 0.5 * logdet[None] - 0.5 * quad
    else:
        logc = np.broadcast_to(np.log(mix1.weights)[None], (x.shape[0], mix1.n_components))
    w = np.exp(logc - logsumexp(logc, axis=1, keepdims=True))
    N = dtau * r * mix1.covs - 2 * a * eye
    u_k = dtau * (mix1.means - x0[None])[None] + np.einsum("kij,nkj->nki", N, Ct_inv_res)
    return np.einsum("nk,nki->ni", w, u_k)
