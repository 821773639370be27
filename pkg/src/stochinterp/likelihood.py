"""Likelihoods: ODE change of variables, Feynman-Kac path averages, cross-entropies, KL bounds."""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import ode
from .errors import ConfigError, DegenerateWeight, MissingScore
from .fields import DriftField, combine, with_hutchinson
from .gmm_oracle import GaussianMixture, linear_sde_moments
from .samplers import EpsSchedule, sde_run
from .schedules import Schedule


@dataclass
class LogDensityResult:
    x: np.ndarray
    log_density: np.ndarray
    divergence_integral: np.ndarray
    endpoint: np.ndarray
    method: str
    n_paths: Optional[int] = None
    std_error: Optional[np.ndarray] = None
    ess: Optional[np.ndarray] = None

    def records(self, config_hash: str = "") -> list:
        se = self.std_error if self.std_error is not None else np.zeros_like(self.log_density)
        return [dict(x=np.atleast_1d(xi).tolist(), logp=float(lp), stderr=float(s), method=self.method,
                     config_hash=config_hash)
                for xi, lp, s in zip(self.x, self.log_density, se)]


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _logpdf(dens):
    if isinstance(dens, GaussianMixture):
        return dens.log_pdf
    if callable(dens):
        return dens
    raise ConfigError("density must be a GaussianMixture or a log-density callable")


def log_density_ode(b: DriftField, base_or_target, x, direction: str = "forward", method: str = "dopri",
                    rtol: float = 1e-6, atol: float = 1e-8, steps: int = 200,
                    t_lo: float = 0.0, t_hi: float = 1.0, divergence: str = "exact", probes: int = 8,
                    seed: int = 0) -> LogDensityResult:
    """log rho_hat at t_hi (forward) or t_lo (backward) from the augmented flow.

    forward:  log rho(t_hi, x) = log rho0(X(t_lo)) - int div b, transporting x back to t_lo.
    backward: log rho(t_lo, x) = log rho1(X(t_hi)) + int div b, transporting x up to t_hi.
    ``divergence="hutchinson"`` swaps the trace for a Rademacher estimate with
    ``probes`` probes held fixed along each trajectory; log rho stays unbiased.
    """
    if divergence == "hutchinson":
        b = with_hutchinson(b, probes, seed)
    elif divergence != "exact":
        raise ConfigError("divergence must be exact or hutchinson")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, d = x.shape
    logp = _logpdf(base_or_target)

    def rhs(t, y):
        X = y[:, :d]
        out = np.empty_like(y)
        out[:, :d] = b.evaluate(t, X)
        out[:, d] = b.divergence(t, X)
        return out

    y0 = np.concatenate([x, np.zeros((n, 1))], axis=1)
    if direction == "forward":
        s0, s1 = t_hi, t_lo
    elif direction == "backward":
        s0, s1 = t_lo, t_hi
    else:
        raise ConfigError("direction must be forward or backward")
    if method in ("dopri", "dopri5"):
        res = ode.dopri5(rhs, y0, s0, s1, rtol=rtol, atol=atol)
    else:
        res = ode.fixed_step(rhs, y0, s0, s1, steps, method=method)
    yend = res.states[-1]
    end, ell = yend[:, :d], yend[:, d]
    # ell = int_{s0}^{s1} div b dt
    div_int = -ell if direction == "forward" else ell
    sign = -1.0 if direction == "forward" else 1.0
    lp = logp(end) + sign * div_int
    tag = f"ode:{direction}" + (":hutchinson" if divergence == "hutchinson" else "")
    return LogDensityResult(x, lp, div_int, end, tag)


def _jackknife_logmean(L: np.ndarray, n_blocks: int):
    """Log of the mean of exp(L) along the last axis and its delete-one-block jackknife error."""
    n = L.shape[-1]
    est = logsumexp(L, axis=-1) - math.log(n)
    B = max(2, min(n_blocks, n))
    blocks = np.array_split(np.arange(n), B)
    sums = np.stack([logsumexp(L[..., idx], axis=-1) for idx in blocks], axis=-1)
    sizes = np.array([len(idx) for idx in blocks])
    thetas = []
    for k in range(B):
        mask = np.ones(B, bool)
        mask[k] = False
        thetas.append(logsumexp(sums[..., mask], axis=-1) - math.log(sizes[mask].sum()))
    th = np.stack(thetas, axis=-1)
    se = np.sqrt((B - 1) / B * np.sum((th - th.mean(-1, keepdims=True)) ** 2, axis=-1))
    ess = np.exp(2 * logsumexp(L, axis=-1) - logsumexp(2 * L, axis=-1))
    return est, se, ess


def _trace(f: DriftField, divergence: str, probes: int, seed: int) -> DriftField:
    if divergence == "hutchinson":
        return with_hutchinson(f, probes, seed)
    if divergence != "exact":
        raise ConfigError("divergence must be exact or hutchinson")
    return f


def _path_weights(b, s, eps, x, n_paths, steps, seed, method, direction, divergence="exact", probes=8):
    """Run the auxiliary SDE from every query point; return log-weights without the endpoint density."""
    m, d = x.shape
    X = np.repeat(x, n_paths, axis=0)
    streams = np.arange(m * n_paths, dtype=np.uint64)
    acc = np.zeros(m * n_paths)
    if direction == "forward":
        # Z_tau: drift -bF(1 - tau, Z); weight exp(-int div bF)
        bF = _trace(combine(b, s, lambda t: eps(t)), divergence, probes, seed)
        drift = lambda tau, y: -bF.evaluate(1.0 - tau, y)
        noise = lambda tau: eps(1.0 - tau)
        divf = lambda tau, y: bF.divergence(1.0 - tau, y)
        sign = -1.0
    else:
        # Y_t: drift bB(t, Y); weight exp(+int div bB)
        bB = _trace(combine(b, s, lambda t: -eps(t)), divergence, probes, seed)
        drift = lambda t, y: bB.evaluate(t, y)
        noise = eps
        divf = lambda t, y: bB.divergence(t, y)
        sign = 1.0
    state = {"prev": None}

    def on_step(k, tau, xo, tau_n, xn, pred):
        d0 = state["prev"] if state["prev"] is not None else divf(tau, xo)
        d1 = divf(tau_n, xn)
        acc[:] += 0.5 * (tau_n - tau) * (d0 + d1)
        state["prev"] = d1

    _, states, _ = sde_run(drift, noise, X, 0.0, 1.0, steps, method, seed, streams, on_step=on_step)
    return states[-1], sign * acc


def density_feynman_kac(b: DriftField, s: Optional[DriftField], eps, base, x, n_paths: int = 10_000,
                        steps: int = 200, seed: int = 0, method: str = "heun", n_blocks: int = 20,
                        direction: str = "forward", min_ess: float = 10.0, divergence: str = "exact",
                        probes: int = 8) -> LogDensityResult:
    """Path-average estimate of log rho_F(1, x) (forward) or log rho_B(0, x) (backward).

    forward:  rho_F(1, x) = E[ exp(-int_0^1 div bF(1 - tau, Z_tau) dtau) rho0(Z_1) ],
              dZ = -bF(1 - tau, Z) dtau + sqrt(2 eps) dW, Z_0 = x.
    backward: rho_B(0, x) = E[ exp(+int_0^1 div bB(t, Y_t) dt) rho1(Y_1) ],
              dY = bB(t, Y) dt + sqrt(2 eps) dW, Y_0 = x.
    ``base`` is rho0 (forward) or rho1 (backward).  Errors are jackknife
    estimates over blocks of paths.  A Hutchinson trace is allowed but the
    log of the path mean makes it biased; a RuntimeWarning says so.
    """
    eps = EpsSchedule.parse(eps)
    if s is None:
        raise MissingScore("Feynman-Kac estimation needs a score field")
    if eps.is_zero:
        raise ConfigError("Feynman-Kac estimation needs eps > 0; use log_density_ode")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m = x.shape[0]
    if divergence == "hutchinson":
        warnings.warn("Hutchinson divergence inside log E[...] gives a biased log-density", RuntimeWarning)
    end, logw = _path_weights(b, s, eps, x, n_paths, steps, seed, method, direction, divergence, probes)
    L = (logw + _logpdf(base)(end)).reshape(m, n_paths)
    est, se, ess = _jackknife_logmean(L, n_blocks)
    if np.any(ess < min_ess):
        raise DegenerateWeight(f"effective sample size {ess.min():.1f} below {min_ess}")
    div_int = -logw.reshape(m, n_paths).mean(1) if direction == "forward" else logw.reshape(m, n_paths).mean(1)
    tag = f"fk:{direction}" + (":hutchinson-biased" if divergence == "hutchinson" else "")
    return LogDensityResult(x, est, div_int, end.reshape(m, n_paths, -1).mean(1), tag,
                            n_paths=n_paths, std_error=se, ess=ess)


def cross_entropy_ode(b: DriftField, base, target_samples, direction: str = "forward", **kw):
    """-E log rho_hat over the supplied samples; returns (value, stderr)."""
    r = log_density_ode(b, base, target_samples, direction=direction, **kw)
    v = -r.log_density
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


@dataclass
class CrossEntropyBound:
    bound: float
    std_error: float
    log_mean: Optional[float] = None
    log_mean_std_error: Optional[float] = None
    log_mean_biased: bool = True


def cross_entropy_sde_bound(b: DriftField, s: Optional[DriftField], eps, base, target_samples,
                            n_paths: int = 1, steps: int = 200, seed: int = 0, method: str = "heun",
                            log_mean: bool = False, direction: str = "forward", divergence: str = "exact",
                            probes: int = 8) -> CrossEntropyBound:
    """Jensen upper bound E_1 E^x[ int div bF - log rho0(Z_1) ] on the cross-entropy.

    With ``log_mean`` the plug-in -E_1 log E^x[...] estimate is also returned;
    it is biased (log of a Monte-Carlo mean) and flagged as such.  The bound
    is linear in the divergence, so a Hutchinson trace leaves it unbiased.
    """
    eps = EpsSchedule.parse(eps)
    if eps.is_zero:
        v, se = cross_entropy_ode(b, base, target_samples, direction=direction)
        return CrossEntropyBound(v, se, v, se, False)
    if s is None:
        raise MissingScore("stochastic cross-entropy needs a score field")
    x = np.atleast_2d(np.asarray(target_samples, dtype=np.float64))
    m = x.shape[0]
    end, logw = _path_weights(b, s, eps, x, n_paths, steps, seed, method, direction, divergence, probes)
    L = (logw + _logpdf(base)(end)).reshape(m, n_paths)
    per = -L.mean(1)
    out = CrossEntropyBound(float(per.mean()), float(per.std(ddof=1) / math.sqrt(m)))
    if log_mean:
        lm = -(logsumexp(L, axis=1) - math.log(n_paths))
        out.log_mean, out.log_mean_std_error = float(lm.mean()), float(lm.std(ddof=1) / math.sqrt(m))
    return out


# --- KL bounds ----------------------------------------------------------------

def _gap(hat, best, label):
    g = hat - best
    if g < 0:
        warnings.warn(f"negative {label} loss gap {g:.3e} clamped to 0", RuntimeWarning)
        g = 0.0
    return g


def kl_bound(loss_b_hat: float, loss_b_min: float, loss_s_hat: float, loss_s_min: float, eps: float) -> float:
    """Upper bound on KL(rho1 || rho_hat(1)) for the SDE with constant eps.

    Loss values use the 1/2|f|^2 - target.f normalization, so each gap equals
    half the squared L2(rho) error; the bound is
    (1/(2 eps)) E|b_hat - b|^2 + (eps/2) E|s_hat - s|^2.
    """
    gb = _gap(loss_b_hat, loss_b_min, "b")
    gs = _gap(loss_s_hat, loss_s_min, "s")
    return kl_bound_from_errors(2 * gb, 2 * gs, eps)


def kl_bound_from_errors(err2_b: float, err2_s: float, eps: float) -> float:
    """Same bound in terms of the squared L2(rho) errors int E|f_hat - f|^2 dt."""
    if err2_b == 0 and err2_s == 0:
        return 0.0
    if eps <= 0:
        return math.inf if err2_b > 0 else 0.0
    return err2_b / (2 * eps) + eps * err2_s / 2


def kl_bound_v(loss_v_hat, loss_v_min, loss_s_hat, loss_s_min, eps: float, schedule: Schedule,
               n_grid: int = 10_001) -> float:
    """Variant with the v-objective: extra factor sup_t (gamma gamma' - eps)^2 on the score term."""
    from .schedules import gg_product
    gv = 2 * _gap(loss_v_hat, loss_v_min, "v")
    gs = 2 * _gap(loss_s_hat, loss_s_min, "s")
    t = np.linspace(0, 1, n_grid)
    sup = float(np.max((np.asarray(gg_product(schedule, t)) - eps) ** 2))
    if gv == 0 and gs == 0:
        return 0.0
    return gv / (2 * eps) + sup * gs / (2 * eps)


def optimal_eps(gap_b: float, gap_s: float) -> float:
    """eps* = sqrt(gap_b / gap_s); nan (with a warning) when both gaps vanish."""
    if gap_b < 0 or gap_s < 0:
        warnings.warn("negative loss gap clamped to 0", RuntimeWarning)
        gap_b, gap_s = max(gap_b, 0.0), max(gap_s, 0.0)
    if gap_b == 0 and gap_s == 0:
        warnings.warn("both loss gaps are zero: optimal eps undefined", RuntimeWarning)
        return float("nan")
    if gap_s == 0:
        return math.inf
    return math.sqrt(gap_b / gap_s)


def gaussian_kl(m_p, C_p, m_q, C_q) -> float:
    """KL(N(m_p, C_p) || N(m_q, C_q))."""
    m_p, m_q = np.atleast_1d(m_p).astype(float), np.atleast_1d(m_q).astype(float)
    d = m_p.size
    C_p, C_q = np.asarray(C_p, float).reshape(d, d), np.asarray(C_q, float).reshape(d, d)
    Lq = np.linalg.cholesky(C_q)
    Lp = np.linalg.cholesky(C_p)
    A = np.linalg.solve(Lq, Lp)
    dm = np.linalg.solve(Lq, m_q - m_p)
    return 0.5 * (np.sum(A * A) + dm @ dm - d + 2 * (np.sum(np.log(np.diag(Lq))) - np.sum(np.log(np.diag(Lp)))))


@dataclass
class PerturbedGaussianKL:
    """Exact quantities for b_hat = b + delta, s_hat = s + eta on a single-Gaussian pair."""

    exact_kl: float
    fpe_identity: float
    err2_b: float
    err2_s: float
    bound: float


def perturbed_gaussian_kl(mean0, cov0, mean1, cov1, schedule: Schedule, eps: float, delta, eta,
                          n_grid: int = 2001, n_quad: int = 64) -> PerturbedGaussianKL:
    """KL(rho1 || rho_hat(1)) for constant drift/score offsets, three ways.

    The perturbed law stays Gaussian with the same covariance, so the exact KL
    comes from the moment ODEs; the Fokker-Planck identity
    int E[(grad log rho_hat - grad log rho).(bF_hat - bF)] - eps int E|grad log rho - grad log rho_hat|^2
    is evaluated by Gauss-Legendre quadrature.
    """
    delta = np.atleast_1d(np.asarray(delta, float))
    eta = np.atleast_1d(np.asarray(eta, float))
    k = delta + eps * eta
    grid = np.linspace(0, 1, n_grid)
    M, C = linear_sde_moments(mean0, cov0, schedule, eps, grid, mean1=mean1, cov1=cov1)
    Mh, Ch = linear_sde_moments(mean0, cov0, schedule, eps, grid, mean1=mean1, cov1=cov1, drift_offset=k)
    exact = gaussian_kl(M[-1], C[-1], Mh[-1], Ch[-1])
    nodes, wts = np.polynomial.legendre.leggauss(n_quad)
    tq = 0.5 * (nodes + 1)
    # moments at quadrature nodes: integrate on a grid that contains them
    full = np.unique(np.concatenate([grid, tq]))
    M2, C2 = linear_sde_moments(mean0, cov0, schedule, eps, full, mean1=mean1, cov1=cov1)
    Mh2, _ = linear_sde_moments(mean0, cov0, schedule, eps, full, mean1=mean1, cov1=cov1, drift_offset=k)
    idx = np.searchsorted(full, tq)
    integrand = []
    for i in idx:
        dlog = np.linalg.solve(C2[i], Mh2[i] - M2[i])  # grad log rho_hat - grad log rho (x-independent)
        integrand.append(dlog @ k - eps * dlog @ dlog)
    fpe = 0.5 * float(np.dot(wts, integrand))
    e2b, e2s = float(delta @ delta), float(eta @ eta)
    return PerturbedGaussianKL(float(exact), fpe, e2b, e2s, kl_bound_from_errors(e2b, e2s, eps))
