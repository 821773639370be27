"""Desk-scale experiment recipes; each takes a dataclass config and returns metric rows."""
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from . import gmm_oracle as go
from .errors import ConfigError
from .fields import (DriftField, learned_fields, score_from_denoiser, velocity_from_v_and_denoiser,
                     velocity_from_v_and_score)
from .interpolant import Coupling, Dataset, draw_batch
from .likelihood import density_feynman_kac, log_density_ode
from .metrics import checkerboard_logp, checkerboard_sampler, kde_kl, logdensity_error_stats
from .regression import FeatureMap, Objective, fit_many, median_bandwidth, training_window
from .samplers import integrate_ode, integrate_sde
from .schedules import gg_product, make_schedule

WORKERS_ENV = "STOCHINTERP_WORKERS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc


def parallel_map(fn: Callable, items: Iterable) -> list:
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(n, len(items))) as ex:
        return list(ex.map(fn, items))


# --- oracle PDE suite -----------------------------------------------------------

ORACLE_SCHEDULES = (("linear", "bb:a=1"), ("trig", "quad"), ("linear", "sin2"), ("encdec", "sin2"),
                    ("linear", "sigmoid:f=20"))


@dataclass
class OracleCheck:
    mixture: int
    d: int
    schedule: str
    te_residual: float
    fpe_residual: dict
    score_error: float
    decomposition_error: float
    max_rho: float
    seconds: float


def _fd_flux_divergence(fn, t, x, h):
    """sum_i d/dx_i fn(t, x)_i by central differences."""
    out = np.zeros(x.shape[0])
    for i in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[i] = h
        out += (fn(t, x + e)[:, i] - fn(t, x - e)[:, i]) / (2 * h)
    return out


def _fd_laplacian(fn, t, x, h):
    out = np.zeros(x.shape[0])
    f0 = fn(t, x)
    for i in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[i] = h
        out += (fn(t, x + e) - 2 * f0 + fn(t, x - e)) / (h * h)
    return out


def oracle_pde_check(mix0, mix1, schedule, n_points: int = 200, eps_values=(0.5, 1.0), seed: int = 0,
                     t_range=(0.05, 0.95), h_t: float = 1e-5, h_x: float = 1e-4, h_s: float = 1e-6) -> dict:
    """Finite-difference residuals of the transport and Fokker-Planck equations.

    All spatial and time derivatives are taken numerically from the oracle's
    density and drifts, so the check does not reuse the closed-form divergences.
    """
    draws = draw_batch(schedule, Coupling.independent(mix0, mix1), n_points, time_mode="uniform", seed=seed,
                       t_lo=t_range[0], t_hi=t_range[1])
    t, x = draws.t, draws.xt
    rho = lambda tt, xx: np.exp(go.log_density(mix0, mix1, schedule, tt, xx))
    ev = lambda tt, xx: go.evaluate(mix0, mix1, schedule, tt, xx, fields=("velocity", "score", "v"))
    r = rho(t, x)
    dt_rho = (rho(t + h_t, x) - rho(t - h_t, x)) / (2 * h_t)
    flux = lambda tt, xx: ev(tt, xx).velocity * rho(tt, xx)[:, None]
    te = dt_rho + _fd_flux_divergence(flux, t, x, h_x)
    lap = _fd_laplacian(rho, t, x, h_x)
    fpe = {}
    for eps in eps_values:
        fl = lambda tt, xx, e=eps: (lambda f: (f.velocity + e * f.score) * rho(tt, xx)[:, None])(ev(tt, xx))
        fpe[float(eps)] = float(np.max(np.abs(dt_rho + _fd_flux_divergence(fl, t, x, h_x) - eps * lap)))
    f = ev(t, x)
    logr = lambda tt, xx: go.log_density(mix0, mix1, schedule, tt, xx)
    grad = np.stack([(logr(t, x + h_s * e) - logr(t, x - h_s * e)) / (2 * h_s) for e in np.eye(x.shape[1])], 1)
    gg = np.asarray(gg_product(schedule, t)).reshape(-1, 1)
    return dict(te=float(np.max(np.abs(te))), fpe=fpe, score=float(np.max(np.abs(grad - f.score))),
                decomposition=float(np.max(np.abs(f.velocity - (f.v - gg * f.score)))),
                max_rho=float(r.max()))


def gmm_oracle_check(n_mixtures: int = 10, n_points: int = 200, eps_values=(0.5, 1.0), seed: int = 0,
                     max_dim: int = 3, sigma: float = 2.0) -> list:
    out = []
    for k in range(n_mixtures):
        t0 = time.time()
        d = 1 + k % max_dim
        rng = np.random.default_rng([seed, k])
        mix0 = go.GaussianMixture.random(int(rng.integers(1, 4)), d, seed=int(rng.integers(1 << 30)), sigma=sigma)
        mix1 = go.GaussianMixture.random(int(rng.integers(1, 4)), d, seed=int(rng.integers(1 << 30)), sigma=sigma)
        name, gamma = ORACLE_SCHEDULES[k % len(ORACLE_SCHEDULES)]
        sched = make_schedule(name, gamma)
        r = oracle_pde_check(mix0, mix1, sched, n_points, eps_values, seed=seed + k)
        out.append(OracleCheck(k, d, sched.ident, r["te"], r["fpe"], r["score"], r["decomposition"], r["max_rho"],
                               time.time() - t0))
    return out


# --- KL versus eps on a random mixture ------------------------------------------------

@dataclass
class KLCurveConfig:
    d: int = 8
    n_modes: int = 5
    mixture_seed: int = 0
    sigma: float = 7.5
    schedule: tuple = ("linear", "bb:a=1")
    pairs: tuple = (("b", "s"), ("b", "eta"), ("v", "s"), ("v", "eta"))
    eps_grid: tuple = tuple(round(0.1 * k, 1) for k in range(17))
    n_train: int = 200_000
    features: int = 512
    bandwidth_factor: float = 0.5
    ridge_lambda: float = 1e-6
    n_samples: int = 4000
    steps: int = 150
    method: str = "heun"
    t0: float = 1e-4
    seed: int = 0
    coords: tuple = (0, 1)


def _drift_pair(kind_b: str, kind_s: str, models: dict, schedule) -> tuple:
    order = [Objective.B, Objective.V, Objective.S, Objective.ETA_Z]
    fs = dict(zip(order, learned_fields(*[models[o] for o in order])))
    score = fs[Objective.S] if kind_s == "s" else score_from_denoiser(fs[Objective.ETA_Z], schedule)
    if kind_b == "b":
        drift = fs[Objective.B]
    elif kind_s == "s":
        drift = velocity_from_v_and_score(fs[Objective.V], fs[Objective.S], schedule)
    else:
        drift = velocity_from_v_and_denoiser(fs[Objective.V], fs[Objective.ETA_Z], schedule)
    return drift, score


def fit_gmm_models(cfg: KLCurveConfig):
    mix0 = go.GaussianMixture.standard_normal(cfg.d)
    mix1 = go.GaussianMixture.random(cfg.n_modes, cfg.d, seed=cfg.mixture_seed, sigma=cfg.sigma)
    sched = make_schedule(*cfg.schedule)
    lo, hi = training_window(Objective.S, sched)
    draws = draw_batch(sched, Coupling.independent(mix0, mix1), cfg.n_train, time_mode="arcsine", antithetic=True,
                       seed=cfg.seed + 1, t_lo=lo, t_hi=hi)
    bw = cfg.bandwidth_factor * median_bandwidth(draws.xt, seed=cfg.seed)
    fmap = FeatureMap.random_fourier(cfg.d, cfg.features, bw, tau_scale=2 * bw, seed=cfg.seed + 2,
                                     include_linear=True)
    models = fit_many([Objective.B, Objective.V, Objective.S, Objective.ETA_Z], draws, sched, fmap,
                      cfg.ridge_lambda)
    return mix0, mix1, sched, models


def sample_endpoints(drift: DriftField, score: DriftField, eps: float, x0, t0: float, steps: int, seed: int,
                     method: str = "heun"):
    """Adaptive ODE for eps = 0, a fixed-step SDE otherwise, on [t0, 1 - t0]."""
    if eps == 0:
        return integrate_ode(drift, x0, t0, 1.0 - t0, method="dopri").endpoint
    return integrate_sde(drift, score, eps, x0, steps=steps, method=method, seed=seed, t_lo=t0,
                         t_hi=1.0 - t0).endpoint


def _kl_pair(args):
    cfg, models, (kb, ks), x0, ref, held = args
    drift, score = _drift_pair(kb, ks, models, make_schedule(*cfg.schedule))
    rows = []
    for eps in cfg.eps_grid:
        t_start = time.time()
        xe = sample_endpoints(drift, score, float(eps), x0, cfg.t0, cfg.steps, cfg.seed + 6, cfg.method)
        kl = kde_kl(ref, xe, held, coords=cfg.coords)
        rows.append(dict(pair=f"{kb},{ks}", eps=float(eps), kl=kl.value, stderr=kl.stderr,
                         seconds=time.time() - t_start))
    return rows


def gmm_kl_curve(cfg: Optional[KLCurveConfig] = None, log: Optional[Callable] = None) -> list:
    """Rows (pair, eps, kl, stderr, seconds) of KDE-KL(rho1 || rho_hat1) on the first two coordinates.

    Every eps and pair uses the same start points and noise seed (common
    random numbers).  Pairs run in parallel when workers are available.
    """
    cfg = cfg or KLCurveConfig()
    mix0, mix1, sched, models = fit_gmm_models(cfg)
    x0 = mix0.sample(cfg.n_samples, seed=cfg.seed + 3)
    ref = mix1.sample(cfg.n_samples, seed=cfg.seed + 4)
    held = mix1.sample(cfg.n_samples, seed=cfg.seed + 5)
    per_pair = parallel_map(_kl_pair, [(cfg, models, tuple(p), x0, ref, held) for p in cfg.pairs])
    rows = [r for rows in per_pair for r in rows]
    if log:
        for r in rows:
            log(r)
    return rows


# --- checkerboard -----------------------------------------------------------------

@dataclass
class CheckerboardConfig:
    schedule: str = "linear"
    gammas: tuple = ("none", "bb:a=1", "quad", "sigmoid:f=20", "sin2")
    eps_grid: tuple = (0.0, 0.5, 1.0, 2.5)
    n_train: int = 100_000
    features: int = 512
    bandwidth: float = 0.5
    ridge_lambda: float = 1e-6
    n_eval: int = 100
    n_paths: int = 100
    steps: int = 50
    method: str = "heun"
    seed: int = 0


def _checkerboard_cell(args):
    cfg, gamma = args
    sched = make_schedule(cfg.schedule, gamma)
    d = 2
    data = Dataset(checkerboard_sampler(cfg.n_train, seed=cfg.seed + 1))
    base = go.GaussianMixture.standard_normal(d)
    coupling = Coupling.independent(base, data)
    fmap = FeatureMap.random_fourier(d, cfg.features, cfg.bandwidth, tau_scale=1.0, seed=cfg.seed + 2,
                                     include_linear=True)
    lo, hi = training_window(Objective.S, sched)
    draws = draw_batch(sched, coupling, cfg.n_train, time_mode="arcsine", antithetic=True, seed=cfg.seed + 3,
                       t_lo=lo, t_hi=hi)
    models = fit_many([Objective.B, Objective.S], draws, sched, fmap, cfg.ridge_lambda)
    b, s = learned_fields(models[Objective.B], models[Objective.S])
    pts = checkerboard_sampler(cfg.n_eval, seed=cfg.seed + 4, stream_offset=cfg.n_train)
    rows = []
    for eps in cfg.eps_grid:
        if eps == 0:
            logp = log_density_ode(b, base, pts).log_density
        else:
            logp = density_feynman_kac(b, s, eps, base, pts, n_paths=cfg.n_paths, steps=cfg.steps,
                                       seed=cfg.seed + 5, method=cfg.method, min_ess=1.0).log_density
        mean, var = logdensity_error_stats(logp, checkerboard_logp, pts)
        rows.append(dict(gamma=gamma, eps=float(eps), mean_abs_err=mean, var_abs_err=var))
    return rows


def checkerboard(cfg: Optional[CheckerboardConfig] = None) -> list:
    cfg = cfg or CheckerboardConfig()
    cells = parallel_map(_checkerboard_cell, [(cfg, g) for g in cfg.gammas])
    return [r for rows in cells for r in rows]


EXPERIMENTS = ("gmm-oracle-check", "checkerboard", "gmm-kl-curve")
