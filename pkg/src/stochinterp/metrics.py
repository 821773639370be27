"""Evaluation metrics: Scott-rule KDE, control-variate KL, log-density errors, checkerboard target."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from .errors import ConfigError, ZeroDensity
from .rng import StreamRNG, PURPOSE_MISC

LOG_FLOOR = -745.0
KDE_BLOCK = 4_000_000  # query x sample entries per block


def project(x, coords: Optional[Sequence[int]] = (0, 1)) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if coords is None:
        return x
    coords = [c for c in coords if c < x.shape[1]]
    return x[:, coords]


@dataclass(frozen=True)
class KdeModel:
    """Gaussian KDE with a diagonal bandwidth from Scott's rule."""

    samples: np.ndarray
    bandwidth: np.ndarray  # per-coordinate standard deviations

    @classmethod
    def fit(cls, samples, factor: Optional[float] = None) -> "KdeModel":
        x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        if x.shape[0] == 1 and x.shape[1] > 1 and np.ndim(samples) == 1:
            x = x.T
        n, k = x.shape
        if n < 2:
            raise ConfigError("KDE needs at least two samples")
        f = n ** (-1.0 / (k + 4)) if factor is None else factor
        sd = x.std(axis=0, ddof=1)
        if np.any(sd <= 0):
            raise ConfigError("KDE samples have zero spread in some coordinate")
        return cls(x, f * sd)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def log_pdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise ConfigError(f"query dimension {x.shape[1]} != KDE dimension {self.dim}")
        h = self.bandwidth
        xs = self.samples / h
        n, k = self.samples.shape
        norm = -np.log(n) - 0.5 * k * np.log(2 * np.pi) - np.sum(np.log(h))
        sq_s = np.sum(xs * xs, axis=1)
        out = np.empty(x.shape[0])
        chunk = max(1, KDE_BLOCK // n)
        for i in range(0, x.shape[0], chunk):
            q = x[i:i + chunk] / h
            d2 = np.sum(q * q, axis=1)[:, None] + sq_s[None, :] - 2.0 * q @ xs.T
            np.maximum(d2, 0.0, out=d2)
            out[i:i + chunk] = logsumexp(-0.5 * d2, axis=1)
        return np.maximum(out + norm, LOG_FLOOR)

    __call__ = log_pdf


@dataclass(frozen=True)
class KLEstimate:
    value: float
    stderr: float
    n: int


def _as_logp(p) -> Callable:
    if hasattr(p, "log_pdf"):
        return p.log_pdf
    if callable(p):
        return p
    raise ConfigError("expected a density with log_pdf or a log-density callable")


def kl_control_variate(p, q, eval_samples, n_batches: int = 20, strict: bool = False) -> KLEstimate:
    """KL(p || q) from samples of p: mean of log(p/q) + (q/p - 1).

    The added term has zero mean under p and makes every summand
    -log r + r - 1 >= 0 (r = q/p).  With ``strict`` a density
    reaching the log floor raises ZeroDensity instead of being floored.
    """
    x = np.atleast_2d(np.asarray(eval_samples, dtype=np.float64))
    lp = np.asarray(_as_logp(p)(x), dtype=np.float64)
    lq = np.asarray(_as_logp(q)(x), dtype=np.float64)
    if strict and (np.any(lp <= LOG_FLOOR) or np.any(lq <= LOG_FLOOR)):
        raise ZeroDensity("density underflow at an evaluation point")
    lp, lq = np.maximum(lp, LOG_FLOOR), np.maximum(lq, LOG_FLOOR)
    d = lq - lp
    terms = np.expm1(d) - d
    n = terms.size
    nb = max(2, min(n_batches, n))
    means = np.array([b.mean() for b in np.array_split(terms, nb)])
    return KLEstimate(float(terms.mean()), float(means.std(ddof=1) / np.sqrt(nb)), n)


def kde_kl(samples_p, samples_q, eval_samples, coords=(0, 1), p_logpdf=None) -> KLEstimate:
    """KL between the laws of two sample sets, projected onto ``coords``.

    ``p_logpdf`` (on the projected space) replaces the KDE of p when an
    analytic marginal is available.
    """
    q = KdeModel.fit(project(samples_q, coords))
    p = p_logpdf if p_logpdf is not None else KdeModel.fit(project(samples_p, coords))
    return kl_control_variate(p, q, project(eval_samples, coords))


def logdensity_error_stats(model_logp, true_logp, eval_points) -> tuple:
    """(mean, variance) of |model_logp - true_logp| over eval_points."""
    x = np.atleast_2d(np.asarray(eval_points, dtype=np.float64))
    a = np.asarray(model_logp(x) if callable(model_logp) else model_logp, dtype=np.float64)
    b = np.asarray(true_logp(x) if callable(true_logp) else true_logp, dtype=np.float64)
    e = np.abs(a - b)
    return float(e.mean()), float(e.var())


# --- checkerboard -------------------------------------------------------------

CHECKER_LO, CHECKER_HI, CHECKER_CELLS = -2.0, 2.0, 4


def _black_cells() -> np.ndarray:
    ij = [(i, j) for i in range(CHECKER_CELLS) for j in range(CHECKER_CELLS) if (i + j) % 2 == 0]
    return np.array(ij, dtype=np.float64)


def checkerboard_sampler(n: int, seed: int = 0, stream_offset: int = 0) -> np.ndarray:
    """Uniform samples on the 8 black unit squares of a 4x4 board over [-2, 2]^2."""
    cells = _black_cells()
    streams = np.arange(stream_offset, stream_offset + n, dtype=np.uint64)
    rng = StreamRNG(seed)
    idx = rng.integers(streams, len(cells), purpose=PURPOSE_MISC)
    u = rng.uniforms(streams, 2, slot=1, purpose=PURPOSE_MISC)
    return CHECKER_LO + cells[idx] + u


def checkerboard_logp(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    inside = np.all((x >= CHECKER_LO) & (x < CHECKER_HI), axis=1)
    cell = np.floor(x - CHECKER_LO).astype(np.int64)
    black = (cell.sum(axis=1) % 2 == 0) & inside
    return np.where(black, -np.log(8.0), LOG_FLOOR)


def checkerboard_cell_counts(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cell = np.clip(np.floor(x - CHECKER_LO).astype(np.int64), 0, CHECKER_CELLS - 1)
    counts = np.zeros((CHECKER_CELLS, CHECKER_CELLS), dtype=np.int64)
    np.add.at(counts, (cell[:, 0], cell[:, 1]), 1)
    return counts


# --- grid dumps -----------------------------------------------------------------

def grid_2d(lo: float, hi: float, n: int) -> tuple:
    g = np.linspace(lo, hi, n)
    gx, gy = np.meshgrid(g, g, indexing="ij")
    return g, np.column_stack([gx.ravel(), gy.ravel()])


def kde_mass_2d(kde: KdeModel, lo: float, hi: float, n: int = 400) -> float:
    """Trapezoid integral of a 1D or 2D KDE over [lo, hi]^k."""
    g = np.linspace(lo, hi, n)
    if kde.dim == 1:
        return float(trapezoid(np.exp(kde.log_pdf(g[:, None])), g))
    _, pts = grid_2d(lo, hi, n)
    vals = np.exp(kde.log_pdf(pts)).reshape(n, n)
    return float(trapezoid(trapezoid(vals, g, axis=1), g))


def write_grid_csv(path, points, values, header=("x", "y", "value")) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for p, v in zip(np.atleast_2d(points), np.asarray(values).reshape(-1)):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
