"""Rectified flows: re-interpolate between z and the flow endpoint X1(z) along straight lines."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .fields import DriftField, learned_field
from .interpolant import InterpolantBatch, _parse_time_mode, _times, load_matrix, save_matrix
from .regression import FeatureMap, FeatureModel, Objective, fit
from .rng import StreamRNG, PURPOSE_LATENT
from .samplers import integrate_ode
from .schedules import Kind, Schedule


@dataclass
class PairTable:
    """Cached (z, X1(z)) pairs; the flow is solved once per z."""

    z: np.ndarray
    x1: np.ndarray

    def __post_init__(self):
        if self.z.shape != self.x1.shape:
            raise ConfigError("pair table columns must have equal shapes")

    def __len__(self) -> int:
        return self.z.shape[0]

    @property
    def d(self) -> int:
        return self.z.shape[1]

    def save(self, path) -> None:
        save_matrix(path, np.concatenate([self.z, self.x1], axis=1))

    @classmethod
    def load(cls, path) -> "PairTable":
        m = load_matrix(path)
        if m.shape[1] % 2:
            raise ConfigError(f"{path}: pair table needs an even number of columns")
        d = m.shape[1] // 2
        return cls(m[:, :d].copy(), m[:, d:].copy())


def flow_endpoint_map(b: DriftField, method: str = "dopri", steps: int = 100, rtol: float = 1e-6,
                      atol: float = 1e-8, batch: int = 20_000) -> Callable[[np.ndarray], np.ndarray]:
    """z -> X1(z), the time-one map of dX/dt = b(t, X)."""
    def endpoint(z):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        out = np.empty_like(z)
        for s in range(0, z.shape[0], batch):
            out[s:s + batch] = integrate_ode(b, z[s:s + batch], 0.0, 1.0, method=method, steps=steps,
                                             rtol=rtol, atol=atol).endpoint
        return out
    return endpoint


def build_pair_table(endpoint_map: Callable, n: int, d: int, seed: int = 0, stream_offset: int = 0) -> PairTable:
    streams = np.arange(stream_offset, stream_offset + n, dtype=np.uint64)
    z = StreamRNG(seed).normals(streams, d, purpose=PURPOSE_LATENT)
    return PairTable(z, np.asarray(endpoint_map(z), dtype=np.float64))


def build_rectified_draws(pairs, schedule: Schedule, n: Optional[int] = None, time_mode="uniform",
                          seed: int = 0, endpoint_map: Optional[Callable] = None, d: Optional[int] = None,
                          ) -> InterpolantBatch:
    """Draws (t, z, X1(z), x_rec_t) with x_rec_t = alpha(t) z + beta(t) X1(z).

    ``pairs`` is a PairTable, or None together with ``endpoint_map``, ``n``
    and ``d`` to build one.  The batch is tagged one-sided so its BRec
    target is alpha' z + beta' X1(z).
    """
    if schedule.kind is not Kind.ONE_SIDED:
        raise ConfigError("rectification uses a one-sided schedule")
    if pairs is None:
        if endpoint_map is None or n is None or d is None:
            raise ConfigError("need a pair table or (endpoint_map, n, d)")
        pairs = build_pair_table(endpoint_map, n, d, seed=seed)
    m = len(pairs)
    streams = np.arange(m, dtype=np.uint64)
    mode, val = _parse_time_mode(time_mode)
    t = _times(mode, val, streams, seed, 0.0, 1.0)
    a, b = (np.asarray(f(t), dtype=np.float64)[:, None] for f in (schedule.alpha, schedule.beta))
    xt = a * pairs.z + b * pairs.x1
    return InterpolantBatch(t, pairs.z.copy(), pairs.x1.copy(), pairs.z.copy(), xt, streams, False,
                            Kind.ONE_SIDED, (0.0, 1.0))


def fit_rectified(draws: InterpolantBatch, schedule: Schedule, fmap: FeatureMap,
                  ridge_lambda: float = 1e-6) -> FeatureModel:
    return fit(Objective.B_REC, draws, schedule, fmap, ridge_lambda)


@dataclass
class StraightnessReport:
    max_deviation: float
    endpoint_error: float
    times: np.ndarray
    deviation_by_time: np.ndarray


def verify_straightness(model, test_z, x1_of_z, schedule: Schedule, steps: int = 100,
                        method: str = "rk4") -> StraightnessReport:
    """max_t |X_rec_t(z) - (alpha(t) z + beta(t) X1(z))| along the fitted rectified flow.

    ``x1_of_z`` is the endpoint array for ``test_z`` or a map producing it.
    """
    z = np.atleast_2d(np.asarray(test_z, dtype=np.float64))
    x1 = np.asarray(x1_of_z(z) if callable(x1_of_z) else x1_of_z, dtype=np.float64)
    field = model if isinstance(model, DriftField) else learned_field(model)
    tr = integrate_ode(field, z, 0.0, 1.0, method=method, steps=steps, save_every=1)
    t = tr.times
    a, b = (np.asarray(f(t), dtype=np.float64) for f in (schedule.alpha, schedule.beta))
    line = a[None, :, None] * z[:, None, :] + b[None, :, None] * x1[:, None, :]
    dev = np.linalg.norm(tr.states - line, axis=2)
    return StraightnessReport(float(dev.max()), float(dev[:, -1].max()), t, dev.max(axis=0))


def single_step_readout(model, x, schedule: Schedule) -> np.ndarray:
    """X1(x) read off the rectified field at t = 0: b_rec(0, x) = alpha'(0) x + beta'(0) X1(x)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    da0, db0 = (float(f(np.array(0.0))) for f in (schedule.d_alpha, schedule.d_beta))
    if db0 == 0:
        raise ConfigError("beta'(0) = 0: the endpoint cannot be read off at t = 0")
    return (model(0.0, x) - da0 * x) / db0
