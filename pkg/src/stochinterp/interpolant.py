"""Sampling x_t = alpha(t) x0 + beta(t) x1 + gamma(t) z from endpoint sources."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import EmptySource, ConfigError, InvalidCombination
from .gmm_oracle import GaussianMixture
from .rng import StreamRNG, PURPOSE_TIME, PURPOSE_LATENT, PURPOSE_SOURCE0, PURPOSE_SOURCE1
from .schedules import Kind, Schedule


@dataclass(frozen=True)
class PointMass:
    x0: np.ndarray

    @property
    def d(self) -> int:
        return int(np.asarray(self.x0).size)


@dataclass(frozen=True)
class Dataset:
    rows: np.ndarray

    @property
    def d(self) -> int:
        return self.rows.shape[1]


Source = Union[GaussianMixture, Dataset, PointMass, np.ndarray]


def as_source(src) -> Source:
    if isinstance(src, (GaussianMixture, Dataset, PointMass)):
        return src
    arr = np.asarray(src, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigError("dataset sources must be 2-D arrays")
    return Dataset(arr)


def sample_source(src, streams, seed: int, purpose: int) -> np.ndarray:
    src = as_source(src)
    streams = np.asarray(streams)
    if isinstance(src, GaussianMixture):
        return src.sample(len(streams), seed, streams=streams, purpose=purpose)
    if isinstance(src, PointMass):
        return np.broadcast_to(np.asarray(src.x0, dtype=np.float64).reshape(1, -1), (len(streams), src.d)).copy()
    if src.rows.shape[0] == 0:
        raise EmptySource("dataset source has no rows")
    idx = StreamRNG(seed).integers(streams, src.rows.shape[0], purpose=purpose)
    return src.rows[idx]


@dataclass(frozen=True)
class Coupling:
    """Independent product of two sources, or a table of paired rows."""

    mode: str
    source0: Optional[Source] = None
    source1: Optional[Source] = None
    pairs0: Optional[np.ndarray] = None
    pairs1: Optional[np.ndarray] = None

    @classmethod
    def independent(cls, source0, source1) -> "Coupling":
        return cls("independent", as_source(source0), as_source(source1))

    @classmethod
    def paired(cls, x0, x1) -> "Coupling":
        x0, x1 = np.asarray(x0, dtype=np.float64), np.asarray(x1, dtype=np.float64)
        if x0.shape != x1.shape or x0.ndim != 2:
            raise ConfigError("paired coupling needs two arrays of equal shape (n, d)")
        return cls("paired", pairs0=x0, pairs1=x1)

    @property
    def d(self) -> int:
        if self.mode == "paired":
            return self.pairs0.shape[1]
        return as_source(self.source1).d

    def sample(self, streams, seed: int):
        if self.mode == "paired":
            if self.pairs0.shape[0] == 0:
                raise EmptySource("pair table has no rows")
            idx = StreamRNG(seed).integers(streams, self.pairs0.shape[0], purpose=PURPOSE_SOURCE0)
            return self.pairs0[idx], self.pairs1[idx]
        return (sample_source(self.source0, streams, seed, PURPOSE_SOURCE0),
                sample_source(self.source1, streams, seed, PURPOSE_SOURCE1))


@dataclass(frozen=True)
class InterpolantDraw:
    t: float
    x0: np.ndarray
    x1: np.ndarray
    z: np.ndarray
    xt: np.ndarray
    stream_id: int


@dataclass
class InterpolantBatch:
    """Struct-of-arrays batch of interpolant draws.

    For antithetic batches rows 2k and 2k+1 share (t, x0, x1) and carry z, -z.
    One-sided batches store the latent both in ``z`` and ``x0``.
    """

    t: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    z: np.ndarray
    xt: np.ndarray
    stream_id: np.ndarray
    antithetic: bool
    kind: Kind
    t_window: tuple

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def d(self) -> int:
        return self.xt.shape[1]

    def __getitem__(self, i: int) -> InterpolantDraw:
        return InterpolantDraw(float(self.t[i]), self.x0[i], self.x1[i], self.z[i], self.xt[i], int(self.stream_id[i]))

    def subset(self, sl) -> "InterpolantBatch":
        return InterpolantBatch(self.t[sl], self.x0[sl], self.x1[sl], self.z[sl], self.xt[sl], self.stream_id[sl],
                                self.antithetic, self.kind, self.t_window)


def _parse_time_mode(time_mode):
    if isinstance(time_mode, (int, float)):
        return "fixed", float(time_mode)
    if isinstance(time_mode, tuple):
        return time_mode[0].lower(), float(time_mode[1])
    tm = str(time_mode).lower()
    if tm.startswith("fixed"):
        return "fixed", float(tm.split(":")[1])
    if tm not in ("uniform", "stratified", "arcsine"):
        raise ConfigError(f"unknown time mode {time_mode!r}")
    return tm, None


def _times(mode, val, streams, seed, t_lo, t_hi):
    m = len(streams)
    if mode == "fixed":
        return np.full(m, val)
    u = StreamRNG(seed).uniforms(streams, 1, purpose=PURPOSE_TIME)[:, 0]
    if mode == "stratified":
        return t_lo + (t_hi - t_lo) * (np.arange(m) + u) / m
    if mode == "arcsine":
        # density ~ 1/sqrt(t(1-t)); puts more draws where the targets are noisiest
        return t_lo + (t_hi - t_lo) * np.sin(0.5 * np.pi * u) ** 2
    return t_lo + (t_hi - t_lo) * u


def _assemble(schedule, t, x0, x1, z, streams, antithetic, window):
    if antithetic:
        rep = lambda a: np.repeat(a, 2, axis=0)
        t, x0, x1, streams = rep(t), rep(x0), rep(x1), rep(streams)
        z2 = np.empty((2 * z.shape[0], z.shape[1]))
        z2[0::2], z2[1::2] = z, -z
        z = z2
        if schedule.kind is Kind.ONE_SIDED:
            x0 = z
    a, b, g = (np.asarray(f(t), dtype=np.float64)[:, None] for f in (schedule.alpha, schedule.beta, schedule.gamma))
    xt = a * x0 + b * x1 + g * z
    return InterpolantBatch(t, x0, x1, z, xt, streams.astype(np.uint64), antithetic, schedule.kind, window)


def draw_batch(schedule: Schedule, coupling: Coupling, n: int, time_mode="uniform", antithetic: bool = False,
               seed: int = 0, t_lo: float = 0.0, t_hi: float = 1.0, stream_offset: int = 0) -> InterpolantBatch:
    """Draw n two-sided interpolant samples.

    ``time_mode`` is "uniform", "stratified", "arcsine" or a fixed time (number or
    ("fixed", t)).  Draw k uses stream ``stream_offset + k`` (pair index when
    antithetic), so results do not depend on how a run is split into batches.
    """
    if schedule.kind is Kind.ONE_SIDED:
        return draw_one_sided(schedule, coupling.source1 if coupling.mode != "paired" else coupling,
                              n, time_mode, seed, antithetic=antithetic, t_lo=t_lo, t_hi=t_hi,
                              stream_offset=stream_offset)
    if schedule.kind is Kind.MIRROR:
        return draw_mirror(schedule, coupling.source1, n, time_mode, seed, antithetic=antithetic,
                           t_lo=t_lo, t_hi=t_hi, stream_offset=stream_offset)
    if n < 1 or (antithetic and n % 2):
        raise ConfigError("n must be positive (and even for antithetic draws)")
    m = n // 2 if antithetic else n
    streams = np.arange(stream_offset, stream_offset + m, dtype=np.uint64)
    mode, val = _parse_time_mode(time_mode)
    t = _times(mode, val, streams, seed, t_lo, t_hi)
    x0, x1 = coupling.sample(streams, seed)
    z = StreamRNG(seed).normals(streams, x0.shape[1], purpose=PURPOSE_LATENT)
    return _assemble(schedule, t, x0, x1, z, streams, antithetic, (t_lo, t_hi))


def draw_one_sided(schedule: Schedule, target, n: int, time_mode="uniform", seed: int = 0,
                   antithetic: bool = False, t_lo: float = 0.0, t_hi: float = 1.0,
                   stream_offset: int = 0) -> InterpolantBatch:
    """x_t = alpha(t) z + beta(t) x1; ``target`` may also be a paired Coupling (z, x1)."""
    if schedule.kind is not Kind.ONE_SIDED:
        raise InvalidCombination("draw_one_sided needs a one-sided schedule")
    if n < 1 or (antithetic and n % 2):
        raise ConfigError("n must be positive (and even for antithetic draws)")
    m = n // 2 if antithetic else n
    streams = np.arange(stream_offset, stream_offset + m, dtype=np.uint64)
    mode, val = _parse_time_mode(time_mode)
    t = _times(mode, val, streams, seed, t_lo, t_hi)
    if isinstance(target, Coupling) and target.mode == "paired":
        if antithetic:
            raise ConfigError("antithetic pairing is not defined for paired latents")
        z, x1 = target.sample(streams, seed)
    else:
        x1 = sample_source(target, streams, seed, PURPOSE_SOURCE1)
        z = StreamRNG(seed).normals(streams, x1.shape[1], purpose=PURPOSE_LATENT)
    return _assemble(schedule, t, z, x1, z, streams, antithetic, (t_lo, t_hi))


def draw_mirror(schedule: Schedule, target, n: int, time_mode="uniform", seed: int = 0,
                antithetic: bool = False, t_lo: float = 0.0, t_hi: float = 1.0,
                stream_offset: int = 0) -> InterpolantBatch:
    """x_t = x1 + gamma(t) z."""
    if schedule.kind is not Kind.MIRROR:
        raise InvalidCombination("draw_mirror needs a mirror schedule")
    if n < 1 or (antithetic and n % 2):
        raise ConfigError("n must be positive (and even for antithetic draws)")
    m = n // 2 if antithetic else n
    streams = np.arange(stream_offset, stream_offset + m, dtype=np.uint64)
    mode, val = _parse_time_mode(time_mode)
    t = _times(mode, val, streams, seed, t_lo, t_hi)
    x1 = sample_source(target, streams, seed, PURPOSE_SOURCE1)
    z = StreamRNG(seed).normals(streams, x1.shape[1], purpose=PURPOSE_LATENT)
    return _assemble(schedule, t, x1, x1, z, streams, antithetic, (t_lo, t_hi))


# --- dataset files -------------------------------------------------------

def load_matrix(path) -> np.ndarray:
    """Read a CSV file or a little-endian f64 matrix with a (rows, cols) u32 header."""
    p = Path(path)
    if p.suffix.lower() in (".csv", ".txt"):
        arr = np.loadtxt(p, delimiter=",", ndmin=2, dtype=np.float64)
        return arr
    raw = p.read_bytes()
    if len(raw) < 8:
        raise ConfigError(f"{path}: truncated matrix header")
    rows, cols = struct.unpack("<II", raw[:8])
    body = np.frombuffer(raw, dtype="<f8", offset=8)
    if body.size != rows * cols:
        raise ConfigError(f"{path}: expected {rows}x{cols} values, found {body.size}")
    return body.reshape(rows, cols).astype(np.float64)


def save_matrix(path, arr) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    p = Path(path)
    if p.suffix.lower() in (".csv", ".txt"):
        np.savetxt(p, arr, delimiter=",", fmt="%.17g")
        return
    with open(p, "wb") as fh:
        fh.write(struct.pack("<II", *arr.shape))
        fh.write(arr.astype("<f8").tobytes())
