"""Generative dynamics: probability-flow ODE, forward/backward SDEs, denoiser iteration."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import ode
from .errors import ConfigError, DivideByZeroBeta, MissingScore, NonFinite
from .fields import DriftField, combine, point_mass_field
from .rng import StreamRNG, PURPOSE_SDE
from .schedules import Kind, Schedule


@dataclass(frozen=True)
class EpsSchedule:
    """Diffusion coefficient eps(t) >= 0.

    kinds: constant; ramp (linear rise on [0, t_on], flat, linear fall on
    [t_off, 1]); alpha (C * alpha(t), for one-sided sampling).
    """

    kind: str
    value: float
    t_on: float = 0.0
    t_off: float = 1.0
    alpha: Optional[Callable] = None

    @classmethod
    def constant(cls, eps: float) -> "EpsSchedule":
        if eps < 0:
            raise ConfigError("eps must be nonnegative")
        return cls("constant", float(eps))

    @classmethod
    def ramp(cls, eps: float, t_on: float, t_off: float) -> "EpsSchedule":
        if eps < 0 or not 0 < t_on <= t_off < 1:
            raise ConfigError("ramp needs eps >= 0 and 0 < t_on <= t_off < 1")
        return cls("ramp", float(eps), float(t_on), float(t_off))

    @classmethod
    def alpha_proportional(cls, c: float, schedule: Schedule) -> "EpsSchedule":
        if c < 0:
            raise ConfigError("eps constant must be nonnegative")
        return cls("alpha", float(c), alpha=schedule.alpha)

    @classmethod
    def parse(cls, spec, schedule: Optional[Schedule] = None) -> "EpsSchedule":
        if isinstance(spec, EpsSchedule):
            return spec
        if isinstance(spec, (int, float)):
            return cls.constant(float(spec))
        s = str(spec).strip().lower()
        m = re.fullmatch(r"ramp:([^,]+),([^,]+),([^,]+)", s)
        if m:
            return cls.ramp(*(float(v) for v in m.groups()))
        m = re.fullmatch(r"alpha:(.+)", s)
        if m:
            if schedule is None:
                raise ConfigError("alpha-proportional eps needs a schedule")
            return cls.alpha_proportional(float(m.group(1)), schedule)
        try:
            return cls.constant(float(s))
        except ValueError as exc:
            raise ConfigError(f"bad eps spec {spec!r}") from exc

    def __call__(self, t) -> float:
        t = float(np.asarray(t).reshape(-1)[0]) if np.ndim(t) else float(t)
        if self.kind == "constant":
            return self.value
        if self.kind == "ramp":
            up = t / self.t_on
            down = (1.0 - t) / (1.0 - self.t_off)
            return self.value * float(np.clip(min(up, down), 0.0, 1.0))
        return self.value * max(float(self.alpha(np.array(t))), 0.0)

    @property
    def is_zero(self) -> bool:
        return self.value == 0.0


@dataclass
class TrajectoryBatch:
    times: np.ndarray
    states: np.ndarray  # (n, len(times), d)
    stream_ids: np.ndarray
    integrator: str
    direction: str
    nfev: int = 0

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[:, -1]


def _pack(times, states, streams, integrator, direction, nfev) -> TrajectoryBatch:
    st = np.stack(states, axis=1)
    if not np.all(np.isfinite(st)):
        raise NonFinite("non-finite trajectory state")
    return TrajectoryBatch(np.asarray(times, dtype=np.float64), st, streams, integrator, direction, nfev)


def integrate_ode(b: DriftField, x0_batch, t0: float = 0.0, tf: float = 1.0, method: str = "dopri",
                  steps: int = 100, rtol: float = 1e-6, atol: float = 1e-8, save_times=None,
                  save_every: Optional[int] = None) -> TrajectoryBatch:
    """Solve dX/dt = b(t, X) from t0 to tf (tf < t0 integrates backwards).

    method: "dopri" (adaptive) or a fixed-step "rk4", "heun", "euler".
    """
    x = np.atleast_2d(np.asarray(x0_batch, dtype=np.float64))
    f = lambda t, y: b.evaluate(t, y)
    if method in ("dopri", "dopri5"):
        res = ode.dopri5(f, x, t0, tf, rtol=rtol, atol=atol, save_times=save_times)
        tag = "dopri5"
    else:
        res = ode.fixed_step(f, x, t0, tf, steps, method=method, save_every=save_every)
        tag = method
    return _pack(res.times, res.states, np.arange(x.shape[0], dtype=np.uint64), tag,
                 "forward" if tf >= t0 else "backward", res.nfev)


def sde_run(drift: Callable, noise_var: Callable, x, tau0: float, tau1: float, steps: int, method: str,
            seed: int, streams, on_step: Optional[Callable] = None, save_every: Optional[int] = None):
    """Core stepper for dX = drift(tau, X) dtau + sqrt(2 noise_var(tau)) dW.

    The Brownian increment of step k on path p comes from counter stream p,
    slot k, so runs are reproducible under any batching.  ``on_step`` is
    called as on_step(k, tau, x, tau_next, x_next, x_pred) for accumulators.
    """
    method = {"em": "euler_maruyama", "euler": "euler_maruyama", "euler_maruyama": "euler_maruyama",
              "eulermaruyama": "euler_maruyama", "heun": "heun", "heunstochastic": "heun"}.get(method.lower())
    if method is None:
        raise ConfigError("SDE method must be euler_maruyama or heun")
    rng = StreamRNG(seed)
    x = np.array(x, dtype=np.float64)
    n, d = x.shape
    h = (tau1 - tau0) / steps
    times, states = [tau0], [x.copy()]
    nfev = 0
    for k in range(steps):
        tau = tau0 + k * h
        nv = noise_var(tau)
        noise = None
        if nv > 0:
            noise = np.sqrt(2.0 * nv * abs(h)) * rng.normals(streams, d, slot=k, purpose=PURPOSE_SDE)
        f0 = drift(tau, x)
        nfev += 1
        pred = x + h * f0
        if noise is not None:
            pred = pred + noise
        if method == "heun":
            f1 = drift(tau + h, pred)
            nfev += 1
            xn = x + 0.5 * h * (f0 + f1)
            if noise is not None:
                xn = xn + noise
        else:
            xn = pred
        if not np.all(np.isfinite(xn)):
            raise NonFinite(f"non-finite SDE state at step {k}")
        if on_step is not None:
            on_step(k, tau, x, tau + h, xn, pred)
        x = xn
        if save_every and (k + 1) % save_every == 0 and k + 1 < steps:
            times.append(tau + h)
            states.append(x.copy())
    times.append(tau1)
    states.append(x.copy())
    return np.array(times), states, nfev


def integrate_sde(b: DriftField, s: Optional[DriftField], eps, x_init_batch, direction: str = "forward",
                  steps: int = 1000, method: str = "heun", seed: int = 0, t_lo: float = 0.0, t_hi: float = 1.0,
                  stream_ids=None, save_every: Optional[int] = None) -> TrajectoryBatch:
    """Forward SDE dX = (b + eps s) dt + sqrt(2 eps) dW on [t_lo, t_hi], or the backward SDE.

    The backward run starts from samples at t_hi and is realized by the
    forward process Z_tau with drift -(b - eps s)(1 - tau, Z); the returned
    times are in original time (decreasing).
    """
    eps = EpsSchedule.parse(eps)
    x = np.atleast_2d(np.asarray(x_init_batch, dtype=np.float64))
    streams = np.arange(x.shape[0], dtype=np.uint64) if stream_ids is None else np.asarray(stream_ids, np.uint64)
    if s is None and not eps.is_zero:
        raise MissingScore("eps > 0 needs a score field")
    if direction == "forward":
        bF = combine(b, s, lambda t: eps(t)) if not eps.is_zero else b
        times, states, nfev = sde_run(lambda t, y: bF.evaluate(t, y), eps, x, t_lo, t_hi, steps, method, seed,
                                      streams, save_every=save_every)
    elif direction == "backward":
        bB = combine(b, s, lambda t: -eps(t)) if not eps.is_zero else b
        taus, states, nfev = sde_run(lambda tau, y: -bB.evaluate(1.0 - tau, y), lambda tau: eps(1.0 - tau), x,
                                     1.0 - t_hi, 1.0 - t_lo, steps, method, seed, streams, save_every=save_every)
        times = 1.0 - taus
    else:
        raise ConfigError("direction must be forward or backward")
    return _pack(times, states, streams, method, direction, nfev)


def denoiser_iterate(eta_z: DriftField, schedule: Schedule, z_batch, N: int) -> np.ndarray:
    """Iterate the conditional-mean jump on the grid t_j = j/N starting from X_1 = z."""
    if schedule.kind is not Kind.ONE_SIDED:
        raise ConfigError("denoiser iteration needs a one-sided schedule")
    x = np.atleast_2d(np.asarray(z_batch, dtype=np.float64)).copy()
    grid = np.arange(1, N + 1) / N
    a = np.asarray(schedule.alpha(grid), dtype=np.float64)
    bt = np.asarray(schedule.beta(grid), dtype=np.float64)
    if np.any(bt == 0):
        raise DivideByZeroBeta("beta vanishes on the iteration grid")
    for j in range(N - 1):
        r = bt[j + 1] / bt[j]
        x = r * x + (a[j + 1] - a[j] * r) * eta_z.evaluate(grid[j], x)
    return x


def sure_jump(x, t: float, s: float, eta_z: DriftField, schedule: Schedule) -> np.ndarray:
    """E[x_s | x_t = x] for a one-sided schedule, t in (0, 1]."""
    bt = float(schedule.beta(np.array(t)))
    if bt == 0:
        raise DivideByZeroBeta("beta(t) = 0")
    at = float(schedule.alpha(np.array(t)))
    as_, bs = float(schedule.alpha(np.array(s))), float(schedule.beta(np.array(s)))
    x = np.atleast_2d(x)
    return bs / bt * x + (as_ - at * bs / bt) * eta_z.evaluate(t, x)


def final_denoise(x, t_f: float, schedule: Schedule, eta_z: Optional[DriftField] = None,
                  eta1: Optional[DriftField] = None) -> np.ndarray:
    """Jump from t_f to t = 1 with the conditional mean of x_1.

    Uses eta_1 directly when given; otherwise the one-sided identity
    (x - alpha eta_z) / beta.
    """
    if not 0 < t_f <= 1:
        raise ConfigError("t_f must lie in (0, 1]")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if eta1 is not None:
        return eta1.evaluate(t_f, x)
    if eta_z is None or schedule.kind is not Kind.ONE_SIDED:
        raise ConfigError("final_denoise needs eta1, or eta_z with a one-sided schedule")
    return sure_jump(x, t_f, 1.0, eta_z, schedule)


def sample_point_mass(x0, mix1, a: float, n: int, steps: int = 1000, seed: int = 0, method: str = "em",
                      plateau: Optional[float] = None) -> np.ndarray:
    """Samples of mix1 from the diffusive bridge started at the single point x0."""
    if not a > 0:
        raise ConfigError("a must be positive")
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    u = point_mass_field(x0, mix1, a, plateau=plateau)
    x = np.broadcast_to(x0, (n, x0.size)).copy()
    _, states, _ = sde_run(lambda t, y: u.evaluate(t, y), lambda t: a, x, 0.0, 1.0, steps, method, seed,
                           np.arange(n, dtype=np.uint64))
    return states[-1]
