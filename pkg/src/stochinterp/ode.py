"""Batched ODE integrators: fixed-step Euler/Heun/RK4 and adaptive Dormand-Prince 5(4).

All paths in a batch share the time grid; the adaptive controller uses the
worst path's error.  Integration may run backwards (tf < t0).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonFinite, StepUnderflow, ConfigError

Rhs = Callable[[float, np.ndarray], np.ndarray]

# Dormand-Prince tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass
class OdeResult:
    times: np.ndarray
    states: list  # one array per saved time
    nfev: int
    nsteps: int


def _check(y):
    if not np.all(np.isfinite(y)):
        raise NonFinite("non-finite state during integration")


def fixed_step(f: Rhs, y0: np.ndarray, t0: float, tf: float, steps: int, method: str = "rk4",
               save_every: Optional[int] = None) -> OdeResult:
    """Fixed-step integration with ``steps`` uniform steps."""
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    y = np.array(y0, dtype=np.float64)
    h = (tf - t0) / steps
    times, states = [t0], [y.copy()]
    nfev = 0
    for k in range(steps):
        t = t0 + k * h
        if method == "euler":
            y = y + h * f(t, y)
            nfev += 1
        elif method == "heun":
            k1 = f(t, y)
            k2 = f(t + h, y + h * k1)
            y = y + 0.5 * h * (k1 + k2)
            nfev += 2
        elif method == "rk4":
            k1 = f(t, y)
            k2 = f(t + h / 2, y + h / 2 * k1)
            k3 = f(t + h / 2, y + h / 2 * k2)
            k4 = f(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            nfev += 4
        else:
            raise ConfigError(f"unknown fixed-step method {method!r}")
        _check(y)
        if save_every and (k + 1) % save_every == 0 and k + 1 < steps:
            times.append(t0 + (k + 1) * h)
            states.append(y.copy())
    times.append(tf)
    states.append(y.copy())
    return OdeResult(np.array(times), states, nfev, steps)


def dopri5(f: Rhs, y0: np.ndarray, t0: float, tf: float, rtol: float = 1e-6, atol: float = 1e-8,
           save_times: Optional[Sequence[float]] = None, h0: Optional[float] = None,
           max_steps: int = 1_000_000) -> OdeResult:
    """Adaptive Dormand-Prince 5(4) with a shared step across the batch.

    Output times in ``save_times`` are hit exactly by clipping the step.
    """
    y = np.array(y0, dtype=np.float64)
    direction = 1.0 if tf >= t0 else -1.0
    span = abs(tf - t0)
    targets = sorted({float(s) for s in (save_times or [])} | {float(tf)}, key=lambda s: direction * (s - t0))
    times, states = [t0], [y.copy()]
    if span == 0:
        return OdeResult(np.array([t0]), [y.copy()], 0, 0)

    def norm(e, ya, yb):
        sc = atol + rtol * np.maximum(np.abs(ya), np.abs(yb))
        r = (e / sc).reshape(e.shape[0], -1) if e.ndim > 1 else (e / sc)[None]
        return float(np.max(np.sqrt(np.mean(r * r, axis=1))))

    t = t0
    k1 = f(t, y)
    nfev = 1
    if h0 is None:
        d0 = norm(y, y, y) if np.any(y) else 0.0
        d1 = norm(k1, y, y)
        h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6
        h = min(max(h, 1e-6), span) if span > 0 else 0.0
        h = min(h, 0.1 * span)
    else:
        h = abs(h0)
    nsteps = 0
    ti = 0
    while ti < len(targets):
        target = targets[ti]
        rem = abs(target - t)
        if rem <= 1e-14 * max(1.0, abs(target)):
            t = target
            if target != t0 or ti > 0:
                times.append(t)
                states.append(y.copy())
            ti += 1
            continue
        hs = min(h, rem)
        if hs < 1e-12:
            raise StepUnderflow(f"step size {hs:.3e} below 1e-12 at t={t:.6g}")
        ks = [k1]
        for i in range(1, 7):
            yi = y + direction * hs * sum(a * k for a, k in zip(_A[i], ks))
            ks.append(f(t + direction * hs * _C[i], yi))
        nfev += 6
        y5 = y + direction * hs * sum(b * k for b, k in zip(_B5, ks) if b != 0)
        err = direction * hs * sum(e * k for e, k in zip(_E, ks) if e != 0)
        en = norm(err, y, y5)
        if not np.isfinite(en):
            h = hs * 0.2
            continue
        if en <= 1.0:
            t = target if hs == rem else t + direction * hs
            y = y5
            _check(y)
            k1 = ks[6]  # FSAL
            nsteps += 1
            if nsteps > max_steps:
                raise StepUnderflow("maximum number of steps exceeded")
            fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h = hs * fac if hs == h or fac < 1 else max(h, hs * fac)
        else:
            h = hs * max(0.2, 0.9 * en ** -0.2)
    return OdeResult(np.array(times), states, nfev, nsteps)
