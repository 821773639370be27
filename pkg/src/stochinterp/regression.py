"""Quadratic objectives over linear-in-features vector fields.

Every objective has the form  E[ 1/2 |f(t, x_t)|^2 - target . f(t, x_t) ],
whose minimizer is E[target | x_t = x]; with f = W phi the minimizer over W
solves a ridge-regularized normal equation.
"""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import IllConditioned, SingularGamma, ConfigError
from .interpolant import InterpolantBatch
from .schedules import Kind, Schedule, gg_product

CHUNK = 20_000
T_CAP = 1e-4
COND_MAX = 1e12


class Objective(str, enum.Enum):
    B = "B"
    V = "V"
    S = "S"
    ETA_Z = "EtaZ"
    ETA_0 = "Eta0"
    ETA_1 = "Eta1"
    B_REC = "BRec"
    U_DIFF = "UDiff"


def as_objective(obj) -> Objective:
    if isinstance(obj, Objective):
        return obj
    for o in Objective:
        if str(obj).lower() == o.value.lower():
            return o
    raise ConfigError(f"unknown objective {obj!r}")


# --- feature maps --------------------------------------------------------

@dataclass(frozen=True)
class FeatureMap:
    """Random Fourier or RBF-grid features over the input u = (tau_scale * t, x).

    Optional bias and linear-in-x features are appended after the ``count``
    nonlinear features.
    """

    kind: str
    d: int
    count: int
    centers: np.ndarray  # (F, d+1): frequencies (rff) or centers (rbf)
    phases: np.ndarray  # (F,): phases (rff); unused for rbf
    bandwidth: float
    tau_scale: float = 1.0
    include_bias: bool = True
    include_linear: bool = False
    seed: int = 0

    @classmethod
    def random_fourier(cls, d: int, count: int = 1024, bandwidth: float = 1.0, tau_scale: float = 1.0,
                       seed: int = 0, include_bias: bool = True, include_linear: bool = False) -> "FeatureMap":
        rng = np.random.default_rng([int(seed), int(count), d])
        omega = rng.standard_normal((count, d + 1)) / bandwidth
        phase = rng.uniform(0.0, 2 * np.pi, count)
        return cls("rff", d, count, omega, phase, float(bandwidth), float(tau_scale), include_bias,
                   include_linear, int(seed))

    @classmethod
    def rbf_grid(cls, d: int, per_axis: int, lo, hi, bandwidth: float, tau_scale: float = 1.0,
                 include_bias: bool = True, include_linear: bool = False) -> "FeatureMap":
        lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (d,))
        hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (d,))
        axes = [np.linspace(0.0, tau_scale, per_axis)] + [np.linspace(lo[i], hi[i], per_axis) for i in range(d)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d + 1)
        return cls("rbf", d, grid.shape[0], grid, np.zeros(grid.shape[0]), float(bandwidth), float(tau_scale),
                   include_bias, include_linear, 0)

    @property
    def n_features(self) -> int:
        return self.count + int(self.include_bias) + (self.d if self.include_linear else 0)

    def _inputs(self, t, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (x.shape[0], 1))
        return x, np.concatenate([self.tau_scale * t, x], axis=1)

    def _core(self, u, grad: bool = True):
        """Nonlinear features and (if ``grad``) the quantity needed for x-gradients."""
        if self.kind == "rff":
            theta = u @ self.centers.T + self.phases
            amp = np.sqrt(2.0 / self.count)
            return amp * np.cos(theta), (-amp * np.sin(theta) if grad else None)
        diff2 = (np.sum(u * u, 1)[:, None] - 2 * u @ self.centers.T + np.sum(self.centers ** 2, 1)[None])
        phi = np.exp(-0.5 * np.maximum(diff2, 0.0) / self.bandwidth ** 2)
        return phi, phi

    def features(self, t, x) -> np.ndarray:
        x, u = self._inputs(t, x)
        phi, _ = self._core(u, grad=False)
        parts = [phi]
        if self.include_bias:
            parts.append(np.ones((x.shape[0], 1)))
        if self.include_linear:
            parts.append(x)
        return np.concatenate(parts, axis=1)

    def divergence(self, W: np.ndarray, t, x) -> np.ndarray:
        """div_x of f = W phi for W of shape (d, n_features)."""
        x, u = self._inputs(t, x)
        phi, aux = self._core(u)
        Wc = W[:, : self.count]
        if self.kind == "rff":
            c = np.einsum("ik,ki->k", Wc, self.centers[:, 1:])
            out = aux @ c
        else:
            q = np.einsum("ik,ki->k", Wc, self.centers[:, 1:])
            out = -(np.sum(x * (phi @ Wc.T), axis=1) - phi @ q) / self.bandwidth ** 2
        if self.include_linear:
            off = self.count + int(self.include_bias)
            out = out + np.trace(W[:, off: off + self.d])
        return out

    def mean_x_gradient(self, t, x) -> np.ndarray:
        """Average over samples of d phi_k / d x_i, shape (d, n_features)."""
        x, u = self._inputs(t, x)
        phi, aux = self._core(u)
        n = x.shape[0]
        g = np.zeros((self.d, self.n_features))
        if self.kind == "rff":
            g[:, : self.count] = (self.centers[:, 1:] * aux.sum(0)[:, None]).T
        else:
            # d phi/dx_i = -phi (x_i - c_i) / l^2
            g[:, : self.count] = -((x.T @ phi) - self.centers[:, 1:].T * phi.sum(0)[None]) / self.bandwidth ** 2
        if self.include_linear:
            off = self.count + int(self.include_bias)
            g[:, off: off + self.d] = n * np.eye(self.d)
        return g / n

    def spec(self) -> dict:
        out = dict(kind=self.kind, d=self.d, count=self.count, bandwidth=self.bandwidth, tau_scale=self.tau_scale,
                   include_bias=self.include_bias, include_linear=self.include_linear, seed=self.seed)
        if self.kind == "rbf":
            out["centers"] = self.centers.tolist()
        return out

    @classmethod
    def from_spec(cls, spec: dict) -> "FeatureMap":
        if spec["kind"] == "rff":
            return cls.random_fourier(spec["d"], spec["count"], spec["bandwidth"], spec["tau_scale"], spec["seed"],
                                      spec["include_bias"], spec["include_linear"])
        c = np.asarray(spec["centers"], dtype=np.float64)
        return cls("rbf", spec["d"], c.shape[0], c, np.zeros(c.shape[0]), spec["bandwidth"], spec["tau_scale"],
                   spec["include_bias"], spec["include_linear"], 0)


def median_bandwidth(x: np.ndarray, max_points: int = 2000, seed: int = 0) -> float:
    """Median pairwise distance of (a subsample of) the points."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] > max_points:
        idx = np.random.default_rng(seed).choice(x.shape[0], max_points, replace=False)
        x = x[idx]
    sq = np.sum(x * x, 1)
    d2 = sq[:, None] + sq[None] - 2 * x @ x.T
    iu = np.triu_indices(x.shape[0], 1)
    med = float(np.sqrt(np.median(np.maximum(d2[iu], 0.0))))
    return med if med > 0 else 1.0


# --- models -----------------------------------------------------------------

@dataclass
class FeatureModel:
    fmap: FeatureMap
    weights: np.ndarray  # (d, n_features)
    ridge_lambda: float
    target_tag: Objective
    meta: dict = field(default_factory=dict)

    def __call__(self, t, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        tt = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (x.shape[0],)) \
            if np.ndim(t) else np.full(x.shape[0], float(t))
        out = np.empty((x.shape[0], self.weights.shape[0]))
        for s in range(0, x.shape[0], CHUNK):
            sl = slice(s, s + CHUNK)
            out[sl] = self.fmap.features(tt[sl], x[sl]) @ self.weights.T
        return out

    def divergence(self, t, x) -> np.ndarray:
        return divergence(self, t, x)


def divergence(model: FeatureModel, t, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    tt = np.full(x.shape[0], float(t)) if np.ndim(t) == 0 else np.asarray(t, dtype=np.float64)
    out = np.empty(x.shape[0])
    for s in range(0, x.shape[0], CHUNK):
        sl = slice(s, s + CHUNK)
        out[sl] = model.fmap.divergence(model.weights, tt[sl], x[sl])
    return out


# --- targets ----------------------------------------------------------------

def _in_window(t) -> bool:
    return bool(np.all((t >= T_CAP * (1 - 1e-9)) & (t <= 1 - T_CAP * (1 - 1e-9))))


def training_window(objective, schedule: Schedule) -> tuple:
    """Time window for training draws: capped when the target has a singular factor."""
    obj = as_objective(objective)
    capped = (1e-4, 1 - 1e-4)
    if obj in (Objective.S, Objective.U_DIFF):
        return capped
    if obj in (Objective.B, Objective.V, Objective.B_REC) and (schedule.gamma_singular or schedule.alpha_singular):
        return capped
    return (0.0, 1.0)


def regression_target(objective, draws: InterpolantBatch, schedule: Schedule, a: Optional[float] = None) -> np.ndarray:
    obj = as_objective(objective)
    t = draws.t
    col = lambda v: np.asarray(v, dtype=np.float64).reshape(-1, 1) * np.ones((len(t), 1))
    if obj in (Objective.B, Objective.V, Objective.B_REC, Objective.U_DIFF):
        if schedule.alpha_singular and obj is not Objective.U_DIFF and not _in_window(t):
            raise SingularGamma("alpha' is singular at t=1; restrict training times to the capped window")
        da, db = col(schedule.d_alpha(t)), col(schedule.d_beta(t))
        with np.errstate(invalid="ignore"):
            base = np.where(draws.x0 == 0, 0.0, da * draws.x0) + db * draws.x1
        if obj is Objective.B and schedule.kind is not Kind.ONE_SIDED:
            if schedule.gamma_singular:
                if not _in_window(t):
                    raise SingularGamma("gamma' is singular at the endpoints; restrict training times")
                base = base + col(gg_product(schedule, t)) / col(schedule.gamma(t)) * draws.z
            else:
                base = base + col(schedule.d_gamma(t)) * draws.z
        if obj is Objective.U_DIFF:
            if a is None:
                if not schedule.gamma_name.startswith("bb"):
                    raise ConfigError("UDiff needs gamma = bb:a=2a or an explicit a")
                a = float(schedule.gamma_name.split("=")[1]) / 2.0
            if not _in_window(t):
                raise SingularGamma("UDiff target is singular at t=1; restrict training times")
            base = base - col(np.sqrt(2 * a * t / (1 - t))) * draws.z
        return base
    if obj is Objective.S:
        if not _in_window(t):
            raise SingularGamma("score target divides by the noise coefficient; restrict training times")
        if not draws.antithetic:
            raise ConfigError("the score objective requires antithetic draws")
        return -draws.z / col(schedule.latent_coef(t))
    if obj is Objective.ETA_Z:
        return draws.z.copy()
    if obj is Objective.ETA_0:
        return draws.x0.copy()
    return draws.x1.copy()


# --- solvers ----------------------------------------------------------------

def _solve_ridge(G: np.ndarray, R: np.ndarray, n: int, lam: float) -> tuple:
    """Solve (G + lam n I) W^T = R with jitter escalation."""
    Fdim = G.shape[0]
    Gm, Rm = G / n, R / n
    cur = lam
    for attempt in range(4):
        A = Gm + cur * np.eye(Fdim)
        ev = np.linalg.eigvalsh(A)
        cond = ev[-1] / ev[0] if ev[0] > 0 else np.inf
        if np.isfinite(cond) and cond <= COND_MAX:
            try:
                cf = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
                return scipy.linalg.cho_solve(cf, Rm, check_finite=False).T, cur, cond
            except np.linalg.LinAlgError:
                pass
        if attempt < 3:
            cur = cur * 10.0
    raise IllConditioned(f"Gram matrix condition {cond:.3e} exceeds {COND_MAX:.0e} (lambda={cur:g}, n={n})")


def fit(objective, draws: InterpolantBatch, schedule: Schedule, fmap: FeatureMap, ridge_lambda: float = 1e-6,
        target: Optional[np.ndarray] = None, a: Optional[float] = None) -> FeatureModel:
    """Least-squares fit of f = W phi to the objective's regression target."""
    obj = as_objective(objective)
    Y = regression_target(obj, draws, schedule, a=a) if target is None else np.asarray(target, dtype=np.float64)
    return _fit_targets([(obj, Y)], draws, schedule, fmap, ridge_lambda)[obj]


def fit_many(objectives, draws: InterpolantBatch, schedule: Schedule, fmap: FeatureMap,
             ridge_lambda: float = 1e-6, a: Optional[float] = None) -> dict:
    """Fit several objectives on the same draws, sharing one Gram matrix."""
    objs = [as_objective(o) for o in objectives]
    return _fit_targets([(o, regression_target(o, draws, schedule, a=a)) for o in objs],
                        draws, schedule, fmap, ridge_lambda)


def _fit_targets(targets, draws, schedule, fmap, ridge_lambda) -> dict:
    n = len(draws)
    Y = np.concatenate([y for _, y in targets], axis=1)
    Fdim = fmap.n_features
    G = np.zeros((Fdim, Fdim))
    R = np.zeros((Fdim, Y.shape[1]))
    for s in range(0, n, CHUNK):
        sl = slice(s, s + CHUNK)
        P = fmap.features(draws.t[sl], draws.xt[sl])
        G += P.T @ P
        R += P.T @ Y[sl]
    W, lam_used, cond = _solve_ridge(G, R, n, ridge_lambda)
    meta = dict(n=n, lambda_used=lam_used, cond=float(cond), schedule=schedule.ident,
                window=[float(draws.t.min()), float(draws.t.max())])
    out, c = {}, 0
    for obj, y in targets:
        k = y.shape[1]
        out[obj] = FeatureModel(fmap, W[c:c + k].copy(), ridge_lambda, obj, dict(meta))
        c += k
    return out


def fit_score_matching(draws: InterpolantBatch, schedule: Schedule, fmap: FeatureMap,
                       ridge_lambda: float = 1e-6) -> FeatureModel:
    """Minimize E[ |s|^2 + 2 div s ] over s = W phi; W_i = -(G + lam I)^-1 g_i."""
    n = len(draws)
    Fdim = fmap.n_features
    G = np.zeros((Fdim, Fdim))
    gsum = np.zeros((fmap.d, Fdim))
    for s in range(0, n, CHUNK):
        sl = slice(s, s + CHUNK)
        P = fmap.features(draws.t[sl], draws.xt[sl])
        G += P.T @ P
        m = P.shape[0]
        gsum += fmap.mean_x_gradient(draws.t[sl], draws.xt[sl]) * m
    W, lam_used, cond = _solve_ridge(G, -gsum.T, n, ridge_lambda)
    meta = dict(n=n, lambda_used=lam_used, cond=float(cond), schedule=schedule.ident, method="score-matching")
    return FeatureModel(fmap, W, ridge_lambda, Objective.S, meta)


def fit_sgd(objective, draws: InterpolantBatch, schedule: Schedule, fmap: FeatureMap, batch: int = 1024,
            lr: float = 1e-3, steps: int = 10_000, seed: int = 0, ridge_lambda: float = 0.0) -> FeatureModel:
    """Plain minibatch SGD on the empirical objective (reference solver is ``fit``)."""
    obj = as_objective(objective)
    Y = regression_target(obj, draws, schedule)
    rng = np.random.default_rng(seed)
    W = np.zeros((Y.shape[1], fmap.n_features))
    n = len(draws)
    for _ in range(steps):
        idx = rng.integers(0, n, size=min(batch, n))
        P = fmap.features(draws.t[idx], draws.xt[idx])
        resid = P @ W.T - Y[idx]
        grad = resid.T @ P / len(idx) + ridge_lambda * W
        W -= lr * grad
    return FeatureModel(fmap, W, ridge_lambda, obj, dict(n=n, method="sgd", steps=steps, lr=lr))


# --- losses -----------------------------------------------------------------

@dataclass
class LossReport:
    objective_tag: Objective
    empirical_value: float
    std_error: float
    n_samples: int
    time_window: tuple
    antithetic: bool


def _eval_field(field, t, x):
    if hasattr(field, "evaluate"):
        return field.evaluate(t, x)
    return field(t, x)


def loss_integrand(objective, field, draws: InterpolantBatch, schedule: Schedule, a=None) -> np.ndarray:
    Y = regression_target(objective, draws, schedule, a=a)
    f = np.empty_like(Y)
    for s in range(0, len(draws), CHUNK):
        sl = slice(s, s + CHUNK)
        f[sl] = _eval_field(field, draws.t[sl], draws.xt[sl])
    return 0.5 * np.sum(f * f, axis=1) - np.sum(Y * f, axis=1)


def empirical_loss(objective, field, draws: InterpolantBatch, schedule: Schedule, a=None) -> LossReport:
    """Mean of 1/2|f|^2 - target.f over the draws, with a standard error.

    ``field`` is a FeatureModel, a DriftField or any callable (t, x) -> (n, d).
    Antithetic pairs are averaged before computing the standard error.
    """
    obj = as_objective(objective)
    vals = loss_integrand(obj, field, draws, schedule, a=a)
    units = vals.reshape(-1, 2).mean(1) if draws.antithetic else vals
    se = float(units.std(ddof=1) / np.sqrt(len(units))) if len(units) > 1 else float("nan")
    return LossReport(obj, float(vals.mean()), se, len(vals), tuple(draws.t_window), draws.antithetic)


# --- serialization ----------------------------------------------------------

_MAGIC = b"SIFM"


def save_model(path, model: FeatureModel) -> None:
    header = dict(fmap=model.fmap.spec(), tag=model.target_tag.value, ridge_lambda=model.ridge_lambda,
                  seed=model.fmap.seed, shape=list(model.weights.shape), meta=model.meta)
    hb = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<I", len(hb)) + hb)
        fh.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())


def load_model(path) -> FeatureModel:
    raw = open(path, "rb").read()
    if raw[:4] != _MAGIC:
        raise ConfigError(f"{path}: not a feature-model file")
    (hl,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8: 8 + hl].decode())
    W = np.frombuffer(raw, dtype="<f8", offset=8 + hl).reshape(header["shape"]).astype(np.float64)
    return FeatureModel(FeatureMap.from_spec(header["fmap"]), W, header["ridge_lambda"],
                        as_objective(header["tag"]), header.get("meta", {}))
