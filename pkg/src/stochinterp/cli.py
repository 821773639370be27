"""Command-line entry point: stochinterp <subcommand> [options]."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import inspect
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import experiments as ex
from . import gmm_oracle as go
from .errors import ConfigError, NumericalError
from .fields import learned_field, score_from_denoiser, time_clipped
from .interpolant import Coupling, Dataset, draw_batch, load_matrix
from .likelihood import config_hash, cross_entropy_ode, cross_entropy_sde_bound, density_feynman_kac, \
    kl_bound_from_errors, log_density_ode, optimal_eps
from .rectify import build_pair_table, build_rectified_draws, fit_rectified, flow_endpoint_map, \
    verify_straightness
from .regression import FeatureMap, as_objective, empirical_loss, fit_many, load_model, \
    median_bandwidth, save_model, training_window
from .samplers import EpsSchedule, final_denoise, integrate_ode, integrate_sde
from .schedules import Kind, make_schedule

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


# --- io helpers -----------------------------------------------------------------

class Run:
    """Output directory with manifest, metrics and artifact bookkeeping."""

    def __init__(self, out: str, command: str, config: dict):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config = config
        self.t0 = time.time()
        self.timings = {}
        self.outputs = []

    def path(self, *parts) -> Path:
        p = self.dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(str(p.relative_to(self.dir)))
        return p

    def lap(self, name: str, start: float) -> None:
        self.timings[name] = round(time.time() - start, 4)

    def metrics(self, rows, name: str = "metrics.csv") -> None:
        rows = list(rows)
        if not rows:
            return
        keys = list(dict.fromkeys(k for r in rows for k in r))
        with self.path(name).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for r in rows:
                w.writerow({k: _plain(v) for k, v in r.items()})

    def jsonl(self, name: str, records) -> None:
        with self.path("samples", name).open("w") as fh:
            for r in records:
                fh.write(json.dumps(_plain(r)) + "\n")

    def finish(self) -> None:
        self.timings["total"] = round(time.time() - self.t0, 4)
        manifest = dict(command=self.command, config=_plain(self.config), config_hash=config_hash(self.config),
                        versions=dict(stochinterp=__version__, python=platform.python_version(),
                                      numpy=np.__version__, scipy=scipy.__version__),
                        timings=self.timings, outputs=sorted(set(self.outputs)))
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    return v


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def load_endpoint(spec, d: int | None = None):
    """'normal[:d]', a mixture JSON file, or a data matrix (.csv / .bin)."""
    if isinstance(spec, dict):
        return go.GaussianMixture.from_dict(spec)
    s = str(spec)
    if s.startswith("normal"):
        dim = int(s.split(":")[1]) if ":" in s else d
        if dim is None:
            raise ConfigError("'normal' endpoint needs a dimension, e.g. normal:2")
        return go.GaussianMixture.standard_normal(dim)
    p = Path(s)
    if not p.exists():
        raise ConfigError(f"endpoint file {s} not found")
    if p.suffix == ".json":
        return go.GaussianMixture.from_json(p)
    return Dataset(load_matrix(p))


def load_points(path) -> np.ndarray:
    return np.atleast_2d(load_matrix(path))


def _schedule(name, gamma):
    return make_schedule(name, gamma or "none")


# --- subcommands ------------------------------------------------------------------

def cmd_oracle_eval(a) -> None:
    cfg = dict(mix0=a.mix0, mix1=a.mix1, schedule=a.schedule, gamma=a.gamma, t=a.t, points=a.points)
    run = Run(a.out, "oracle-eval", cfg)
    sched = _schedule(a.schedule, a.gamma)
    mix1 = load_endpoint(a.mix1)
    mix0 = None if a.mix0 is None else load_endpoint(a.mix0, mix1.d)
    x = load_points(a.points)
    start = time.time()
    f = go.evaluate(mix0, mix1, sched, a.t, x)
    run.lap("evaluate", start)
    recs = []
    for i in range(x.shape[0]):
        recs.append(dict(x=x[i], t=a.t, log_density=f.log_density[i], score=f.score[i], b=f.velocity[i], v=f.v[i],
                         eta0=f.eta0[i], eta1=f.eta1[i], etaz=f.etaz[i], div_b=f.div_b[i], div_s=f.div_s[i]))
    run.jsonl("oracle.jsonl", recs)
    run.finish()


TRAIN_DEFAULTS = dict(experiment="train", seed=0, schedule=dict(name="linear", gamma="bb:a=1"),
                      endpoints=dict(base="normal", target=None),
                      model=dict(objectives=["B", "EtaZ"], features=1024, bandwidth="median", bandwidth_factor=0.5,
                                 tau_scale=None, **{"lambda": 1e-6}, n=100_000, time_mode="arcsine"),
                      outputs="runs/train")


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = dict(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        out[k] = _merge(base[k], v, f"{where}{k}.") if isinstance(base[k], dict) and isinstance(v, dict) else v
    return out


def train_from_config(cfg: dict, run: Run) -> dict:
    sched = _schedule(cfg["schedule"]["name"], cfg["schedule"].get("gamma"))
    target = load_endpoint(cfg["endpoints"]["target"])
    base = load_endpoint(cfg["endpoints"]["base"], target.d)
    m = cfg["model"]
    objs = [as_objective(o) for o in m["objectives"]]
    groups = {}
    for o in objs:
        groups.setdefault(training_window(o, sched), []).append(o)
    coupling = Coupling.independent(base, target)
    probe = draw_batch(sched, coupling, min(4000, int(m["n"])), seed=cfg["seed"] + 99)
    bw = float(m["bandwidth"]) if m["bandwidth"] != "median" else m["bandwidth_factor"] * median_bandwidth(probe.xt)
    fmap = FeatureMap.random_fourier(target.d, int(m["features"]), bw,
                                     tau_scale=float(m["tau_scale"] or 2 * bw), seed=cfg["seed"] + 1,
                                     include_linear=True)
    models, rows = {}, []
    for (lo, hi), group in groups.items():
        start = time.time()
        n = int(m["n"]) + int(m["n"]) % 2
        draws = draw_batch(sched, coupling, n, time_mode=m["time_mode"], antithetic=True, seed=cfg["seed"],
                           t_lo=lo, t_hi=hi)
        fitted = fit_many(group, draws, sched, fmap, float(m["lambda"]))
        run.lap("fit:" + ",".join(o.value for o in group), start)
        held = draw_batch(sched, coupling, 20_000, time_mode="uniform", antithetic=True, seed=cfg["seed"] + 7,
                          t_lo=lo, t_hi=hi, stream_offset=n)
        for o, model in fitted.items():
            save_model(run.path("models", f"{o.value}.bin"), model)
            rep = empirical_loss(o, model, held, sched)
            rows.append(dict(objective=o.value, loss=rep.empirical_value, stderr=rep.std_error, n_train=n,
                             t_lo=lo, t_hi=hi, lambda_used=model.meta["lambda_used"], cond=model.meta["cond"]))
            models[o] = model
    run.metrics(rows)
    return models


def cmd_train(a) -> None:
    over = load_config(a.config) if a.config else {}
    if a.target:
        over.setdefault("endpoints", {})["target"] = a.target
    if a.base:
        over.setdefault("endpoints", {})["base"] = a.base
    cfg = _merge(TRAIN_DEFAULTS, over)
    if cfg["endpoints"]["target"] is None:
        raise ConfigError("train needs endpoints.target (mixture JSON or data matrix)")
    out = a.out or cfg["outputs"]
    run = Run(out, "train", cfg)
    train_from_config(cfg, run)
    run.finish()


def _score_field(a, sched):
    """Score from --score or --etaz, frozen at the ends of the fitted time window."""
    if a.score:
        s = learned_field(load_model(a.score))
    elif a.etaz:
        s = score_from_denoiser(learned_field(load_model(a.etaz)), sched)
    else:
        return None
    return time_clipped(s, a.t_clip, 1.0 - a.t_clip)


def cmd_sample(a) -> None:
    cfg = vars(a).copy()
    cfg.pop("func", None)
    run = Run(a.out, "sample", cfg)
    sched = _schedule(a.schedule, a.gamma)
    bmodel = load_model(a.model)
    d = bmodel.weights.shape[0]
    base = load_endpoint(a.base, d)
    if isinstance(base, Dataset):
        raise ConfigError("sample needs a base density (mixture JSON or normal:d)")
    s = _score_field(a, sched)
    eps = EpsSchedule.parse(a.eps, sched)
    x0 = base.sample(a.n, seed=a.seed)
    b = learned_field(bmodel)
    start = time.time()
    if eps.is_zero:
        tr = integrate_ode(b, x0, a.t0, 1.0 - a.t0, method=a.ode_method, steps=a.steps)
    else:
        tr = integrate_sde(b, s, eps, x0, steps=a.steps, method=a.method, seed=a.seed, t_lo=a.t0, t_hi=1.0 - a.t0)
    x = tr.endpoint
    if a.denoise:
        x = final_denoise(x, 1.0 - a.t0, sched, eta_z=learned_field(load_model(a.denoise)))
    run.lap("integrate", start)
    run.jsonl("samples.jsonl", (dict(path=int(i), x=x[i]) for i in range(x.shape[0])))
    run.metrics([dict(n=a.n, eps=str(a.eps), integrator=tr.integrator, nfev=tr.nfev,
                      mean=json.dumps(_plain(x.mean(0))))])
    run.finish()


def cmd_logp(a) -> None:
    cfg = vars(a).copy()
    cfg.pop("func", None)
    run = Run(a.out, "logp", cfg)
    bmodel = load_model(a.model)
    base = load_endpoint(a.base, bmodel.weights.shape[0])
    x = load_points(a.points)
    b = learned_field(bmodel)
    start = time.time()
    if a.eps > 0:
        sched = _schedule(a.schedule, a.gamma)
        s = _score_field(a, sched)
        res = density_feynman_kac(b, s, a.eps, base, x, n_paths=a.n_paths, steps=a.steps, seed=a.seed,
                                  direction=a.direction, min_ess=a.min_ess, divergence=a.divergence,
                                  probes=a.probes)
    else:
        res = log_density_ode(b, base, x, direction=a.direction, divergence=a.divergence, probes=a.probes,
                              seed=a.seed)
    run.lap("logp", start)
    run.jsonl("logp.jsonl", res.records(config_hash(cfg)))
    run.finish()


def cmd_xent(a) -> None:
    cfg = vars(a).copy()
    cfg.pop("func", None)
    run = Run(a.out, "xent", cfg)
    bmodel = load_model(a.model)
    base = load_endpoint(a.base, bmodel.weights.shape[0])
    x = load_points(a.samples)
    b = learned_field(bmodel)
    if a.eps > 0:
        sched = _schedule(a.schedule, a.gamma)
        r = cross_entropy_sde_bound(b, _score_field(a, sched), a.eps, base, x, n_paths=a.n_paths,
                                    steps=a.steps, seed=a.seed, divergence=a.divergence, probes=a.probes)
        rows = [dict(estimator="jensen-bound", eps=a.eps, value=r.bound, stderr=r.std_error)]
    else:
        v, se = cross_entropy_ode(b, base, x, divergence=a.divergence, probes=a.probes, seed=a.seed)
        rows = [dict(estimator="ode", eps=0.0, value=v, stderr=se)]
    run.metrics(rows)
    run.finish()


def cmd_klbound(a) -> None:
    cfg = vars(a).copy()
    cfg.pop("func", None)
    run = Run(a.out, "klbound", cfg)
    # gaps are in the 1/2|f|^2 - target.f normalization: squared error = 2 * gap
    e2b, e2s = 2 * a.gap_b, 2 * a.gap_s
    eps_list = [float(e) for e in a.eps.split(",")] if a.eps else []
    rows = [dict(eps=e, bound=kl_bound_from_errors(e2b, e2s, e)) for e in eps_list]
    star = optimal_eps(a.gap_b, a.gap_s)
    rows.append(dict(eps=star, bound=kl_bound_from_errors(e2b, e2s, star) if np.isfinite(star) else float("nan"),
                     optimal=True))
    run.metrics(rows)
    run.finish()


def cmd_rectify(a) -> None:
    cfg = vars(a).copy()
    cfg.pop("func", None)
    run = Run(a.out, "rectify", cfg)
    sched = _schedule(a.schedule, "none")
    if sched.kind is not Kind.ONE_SIDED:
        raise ConfigError("rectify needs a schedule without gamma")
    bmodel = load_model(a.model)
    d = bmodel.weights.shape[0]
    start = time.time()
    emap = flow_endpoint_map(learned_field(bmodel))
    pairs = build_pair_table(emap, a.n, d, seed=a.seed)
    pairs.save(run.path("pairs.bin"))
    run.lap("pairs", start)
    draws = build_rectified_draws(pairs, sched, seed=a.seed + 1)
    fmap = FeatureMap.random_fourier(d, a.features, a.bandwidth, tau_scale=1.0, seed=a.seed + 2,
                                     include_linear=True)
    start = time.time()
    model = fit_rectified(draws, sched, fmap, a.ridge_lambda)
    run.lap("fit", start)
    save_model(run.path("models", "BRec.bin"), model)
    z = go.GaussianMixture.standard_normal(d).sample(a.n_test, seed=a.seed + 3)
    z = z[np.linalg.norm(z, axis=1) <= 2.0]
    rep = verify_straightness(model, z, emap, sched)
    run.metrics([dict(max_deviation=rep.max_deviation, endpoint_error=rep.endpoint_error, n_pairs=a.n,
                      n_test=z.shape[0])])
    run.finish()


def _config_object(cls, over: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    bad = set(over) - names
    if bad:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(bad)}")
    conv = {k: (tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v)
            for k, v in over.items()}
    return cls(**conv)


# config section -> {key: dataclass field}; "params" overrides fields directly
SECTIONS = {
    "gmm-kl-curve": {
        "schedule": {"name": "schedule.0", "gamma": "schedule.1"},
        "endpoints": {"d": "d", "n_modes": "n_modes", "mixture_seed": "mixture_seed", "sigma": "sigma"},
        "model": {"features": "features", "lambda": "ridge_lambda", "bandwidth_factor": "bandwidth_factor",
                  "n": "n_train"},
        "sampler": {"method": "method", "steps": "steps", "eps": "eps_grid", "t0": "t0"},
        "metrics": {"n_samples": "n_samples", "coords": "coords", "pairs": "pairs"},
    },
    "checkerboard": {
        "schedule": {"name": "schedule", "gamma": "gammas"},
        "endpoints": {},
        "model": {"features": "features", "lambda": "ridge_lambda", "bandwidth": "bandwidth", "n": "n_train"},
        "sampler": {"method": "method", "steps": "steps", "eps": "eps_grid", "n_paths": "n_paths"},
        "metrics": {"n_eval": "n_eval"},
    },
    "gmm-oracle-check": {
        "endpoints": {"n_mixtures": "n_mixtures", "max_dim": "max_dim", "sigma": "sigma"},
        "sampler": {"eps": "eps_values"},
        "metrics": {"n_points": "n_points"},
    },
}
TUPLE_FIELDS = {"eps_grid", "gammas", "eps_values"}
FIXED_ENDPOINTS = {"checkerboard": {"base": "normal", "target": "checkerboard"}}


def experiment_overrides(name: str, cfg: dict) -> dict:
    """Flatten a sectioned experiment config into dataclass field overrides."""
    extra = set(cfg) - {"experiment", "seed", "outputs", "params"} - set(SECTIONS[name]) - {"endpoints"}
    if extra:
        raise ConfigError(f"unknown or unsupported sections for {name}: {sorted(extra)}")
    over, sched = {}, {}
    if "seed" in cfg:
        over["seed"] = cfg["seed"]
    for sec, keys in SECTIONS[name].items():
        body = cfg.get(sec, {})
        if not isinstance(body, dict):
            raise ConfigError(f"{sec} must be an object")
        for k, v in body.items():
            if sec == "endpoints" and FIXED_ENDPOINTS.get(name, {}).get(k) == v:
                continue
            if k not in keys:
                raise ConfigError(f"unknown key {sec}.{k} for {name}")
            dest = keys[k]
            if dest.startswith("schedule."):
                sched[int(dest[-1])] = v
            else:
                over[dest] = (v if isinstance(v, list) else [v]) if dest in TUPLE_FIELDS else v
    if sched:
        default = ex.KLCurveConfig().schedule
        over["schedule"] = [sched.get(0, default[0]), sched.get(1, default[1])]
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be an object")
    over.update(params)
    return over


def _oracle_check_kwargs(over: dict) -> dict:
    sig = inspect.signature(ex.gmm_oracle_check)
    bad = set(over) - set(sig.parameters)
    if bad:
        raise ConfigError(f"unknown keys for gmm-oracle-check: {sorted(bad)}")
    kw = {k: p.default for k, p in sig.parameters.items()}
    kw.update(over)
    return kw


def cmd_experiment(a) -> None:
    cfg = load_config(a.config) if a.config else {}
    name = a.name or cfg.get("experiment")
    if name not in ex.EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {ex.EXPERIMENTS}, got {name!r}")
    over = experiment_overrides(name, cfg)
    if name == "gmm-oracle-check":
        params = _oracle_check_kwargs(over)
    else:
        conf = _config_object(ex.KLCurveConfig if name == "gmm-kl-curve" else ex.CheckerboardConfig, over)
        params = dataclasses.asdict(conf)
    out = a.out or cfg.get("outputs") or f"runs/{name}"
    run = Run(out, "experiment", dict(experiment=name, resolved=params, input=cfg))
    start = time.time()
    if name == "gmm-oracle-check":
        checks = ex.gmm_oracle_check(**params)
        rows = []
        for c in checks:
            r = dict(mixture=c.mixture, d=c.d, schedule=json.dumps(c.schedule), te_rel=c.te_residual / c.max_rho,
                     score_err=c.score_error, decomposition_err=c.decomposition_error)
            for e, v in c.fpe_residual.items():
                r[f"fpe_rel_eps{e}"] = v / c.max_rho
            rows.append(r)
        run.metrics(rows)
    elif name == "gmm-kl-curve":
        rows = ex.gmm_kl_curve(conf)
        run.metrics(rows)
        run.metrics(rows, name="grids/kl_vs_eps.csv")
    else:
        rows = ex.checkerboard(conf)
        run.metrics(rows)
        run.metrics(rows, name="grids/checkerboard_logp_errors.csv")
    run.lap(name, start)
    run.finish()


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochinterp", description="Stochastic interpolant toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out):
        sp.add_argument("--out", default=out, help="output directory")
        sp.add_argument("--seed", type=int, default=0)

    def sched_args(sp, gamma="bb:a=1"):
        sp.add_argument("--schedule", default="linear")
        sp.add_argument("--gamma", default=gamma)

    sp = sub.add_parser("oracle-eval", help="evaluate Gaussian-mixture oracle fields at points")
    common(sp, "runs/oracle-eval")
    sched_args(sp)
    sp.add_argument("--mix0", help="base mixture JSON or normal:d (omit for one-sided/mirror)")
    sp.add_argument("--mix1", required=True)
    sp.add_argument("--t", type=float, required=True)
    sp.add_argument("--points", required=True, help="CSV or binary matrix of query points")
    sp.set_defaults(func=cmd_oracle_eval)

    sp = sub.add_parser("train", help="fit feature models by ridge regression")
    sp.add_argument("--config")
    sp.add_argument("--target")
    sp.add_argument("--base")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_train)

    def field_args(sp):
        sp.add_argument("--model", required=True, help="velocity model (.bin)")
        sp.add_argument("--score", help="score model (.bin)")
        sp.add_argument("--etaz", help="denoiser model (.bin); score = -etaz / gamma")
        sp.add_argument("--base", default="normal")
        sp.add_argument("--t-clip", type=float, default=1e-4, help="score times are clipped to [t, 1 - t]")

    def trace_args(sp):
        sp.add_argument("--divergence", default="exact", choices=["exact", "hutchinson"])
        sp.add_argument("--probes", type=int, default=8, help="Rademacher probes for --divergence hutchinson")

    sp = sub.add_parser("sample", help="generate samples with the ODE or an SDE")
    common(sp, "runs/sample")
    sched_args(sp)
    field_args(sp)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--eps", default="0", help="constant, ramp:e,ton,toff or alpha:C")
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--method", default="heun", choices=["heun", "em"])
    sp.add_argument("--ode-method", default="dopri", choices=["dopri", "rk4", "heun", "euler"])
    sp.add_argument("--t0", type=float, default=0.0)
    sp.add_argument("--denoise", help="denoiser model for a final jump to t = 1")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("logp", help="log-density of the generative model at points")
    common(sp, "runs/logp")
    sched_args(sp)
    field_args(sp)
    sp.add_argument("--points", required=True)
    sp.add_argument("--eps", type=float, default=0.0)
    sp.add_argument("--direction", default="forward", choices=["forward", "backward"])
    sp.add_argument("--n-paths", type=int, default=10_000)
    sp.add_argument("--min-ess", type=float, default=10.0, help="fail below this effective sample size")
    sp.add_argument("--steps", type=int, default=200)
    trace_args(sp)
    sp.set_defaults(func=cmd_logp)

    sp = sub.add_parser("xent", help="cross-entropy of the model against target samples")
    common(sp, "runs/xent")
    sched_args(sp)
    field_args(sp)
    sp.add_argument("--samples", required=True)
    sp.add_argument("--eps", type=float, default=0.0)
    sp.add_argument("--n-paths", type=int, default=100)
    sp.add_argument("--steps", type=int, default=200)
    trace_args(sp)
    sp.set_defaults(func=cmd_xent)

    sp = sub.add_parser("klbound", help="KL upper bound from loss gaps")
    common(sp, "runs/klbound")
    sp.add_argument("--gap-b", type=float, required=True)
    sp.add_argument("--gap-s", type=float, required=True)
    sp.add_argument("--eps", help="comma-separated eps values")
    sp.set_defaults(func=cmd_klbound)

    sp = sub.add_parser("rectify", help="rectify a learned one-sided flow")
    common(sp, "runs/rectify")
    sp.add_argument("--schedule", default="linear")
    sp.add_argument("--model", required=True)
    sp.add_argument("--n", type=int, default=50_000)
    sp.add_argument("--features", type=int, default=500)
    sp.add_argument("--bandwidth", type=float, default=2.0)
    sp.add_argument("--ridge-lambda", type=float, default=1e-8)
    sp.add_argument("--n-test", type=int, default=500)
    sp.set_defaults(func=cmd_rectify)

    sp = sub.add_parser("experiment", help="run a named experiment")
    sp.add_argument("--config")
    sp.add_argument("--name", choices=ex.EXPERIMENTS)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        a.func(a)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
