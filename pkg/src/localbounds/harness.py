"""Seeded Monte Carlo sweeps, log-log scaling fits and machine-readable reports.

A config names an experiment, a generator with parameters, a sweep (lists
of values per axis) and the number of trials.  Every ``(cell, trial)`` pair
draws from its own counter-based stream, so results do not depend on how
trials are scheduled across workers.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import rng as _rng
from .classes import (gen_finite_random, gen_finite_zero_variance, gen_heavy_tailed_linear,
                      gen_sigmoid_regression)
from .convexcost import huber_trial
from .em import GMM2, MLR2, default_init, first_order_em
from .estimators import erm, moment_penalized
from .gradflow import gradient_descent, local_smoothness
from .numkit import NumericError
from .rademacher import build_psi, peeling_trial

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ScalingReport",
    "EXPERIMENTS",
    "fit_loglog",
    "load_config",
    "run_experiment",
    "format_float",
]

MAX_FAILURE_FRACTION = 0.01


class ConfigError(ValueError):
    """The experiment configuration does not match the experiment's schema."""


def format_float(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# log-log fits


def fit_loglog(xs, ys) -> tuple[float, float, float]:
    """OLS of ``log y`` on ``log x``: ``(slope, intercept, r2)``.

    When every ``y`` is equal the residual and total variation both vanish;
    ``r2`` is reported as 0 by convention.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-d arrays of equal length")
    if x.size < 3:
        raise ValueError("a slope fit needs at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x) & np.isfinite(y)):
        raise ValueError("log-log fit needs finite, strictly positive inputs")
    lx, ly = np.log(x), np.log(y)
    xc = lx - lx.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise ValueError("xs must not all be equal")
    slope = float(xc @ (ly - ly.mean())) / sxx
    intercept = float(ly.mean() - slope * lx.mean())
    sst = float(np.sum((ly - ly.mean()) ** 2))
    if sst == 0:
        return slope, intercept, 0.0
    sse = float(np.sum((ly - intercept - slope * lx) ** 2))
    return slope, intercept, 1.0 - sse / sst


# ---------------------------------------------------------------------------
# experiment registry


@dataclass(frozen=True)
class Experiment:
    name: str
    generator: str
    generator_params: dict[str, Any]
    sweep_required: tuple[str, ...]
    sweep_optional: dict[str, Any]
    options: dict[str, Any]
    metrics: tuple[str, ...]
    trial: Callable[..., dict[str, float]]


def _unit(seed: int, d: int) -> np.ndarray:
    v = _rng.stream(seed, _rng.STREAM_MODEL, "direction", d).standard_normal(d)
    return v / np.linalg.norm(v)


def _stub_trial(cell, gen, opts, ctx):
    return {"err": 1.0 / cell["n"]}


def _mp_trial(cell, gen, opts, ctx):
    p = gen_finite_zero_variance(gen["eps"], gen["B"])
    n = cell["n"]
    primary = p.loss_matrix(p.sample(n, ctx["seed"], *ctx["keys"], "primary"))
    aux = p.loss_matrix(p.sample(n, ctx["seed"], *ctx["keys"], "auxiliary"))
    center = erm(aux)
    psi = build_psi(primary, center, p.B, opts["mc_draws"], _rng.derive_seed(ctx["seed"], *ctx["keys"]),
                    sub_root=True)
    idx, cert = moment_penalized(primary, aux, psi, ctx["delta"], p.B, constant_c=ctx["constant_c"])
    return {"excess_mp": p.excess_risk(idx), "excess_erm": p.excess_risk(erm(primary)),
            "bound_mp": cert.bound}


@lru_cache(maxsize=32)
def _sigmoid_model(d, tau, delta_M, noise_sd, seed, eval_n):
    m = gen_sigmoid_regression(d, tau, delta_M, noise_sd, seed)
    return m, m.eval_sample(eval_n)


def _gd_trial(cell, gen, opts, ctx):
    m, ev = _sigmoid_model(cell["d"], gen["tau"], gen["delta_M"], gen["noise_sd"], ctx["seed"],
                           opts["eval_n"])
    s = m.sample(cell["n"], ctx["seed"], *ctx["keys"])
    u = _rng.stream(ctx["seed"], _rng.STREAM_INIT, *ctx["keys"]).standard_normal(m.d)
    theta0 = m.theta_star + opts["init_offset"] * u / np.linalg.norm(u)
    if opts["step"] == "local":
        step = 1.0 / local_smoothness(m, s, theta0)
    elif opts["step"] == "beta":
        step = 1.0 / m.beta
    else:
        raise ConfigError("options.step must be 'local' or 'beta'")
    tr = gradient_descent(m, s, theta0, opts["steps"], step, ctx["delta"], ev,
                          ctx["constant_c"], excess_every=opts["steps"] + 1)
    return {"excess": tr.population_excess[-1], "grad_norm": tr.empirical_grad_norms[-1],
            "stat_error_prediction": tr.stat_error_prediction}


@lru_cache(maxsize=32)
def _em_model(kind, d, theta_norm, sigma, seed, eval_n):
    cls = GMM2 if kind == "gmm" else MLR2
    m = cls(d, sigma, theta_norm * _unit(seed, d), seed)
    return m, m.eval_sample(eval_n)


def _em_trial(kind):
    def trial(cell, gen, opts, ctx):
        m, ev = _em_model(kind, cell["d"], float(cell["theta_norm"]), gen["sigma"], ctx["seed"],
                          opts["eval_n"])
        s = m.sample(cell["n"], ctx["seed"], *ctx["keys"])
        theta0 = default_init(m, ctx["seed"], *ctx["keys"])
        tr = first_order_em(m, s, theta0, opts["steps"], delta=ctx["delta"], eval_sample=ev,
                            excess_every=opts["steps"] + 1)
        return {"param_error_sq": tr.param_errors[-1] ** 2, "excess": tr.population_excess[-1]}

    return trial


def _huber_trial(cell, gen, opts, ctx):
    dof = gen["dof"]
    data = gen_heavy_tailed_linear(cell["d"], None if dof == "inf" else float(dof), gen["scale"],
                                   ctx["seed"])
    gam = opts["gamma_factor"] * data.xi_l2 or 1.0
    e_sq, e_hub, ok = huber_trial(data, cell["n"], gam, ctx["seed"], ctx["trial"])
    if not ok:
        raise NumericError("Huber optimiser did not reach gradient norm 1e-8")
    return {"err_square": e_sq, "err_huber": e_hub}


def _peeling_trial(cell, gen, opts, ctx):
    p = gen_finite_random(gen["num_hypotheses"], gen["num_atoms"], gen["B"], ctx["seed"])
    R = 4.0 * p.B**2
    C = 2.0 * math.log2(2.0 * R / opts["r0"])
    v = peeling_trial(p, "empirical", ctx["delta"] / C, opts["r0"], cell["n"],
                      _rng.derive_seed(ctx["seed"], *ctx["keys"][:-1]), ctx["trial"], opts["mc_draws"])
    return {"violation": float(v)}


EXPERIMENTS: dict[str, Experiment] = {
    e.name: e
    for e in [
        Experiment("stub", "none", {}, ("n",), {}, {}, ("err",), _stub_trial),
        Experiment("mp-vs-erm", "finite_zero_variance", {"eps": 0.1, "B": 1.0}, ("n",), {},
                   {"mc_draws": 200}, ("excess_mp", "excess_erm", "bound_mp"), _mp_trial),
        Experiment("gd-sigmoid", "sigmoid_regression",
                   {"tau": 1.0, "delta_M": 4.0, "noise_sd": 0.1}, ("n",), {"d": [5]},
                   {"steps": 200, "init_offset": 0.3, "step": "local", "eval_n": 100_000},
                   ("excess", "grad_norm", "stat_error_prediction"), _gd_trial),
        Experiment("em-gmm", "gmm2", {"sigma": 1.0}, ("n",), {"d": [2], "theta_norm": [3.0]},
                   {"steps": 50, "eval_n": 100_000}, ("param_error_sq", "excess"), _em_trial("gmm")),
        Experiment("em-mlr", "mlr2", {"sigma": 1.0}, ("n",), {"d": [2], "theta_norm": [3.0]},
                   {"steps": 50, "eval_n": 100_000}, ("param_error_sq", "excess"), _em_trial("mlr")),
        Experiment("huber-vs-square", "heavy_tailed_linear", {"dof": 2.5, "scale": 1.0}, ("n",),
                   {"d": [10]}, {"gamma_factor": 2.0}, ("err_square", "err_huber"), _huber_trial),
        Experiment("peeling", "finite_random", {"num_hypotheses": 16, "num_atoms": 32, "B": 1.0},
                   ("n",), {}, {"r0": 1e-6, "mc_draws": 100}, ("violation",), _peeling_trial),
    ]
}


# ---------------------------------------------------------------------------
# configuration

_TOP_KEYS = {"experiment", "generator", "sweep", "trials", "delta", "seed", "constant_c",
             "output_path", "workers", "options"}


@dataclass
class ExperimentConfig:
    experiment: str
    generator: dict[str, Any]
    sweep: dict[str, list]
    trials: int
    delta: float = 0.1
    seed: int = 0
    constant_c: float = 1.0
    output_path: str | None = None
    workers: int = 1
    options: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a table")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("experiment", "sweep", "trials"):
            if key not in raw:
                raise ConfigError(f"missing required key {key!r}")
        gen = raw.get("generator", {})
        if isinstance(gen, str):
            gen = {"name": gen}
        cfg = cls(
            experiment=raw["experiment"], generator=dict(gen), sweep=dict(raw["sweep"]),
            trials=raw["trials"], delta=raw.get("delta", 0.1), seed=raw.get("seed", 0),
            constant_c=raw.get("constant_c", 1.0), output_path=raw.get("output_path"),
            workers=raw.get("workers", 1), options=dict(raw.get("options", {})),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        exp = EXPERIMENTS.get(self.experiment)
        if exp is None:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {sorted(EXPERIMENTS)}")
        if not isinstance(self.trials, int) or isinstance(self.trials, bool) or self.trials < 1:
            raise ConfigError("trials must be a positive integer")
        if not isinstance(self.delta, (int, float)) or not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit non-negative integer")
        if not isinstance(self.constant_c, (int, float)) or self.constant_c <= 0:
            raise ConfigError("constant_c must be positive")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be a positive integer")

        gen = dict(self.generator)
        name = gen.pop("name", exp.generator)
        if name != exp.generator:
            raise ConfigError(f"experiment {exp.name!r} uses generator {exp.generator!r}, not {name!r}")
        params = gen.pop("params", {})
        if gen:
            raise ConfigError(f"unknown generator keys: {sorted(gen)}")
        bad = set(params) - set(exp.generator_params)
        if bad:
            raise ConfigError(f"unknown parameters for generator {name!r}: {sorted(bad)}")

        if not self.sweep:
            raise ConfigError("sweep must not be empty")
        allowed = set(exp.sweep_required) | set(exp.sweep_optional)
        bad = set(self.sweep) - allowed
        if bad:
            raise ConfigError(f"unknown sweep axes for {exp.name!r}: {sorted(bad)}")
        for axis in exp.sweep_required:
            if axis not in self.sweep:
                raise ConfigError(f"sweep must list {axis!r}")
        for axis, values in self.sweep.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep axis {axis!r} must be a non-empty list")
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in values):
                raise ConfigError(f"sweep axis {axis!r} must hold positive numbers")
            if axis in ("n", "d") and not all(isinstance(v, int) for v in values):
                raise ConfigError(f"sweep axis {axis!r} must hold integers")
        bad = set(self.options) - set(exp.options)
        if bad:
            raise ConfigError(f"unknown options for {exp.name!r}: {sorted(bad)}")

    # resolved views -------------------------------------------------------
    def resolved_generator(self) -> dict[str, Any]:
        exp = EXPERIMENTS[self.experiment]
        return {**exp.generator_params, **self.generator.get("params", {})}

    def resolved_options(self) -> dict[str, Any]:
        return {**EXPERIMENTS[self.experiment].options, **self.options}

    def resolved_sweep(self) -> dict[str, list]:
        exp = EXPERIMENTS[self.experiment]
        return {**exp.sweep_optional, **self.sweep}

    def cells(self) -> list[dict[str, Any]]:
        sweep = self.resolved_sweep()
        axes = sorted(sweep)
        return [dict(zip(axes, combo)) for combo in itertools.product(*(sweep[a] for a in axes))]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator"] = {"name": EXPERIMENTS[self.experiment].generator,
                          "params": self.resolved_generator()}
        d["sweep"] = self.resolved_sweep()
        d["options"] = self.resolved_options()
        return d


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# execution


@dataclass
class ScalingReport:
    cells: list[dict[str, Any]]
    fits: list[dict[str, Any]]
    metadata: dict[str, Any]
    trials: list[dict[str, Any]] = field(default_factory=list, repr=False)

    def cell(self, metric: str, **params) -> dict[str, Any]:
        for c in self.cells:
            if c["metric"] == metric and all(c["params"][k] == v for k, v in params.items()):
                return c
        raise KeyError((metric, params))

    def fit(self, metric: str, axis: str, **fixed) -> dict[str, Any]:
        for f in self.fits:
            if f["metric"] == metric and f["axis"] == axis and all(f["fixed"].get(k) == v for k, v in fixed.items()):
                return f
        raise KeyError((metric, axis, fixed))

    def cells_csv(self) -> str:
        axes = sorted(self.cells[0]["params"]) if self.cells else []
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*axes, "metric", "median", "mean", "p05", "p95", "se", "trials", "failures"])
        for c in self.cells:
            w.writerow([*(c["params"][a] for a in axes), c["metric"],
                        *(format_float(c[k]) for k in ("median", "mean", "p05", "p95", "se")),
                        c["trials"], c["failures"]])
        return buf.getvalue()

    def trials_csv(self) -> str:
        if not self.trials:
            return ""
        axes = sorted(self.trials[0]["params"])
        metrics = sorted(self.trials[0]["values"]) if self.trials[0]["values"] else []
        for t in self.trials:
            if t["values"]:
                metrics = sorted(t["values"])
                break
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell", "trial", *axes, "status", *metrics])
        for t in self.trials:
            vals = [format_float(t["values"][m]) if t["values"] else "" for m in metrics]
            w.writerow([t["cell"], t["trial"], *(t["params"][a] for a in axes), t["status"], *vals])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"cells": self.cells, "fits": self.fits, "metadata": self.metadata},
                          indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def build_id() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__

    return f"v{__version__}"


def _run_trial(task):
    name, cell_idx, cell, gen, opts, seed, delta, c, trial = task
    ctx = {"seed": seed, "delta": delta, "constant_c": c, "trial": trial,
           "keys": (name, cell_idx, trial)}
    try:
        vals = EXPERIMENTS[name].trial(cell, gen, opts, ctx)
        vals = {k: float(v) for k, v in vals.items()}
        if not all(math.isfinite(v) for v in vals.values()):
            raise NumericError("trial produced a non-finite metric")
        return cell_idx, trial, "ok", vals, ""
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return cell_idx, trial, "failed", {}, f"{type(exc).__name__}: {exc}"


def _summary(values: np.ndarray) -> dict[str, float]:
    k = values.size
    return {
        "median": float(np.median(values)),
        "mean": float(np.mean(values)),
        "p05": float(np.percentile(values, 5)),
        "p95": float(np.percentile(values, 95)),
        "se": float(np.std(values, ddof=1) / math.sqrt(k)) if k > 1 else 0.0,
    }


def _fits(cells: list[dict], axes: dict[str, list], metrics) -> list[dict]:
    out = []
    for metric in metrics:
        mine = [c for c in cells if c["metric"] == metric]
        for axis, values in sorted(axes.items()):
            if len(set(values)) < 3:
                continue
            others = sorted(a for a in axes if a != axis)
            groups: dict[tuple, list] = {}
            for c in mine:
                groups.setdefault(tuple(c["params"][a] for a in others), []).append(c)
            for key, group in sorted(groups.items()):
                group = sorted(group, key=lambda c: c["params"][axis])
                xs = [c["params"][axis] for c in group]
                ys = [c["median"] for c in group]
                entry = {"metric": metric, "axis": axis, "fixed": dict(zip(others, key)),
                         "points": len(xs)}
                try:
                    slope, intercept, r2 = fit_loglog(xs, ys)
                    entry.update(slope=slope, intercept=intercept, r2=r2, note="")
                except ValueError as exc:
                    entry.update(slope=None, intercept=None, r2=None, note=f"undefined: {exc}")
                out.append(entry)
    return out


def run_experiment(config: ExperimentConfig, workers: int | None = None,
                   write: bool = True) -> ScalingReport:
    """Execute every ``(cell, trial)`` of the sweep and aggregate per cell."""
    config.validate()
    t0 = time.perf_counter()
    exp = EXPERIMENTS[config.experiment]
    gen, opts = config.resolved_generator(), config.resolved_options()
    cells = config.cells()
    tasks = [(exp.name, i, cell, gen, opts, config.seed, config.delta, config.constant_c, t)
             for i, cell in enumerate(cells) for t in range(config.trials)]
    nworkers = config.workers if workers is None else workers
    if nworkers > 1:
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            results = list(pool.map(_run_trial, tasks, chunksize=max(1, len(tasks) // (8 * nworkers))))
    else:
        results = [_run_trial(t) for t in tasks]
    # deterministic reduction order regardless of scheduling
    results.sort(key=lambda r: (r[0], r[1]))

    trials, summaries = [], []
    for i, cell in enumerate(cells):
        mine = [r for r in results if r[0] == i]
        ok = [r for r in mine if r[2] == "ok"]
        failed = len(mine) - len(ok)
        if failed > MAX_FAILURE_FRACTION * len(mine):
            msgs = sorted({r[4] for r in mine if r[2] != "ok"})
            raise NumericError(f"{failed}/{len(mine)} trials failed in cell {cell}: {msgs[:3]}")
        for r in mine:
            trials.append({"cell": i, "trial": r[1], "params": cell, "status": r[2],
                           "values": r[3], "error": r[4]})
        for metric in exp.metrics:
            vals = np.array([r[3][metric] for r in ok])
            summaries.append({"params": cell, "metric": metric, **_summary(vals),
                              "trials": len(ok), "failures": failed})

    report = ScalingReport(
        cells=summaries,
        fits=_fits(summaries, config.resolved_sweep(), exp.metrics),
        metadata={"config": config.to_dict(), "build_id": build_id(),
                  "wall_time_s": time.perf_counter() - t0, "workers": nworkers},
        trials=trials,
    )
    if write and config.output_path:
        write_report(report, config.output_path)
    return report


def write_report(report: ScalingReport, output_path: str) -> None:
    """Write ``<path>.csv`` (cell summaries), ``<path>.trials.csv`` and ``<path>.json``."""
    base = Path(output_path)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{base}.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(report.cells_csv())
    with open(f"{base}.trials.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(report.trials_csv())
    with open(f"{base}.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json() + "\n")
