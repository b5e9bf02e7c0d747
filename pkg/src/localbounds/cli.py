"""Command-line entry point: ``localbounds <subcommand> ...``.

Exit codes: 0 on success, 2 on invalid input, 3 on numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Sequence

import numpy as np

from . import rng as _rng
from .classes import (gen_finite_random, gen_finite_zero_variance, gen_heavy_tailed_linear,
                      gen_sigmoid_regression)
from .convexcost import (CostSpec, SmallBallEstimate, huber_vs_square_experiment,
                         small_ball_estimate, theorem81_bound)
from .em import GMM2, MLR2, default_init, first_order_em
from .estimators import certify_loss_rate, erm, moment_penalized, variance_certificate
from .gradflow import gradient_descent, local_smoothness
from .harness import ConfigError, format_float, load_config, run_experiment
from .numkit import (NumericError, SurrogateSpec, dudley_bound, fixed_point_bounded,
                     nonparametric_rstar, suboptimality_ratio)
from .rademacher import build_psi, validate_peeling

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class UsageError(ValueError):
    pass


def _emit_json(obj, out=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_default)
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _emit_csv(header, rows, out=None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def parse_psi(text: str, n: int, B: float, constant_c: float = 1.0) -> SurrogateSpec | str:
    """``empirical``, ``nonparametric:RHO``, ``parametric:D`` or ``vc:D``."""
    if text == "empirical":
        return text
    kind, _, arg = text.partition(":")
    try:
        if kind == "nonparametric":
            return SurrogateSpec.nonparametric(float(arg), n, B, constant_c=constant_c)
        if kind == "vc":
            return SurrogateSpec.vc(int(arg), n, B, constant_c=constant_c)
        if kind == "parametric":
            return SurrogateSpec.parametric(int(arg), n, B, constant_c=constant_c)
    except ValueError as exc:
        raise UsageError(f"bad surrogate {text!r}: {exc}") from exc
    raise UsageError(f"unknown surrogate {text!r}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_fixed_point(a):
    psi = parse_psi(a.psi, a.n, a.B, a.constant_c)
    if isinstance(psi, str):
        raise UsageError("fixed-point needs an analytic surrogate")
    mult = 6 * a.B if a.multiplier is None else a.multiplier
    res = fixed_point_bounded(lambda r: mult * psi(a.inner * r, a.delta), psi.cap_R / a.inner, a.tol)
    out = {"r_star": res.r_star, "iterations": res.iterations, "bracket_width": res.bracket_width,
           "multiplier": mult, "inner": a.inner, "psi": a.psi}
    if psi.kind == "nonparametric":
        rho = psi.rho
        out["closed_form"] = ((mult * a.constant_c) ** (2 / (1 + rho)) * a.inner ** ((1 - rho) / (1 + rho))
                              * a.n ** (-1 / (1 + rho)))
    _emit_json(out, a.out)


def _entropy(text: str):
    kind, _, arg = text.partition(":")
    try:
        v = float(arg)
    except ValueError as exc:
        raise UsageError(f"bad entropy {text!r}") from exc
    if kind == "const":
        return lambda e: v
    if kind == "log":
        return lambda e: v * math.log(1 / e) if e < 1 else 0.0
    if kind == "poly":
        return lambda e: e ** (-2 * v) if e > 0 else math.inf
    raise UsageError(f"unknown entropy {text!r}; use const:V, log:D or poly:RHO")


def cmd_dudley(a):
    _emit_json({"bound": dudley_bound(_entropy(a.entropy), a.r, a.n), "r": a.r, "n": a.n,
                "entropy": a.entropy}, a.out)


def _finite_problem(a):
    if a.problem == "zero-variance":
        return gen_finite_zero_variance(a.eps, a.B)
    return gen_finite_random(a.hypotheses, a.atoms, a.B, a.seed)


def cmd_validate_peeling(a):
    p = _finite_problem(a)
    psi = parse_psi(a.psi, a.n, a.B)
    rep = validate_peeling(p, psi, a.delta, a.r0, a.trials, a.n, a.seed, a.mc_draws)
    _emit_json(rep.to_dict(), a.out)


def _read_loss_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise UsageError("loss CSV needs a header row and at least two samples")
    names = rows[0]
    try:
        L = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise UsageError(f"non-numeric loss value: {exc}") from exc
    if L.ndim != 2 or L.shape[1] != len(names):
        raise UsageError("every row must have one value per hypothesis")
    if not np.all(np.isfinite(L)):
        raise UsageError("loss values must be finite")
    return names, L


def cmd_certify(a):
    names, L = _read_loss_csv(a.losses)
    n = L.shape[0]
    B = a.B if a.B is not None else float(np.max(np.abs(L))) or 1.0
    if np.any(np.abs(L) > B):
        raise UsageError(f"losses exceed the bound B={B}")
    if a.split == "first-half-aux":
        aux_idx, prim_idx = np.arange(n // 2), np.arange(n // 2, 2 * (n // 2))
    else:
        perm = _rng.stream(a.seed, _rng.STREAM_SPLIT).permutation(n)
        aux_idx, prim_idx = np.sort(perm[: n // 2]), np.sort(perm[n // 2: 2 * (n // 2)])
    prim, aux = L[prim_idx], L[aux_idx]

    def surrogate(losses, center, sub_root):
        spec = parse_psi(a.psi, losses.shape[0], B, a.constant_c)
        if spec == "empirical":
            return build_psi(losses, center, B, a.mc_draws, a.seed, sub_root=sub_root)
        return spec

    h = erm(L)
    loss_cert = certify_loss_rate(L, surrogate(L, h, False), a.delta, a.r0, B, seed=a.seed)
    h0 = erm(aux)
    psi_mp = surrogate(prim, h0, True)
    idx, mp_cert = moment_penalized(prim, aux, psi_mp, a.delta, B, a.constant_c, seed=a.seed)
    var_cert = variance_certificate(prim, mp_cert.details["L0_hat"], psi_mp, a.delta, B, seed=a.seed)
    _emit_json({
        "hypotheses": names, "n": n, "B": B, "split": a.split, "psi": a.psi,
        "erm": {"index": h, "name": names[h]},
        "loss_dependent": loss_cert.to_dict(),
        "moment_penalized": {"index": idx, "name": names[idx], "certificate": mp_cert.to_dict()},
        "variance": var_cert.to_dict(),
    }, a.out)


def _step_arg(text):
    if text in ("local", "beta"):
        return text
    try:
        v = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("step must be 'local', 'beta' or a positive number") from exc
    if v <= 0:
        raise argparse.ArgumentTypeError("step must be positive")
    return v


def cmd_gd_run(a):
    m = gen_sigmoid_regression(a.d, a.tau, a.delta_M, a.noise_sd, a.seed)
    s = m.sample(a.n, a.seed, "gd-run")
    u = _rng.stream(a.seed, _rng.STREAM_INIT, "gd-run").standard_normal(a.d)
    theta0 = m.theta_star + a.init_offset * u / np.linalg.norm(u)
    step = (1 / local_smoothness(m, s, theta0) if a.step == "local"
            else 1 / m.beta if a.step == "beta" else a.step)
    tr = gradient_descent(m, s, theta0, a.steps, step, a.delta, m.eval_sample(a.eval_n))
    _emit_csv(["iteration", "grad_norm", "excess_risk"],
              [(t, tr.empirical_grad_norms[t], tr.population_excess[t]) for t in range(a.steps + 1)],
              a.out)


def cmd_em_run(a):
    v = _rng.stream(a.seed, _rng.STREAM_MODEL, "direction", a.d).standard_normal(a.d)
    theta_star = a.theta_norm * v / np.linalg.norm(v)
    m = (GMM2 if a.model == "gmm" else MLR2)(a.d, a.sigma, theta_star, a.seed)
    s = m.sample(a.n, a.seed, "em-run")
    tr = first_order_em(m, s, default_init(m, a.seed, "em-run"), a.steps, a.step, a.delta,
                        m.eval_sample(a.eval_n))
    _emit_csv(["iteration", "grad_norm", "excess_risk", "param_error"],
              [(t, tr.empirical_grad_norms[t], tr.population_excess[t], tr.param_errors[t])
               for t in range(a.steps + 1)], a.out)


def cmd_huber_exp(a):
    dof = None if a.dof == "inf" else float(a.dof)
    rows = huber_vs_square_experiment(a.d, dof, a.n, a.trials, a.seed, a.scale)
    _emit_csv(["cost", "n", "median_err", "p95_err", "trials"],
              [(r["cost"], r["n"], r["median_err"], r["p95_err"], r["trials"]) for r in rows], a.out)


def cmd_thm81_bound(a):
    dof = None if a.dof == "inf" else float(a.dof)
    data = gen_heavy_tailed_linear(a.d, dof, a.scale, a.seed)
    if a.kappa is not None and a.c_kappa is not None:
        sb = SmallBallEstimate(a.kappa, a.c_kappa, 0)
    else:
        sb = small_ball_estimate(data, "linear", probes=a.probes, seed=a.seed)
    cost = {"square": CostSpec.square(), "logistic": CostSpec.logistic()}.get(a.cost)
    if a.cost == "huber":
        # default: the smallest threshold keeping curvature at the localization level
        gamma = a.gamma if a.gamma is not None else 4 * data.xi_l2 / math.sqrt(sb.c_kappa)
        cost = CostSpec.huber(gamma or 1.0)
    noise_scale = a.noise_scale if a.noise_scale is not None else data.xi_l2
    n, d = a.n, a.d
    phi = lambda r: math.sqrt(d * r / n)  # noqa: E731
    phi_noise = lambda r, dl: math.sqrt(noise_scale**2 * (d + math.log(1 / dl)) * r / n)  # noqa: E731
    cert = theorem81_bound(cost, data, phi, phi_noise, sb, a.delta, a.r0, n)
    _emit_json({"cost": a.cost, "kappa": sb.kappa, "c_kappa": sb.c_kappa, **cert.to_dict()}, a.out)


def cmd_run_experiment(a):
    cfg = load_config(a.config)
    if a.output_path:
        cfg.output_path = a.output_path
    rep = run_experiment(cfg, workers=a.workers)
    _emit_json({"fits": rep.fits, "build_id": rep.metadata["build_id"],
                "output_path": cfg.output_path, "cells": len(rep.cells)})


def cmd_ratio(a):
    _emit_json({"ratio": suboptimality_ratio(a.V, a.B, a.n, a.rho), "V": a.V, "B": a.B, "n": a.n,
                "rho": a.rho, "r_star": nonparametric_rstar(a.B, a.n, a.rho)}, a.out)


# ---------------------------------------------------------------------------
# parser


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _unit_interval(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="localbounds", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fixed-point", help="fixed point of M * psi(K r; delta)")
    s.add_argument("--psi", required=True, help="nonparametric:RHO | parametric:D | vc:D")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--B", type=_positive, default=1.0)
    s.add_argument("--delta", type=_unit_interval, default=0.1)
    s.add_argument("--multiplier", type=_positive, default=None, help="M (default 6B)")
    s.add_argument("--inner", type=_positive, default=8.0, help="K (default 8)")
    s.add_argument("--constant-c", type=_positive, default=1.0)
    s.add_argument("--tol", type=_positive, default=1e-12)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fixed_point)

    s = sub.add_parser("dudley", help="Dudley entropy integral bound")
    s.add_argument("--entropy", required=True, help="const:V | log:D | poly:RHO")
    s.add_argument("--r", type=_positive, required=True)
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_dudley)

    s = sub.add_parser("validate-peeling", help="Monte Carlo violation rate of the peeling inequality")
    s.add_argument("--problem", choices=["random", "zero-variance"], default="random")
    s.add_argument("--hypotheses", type=_positive_int, default=16)
    s.add_argument("--atoms", type=_positive_int, default=32)
    s.add_argument("--eps", type=float, default=0.1)
    s.add_argument("--B", type=_positive, default=1.0)
    s.add_argument("--n", type=_positive_int, default=200)
    s.add_argument("--delta", type=_unit_interval, default=0.1)
    s.add_argument("--r0", type=_positive, default=1e-6)
    s.add_argument("--trials", type=int, default=2000)
    s.add_argument("--psi", default="empirical")
    s.add_argument("--mc-draws", type=_positive_int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_validate_peeling)

    s = sub.add_parser("certify", help="certificates from a CSV loss matrix")
    s.add_argument("losses", help="CSV: header of hypothesis names, one row per sample")
    s.add_argument("--delta", type=_unit_interval, default=0.1)
    s.add_argument("--split", choices=["first-half-aux", "seeded-random"], default="first-half-aux")
    s.add_argument("--psi", default="empirical")
    s.add_argument("--r0", type=_positive, default=1e-6)
    s.add_argument("--B", type=_positive, default=None, help="loss bound (default max |loss|)")
    s.add_argument("--constant-c", type=_positive, default=1.0)
    s.add_argument("--mc-draws", type=_positive_int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("gd-run", help="gradient descent trace on sigmoid regression (CSV)")
    s.add_argument("--d", type=_positive_int, default=5)
    s.add_argument("--tau", type=_positive, default=1.0)
    s.add_argument("--delta-M", type=_positive, default=4.0)
    s.add_argument("--noise-sd", type=float, default=0.1)
    s.add_argument("--n", type=_positive_int, default=1024)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--step", type=_step_arg, default="local")
    s.add_argument("--init-offset", type=float, default=0.3)
    s.add_argument("--delta", type=_unit_interval, default=0.1)
    s.add_argument("--eval-n", type=_positive_int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gd_run)

    s = sub.add_parser("em-run", help="first-order EM trace (CSV)")
    s.add_argument("--model", choices=["gmm", "mlr"], default="gmm")
    s.add_argument("--d", type=_positive_int, default=2)
    s.add_argument("--sigma", type=_positive, default=1.0)
    s.add_argument("--theta-norm", type=_positive, default=3.0)
    s.add_argument("--n", type=_positive_int, default=2000)
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--step", type=_positive, default=None)
    s.add_argument("--delta", type=_unit_interval, default=0.1)
    s.add_argument("--eval-n", type=_positive_int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_em_run)

    s = sub.add_parser("huber-exp", help="Huber vs square ERM under heavy-tailed noise (CSV)")
    s.add_argument("--d", type=_positive_int, default=10)
    s.add_argument("--dof", default="2.5", help="Student-t degrees of freedom, or 'inf' for Gaussian")
    s.add_argument("--n", type=_positive_int, nargs="+", default=[500])
    s.add_argument("--trials", type=_positive_int, default=500)
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_huber_exp)

    s = sub.add_parser("thm81-bound", help="two-fixed-point bound for a structured convex cost")
    s.add_argument("--cost", choices=["square", "huber", "logistic"], default="huber")
    s.add_argument("--gamma", type=_positive, default=None)
    s.add_argument("--d", type=_positive_int, default=10)
    s.add_argument("--n", type=_positive_int, default=10_000)
    s.add_argument("--dof", default="2.5")
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--noise-scale", type=float, default=None,
                   help="L2 norm of the noise multiplier (default |xi|_L2)")
    s.add_argument("--kappa", type=_positive, default=None)
    s.add_argument("--c-kappa", type=_unit_interval, default=None)
    s.add_argument("--probes", type=_positive_int, default=10_000)
    s.add_argument("--delta", type=_unit_interval, default=0.1)
    s.add_argument("--r0", type=_positive, default=1e-8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_thm81_bound)

    s = sub.add_parser("run-experiment", help="run a TOML-configured Monte Carlo sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", type=_positive_int, default=None)
    s.add_argument("--output-path", default=None)
    s.set_defaults(func=cmd_run_experiment)

    s = sub.add_parser("ratio", help="gap between previous and localized variance-dependent rates")
    s.add_argument("--V", type=float, required=True)
    s.add_argument("--B", type=_positive, default=1.0)
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--rho", type=float, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_ratio)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, UsageError, ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
