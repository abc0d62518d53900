"""Command-line interface: ``sosinfer {profile,bound,ci,limit-quantile,experiment}``.

Results go to stdout as JSON, or to ``--out`` as CSV.  Exit codes: 0 on
success, 1 for domain errors (infeasible parameter, failed calibration, bad
data), 2 for usage, configuration and parameter-range errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cvar import CalibrationConfig, CvarProgram, ci_baseline_bootstrap, ci_baseline_clt, cvar_ci_sos, saa_solve
from .errors import ConfigError, DomainError
from .experiment import METHODS, emit_table, load_config, run_coverage_experiment
from .limit_laws import FORMULATIONS, LimitLawSpec, TauLaw, quantile
from .lp_engine import LpError
from .pool import DistributionSpec, PoolError, ScenarioPool, load_pool_csv, merge_pools, sample_synthetic
from .robust_bounds import worst_case_bound
from .sos_profile import profile_mean, profile_mean_dual

LOSSES = {
    "first": lambda Z: Z[:, 0],
    "sum": lambda Z: Z.sum(axis=1),
    "sumsq": lambda Z: (Z * Z).sum(axis=1),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _emit(result: dict, out: str | None) -> None:
    if out is None:
        sys.stdout.write(json.dumps(_clean(result), sort_keys=True) + "\n")
        return
    flat = {k: (";".join(map(str, v)) if isinstance(v, (list, tuple)) else v) for k, v in _clean(result).items()}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(sorted(flat))
    w.writerow([flat[k] for k in sorted(flat)])
    Path(out).write_text(buf.getvalue())


def _pool(args):
    samples = load_pool_csv(args.data)
    scen = None
    if args.scenarios:
        scen = ScenarioPool(load_pool_csv(args.scenarios, samples.dim).points, samples.dim)
    return merge_pools(samples, scen, args.kappa)


def cmd_profile(args) -> dict:
    pool = _pool(args)
    theta = _floats(args.theta)
    ev = profile_mean(pool, theta)
    res = {"value": ev.value, "duality_gap": ev.duality_gap, "theta": theta, "n": pool.n, "m": pool.m}
    if args.dual:
        res["dual_value"] = profile_mean_dual(pool, theta)
    return res


def cmd_bound(args) -> dict:
    pool = _pool(args)
    loss = LOSSES[args.loss](pool.Z)
    val = worst_case_bound(pool, loss, args.delta, args.sense)
    return {"bound": val, "delta": args.delta, "sense": args.sense, "loss": args.loss, "n": pool.n, "m": pool.m}


def _dist_from_args(args) -> DistributionSpec:
    return DistributionSpec(args.family, args.dim)


def cmd_ci(args) -> dict:
    if args.data:
        sample = load_pool_csv(args.data)
        dist = _dist_from_args(args) if args.mode == "truth" else None
    else:
        if args.n is None:
            raise UsageError("ci: give --data or --n for a synthetic sample")
        dist = _dist_from_args(args)
        sample = sample_synthetic(dist, args.n, args.seed, (args.n,))
    program = CvarProgram(args.alpha, sample)
    if args.method == "clt":
        ci = ci_baseline_clt(program, args.level)
    elif args.method == "bootstrap":
        ci = ci_baseline_bootstrap(program, args.level, args.B, args.seed)
    else:
        cal = CalibrationConfig(
            draws=args.draws, seed=args.seed, mode=args.mode, endpoints=args.endpoints,
            radius=args.radius, resamples=args.resamples, dist=dist,
        )
        ci = cvar_ci_sos(program, args.method, args.level, cal)
    est = saa_solve(program)
    return {
        "method": args.method, "lower": ci.lower, "upper": ci.upper, "length": ci.length,
        "level": ci.level, "quantile": ci.quantile, "exponent": ci.alpha, "delta_n": ci.delta_n,
        "flags": list(ci.flags), "theta_hat": est.theta_hat, "c_hat": est.c_hat, "n": program.n,
    }


def cmd_limit_quantile(args) -> dict:
    var = _floats(args.var)
    cov = np.diag(np.broadcast_to(var, (args.q or var.size,)).astype(float)) if var.size > 1 or args.q else np.array([[var[0]]])
    if args.formulation == "mean" and cov.shape[0] != args.dim:
        cov = np.eye(args.dim) * var[0]
    tau = TauLaw(np.array([args.rate])) if args.dim >= 2 or args.formulation != "mean" else None
    ups = np.linalg.pinv(cov) if args.formulation == "explicit" and args.dim == 1 else None
    spec = LimitLawSpec(args.formulation, args.dim, cov, tau_law=tau, C=args.C, upsilon=ups)
    q = quantile(spec, args.p, args.draws, args.seed)
    return {"quantile": q, "p": args.p, "dim": args.dim, "formulation": args.formulation, "draws": args.draws, "seed": args.seed}


def cmd_experiment(args) -> dict | None:
    overrides = list(args.set or [])
    for key in ("replications", "seed", "draws"):
        v = getattr(args, key)
        if v is not None:
            overrides.append(f"{key}={v}")
    if args.sizes:
        overrides.append(f"sizes=[{args.sizes}]")
    if args.methods:
        overrides.append("methods=[" + ",".join(f'"{m}"' for m in args.methods.split(",")) + "]")
    cfg = load_config(args.config, overrides)
    rows = run_coverage_experiment(cfg)
    out = args.out or cfg.output
    if out is not None:
        emit_table(rows, args.format, out)
    if args.format == "markdown" and out is None:
        sys.stdout.write(emit_table(rows, "markdown"))
        return None
    return {
        "rows": [
            {
                "n": r.n, "method": r.method, "coverage": r.coverage, "coverage_se": r.coverage_se,
                "mean_lower": r.mean_lower, "mean_upper": r.mean_upper, "mean_length": r.mean_length,
                "sd_length": r.sd_length, "replications": r.replications, "failures": r.failures, "aborted": r.aborted,
            }
            for r in rows
        ]
    } if out is None else {"written": str(out), "rows": len(rows)}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sosinfer", description="SOS Wasserstein profile inference")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def pool_args(sp):
        sp.add_argument("--data", required=True, help="CSV of sample points, one per row")
        sp.add_argument("--scenarios", help="CSV of scenario points")
        sp.add_argument("--kappa", type=float, help="scenario-to-sample ratio m/n")
        sp.add_argument("--out", help="write CSV here instead of JSON to stdout")

    sp = sub.add_parser("profile", help="SOS profile of the mean at theta")
    pool_args(sp)
    sp.add_argument("--theta", required=True, help="comma-separated parameter")
    sp.add_argument("--dual", action="store_true", help="also report the dual value")
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("bound", help="worst-case expected loss over the Wasserstein ball")
    pool_args(sp)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--sense", choices=("max", "min"), default="max")
    sp.add_argument("--loss", choices=sorted(LOSSES), default="first")
    sp.set_defaults(func=cmd_bound)

    sp = sub.add_parser("ci", help="one C-VaR confidence interval")
    sp.add_argument("--data", help="CSV of sample points; otherwise a synthetic sample is drawn")
    sp.add_argument("--n", type=int, help="synthetic sample size")
    sp.add_argument("--family", choices=("gaussian", "laplace-product"), default="gaussian")
    sp.add_argument("--dim", type=int, default=4)
    sp.add_argument("--method", choices=METHODS, default="esos-c")
    sp.add_argument("--alpha", type=float, default=0.9)
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--mode", choices=("plugin", "truth"), default="plugin")
    sp.add_argument("--endpoints", choices=("full", "value"), default="value")
    sp.add_argument("--radius", choices=("limit", "resample", "auto"), default="auto")
    sp.add_argument("--resamples", type=int, default=200)
    sp.add_argument("--draws", type=int, default=50_000)
    sp.add_argument("--B", type=int, default=1000, help="bootstrap resamples")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ci)

    sp = sub.add_parser("limit-quantile", help="quantile of a limit law")
    sp.add_argument("--dim", type=int, default=1, help="effective dimension selecting the branch")
    sp.add_argument("--var", default="1", help="variance (scalar or comma-separated diagonal)")
    sp.add_argument("--q", type=int, help="number of moment coordinates")
    sp.add_argument("--formulation", choices=FORMULATIONS, default="mean")
    sp.add_argument("--rate", type=float, default=1.0, help="constant rate of the tau law")
    sp.add_argument("--C", type=float, help="constant of the power law (dimension >= 3)")
    sp.add_argument("--p", type=float, default=0.95)
    sp.add_argument("--draws", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_limit_quantile)

    sp = sub.add_parser("experiment", help="coverage experiment for the C-VaR intervals")
    sp.add_argument("--config", help="TOML configuration file")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")
    sp.add_argument("--replications", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--draws", type=int)
    sp.add_argument("--sizes", help="comma-separated sample sizes")
    sp.add_argument("--methods", help="comma-separated methods")
    sp.add_argument("--format", choices=("csv", "markdown"), default="csv")
    sp.add_argument("--out", help="write the table here")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        result = args.func(args)
        if result is not None:
            _emit(result, getattr(args, "out", None) if args.command != "experiment" else None)
        return 0
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (DomainError, PoolError, LpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:  # invalid parameter value that argparse cannot see
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
