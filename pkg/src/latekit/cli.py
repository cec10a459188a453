"""Command-line interface: analyze, simulate, design, lambda."""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data_model import DesignSpec, center_covariates
from .design import draw_assignment, mahalanobis
from .exceptions import AcceptanceRegionError
from .io import ALL_METHODS, analyze_file, plot_data_rows, read_covariates, write_plot_data
from .mixture import MixtureParams, quantile_table, threshold_from_pa
from .simulation import StudyConfig, run_study

_CONFIG_KEYS = {"n", "tau_w", "design", "p_a", "adjustment", "reps", "seed",
                "gamma", "p_plus", "alpha", "k", "threads"}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latekit",
        description="Finite-population inference for the sample local average "
                    "treatment effect in randomized experiments with noncompliance.")
    sub = parser.add_subparsers(dest="command", required=True)

    an = sub.add_parser("analyze", help="per-stratum analysis of a records CSV")
    an.add_argument("--input", required=True)
    an.add_argument("--methods", default=",".join(ALL_METHODS),
                    help="comma-separated subset of: " + ",".join(ALL_METHODS))
    an.add_argument("--adjust", default="none", choices=["none", "ehw", "hc2", "hc3"])
    an.add_argument("--design", default="cre", choices=["cre", "rem"])
    an.add_argument("--pa", type=float, default=None,
                    help="acceptance probability the ReM threshold derives from")
    an.add_argument("--alpha", type=float, default=0.05)
    an.add_argument("--gamma", type=float, default=0.075)
    an.add_argument("--pplus", type=float, default=0.01)
    an.add_argument("--out", required=True)
    an.add_argument("--plot-data", default=None)

    sim = sub.add_parser("simulate", help="run a Monte Carlo study from a config file")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--reps", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--threads", type=int, default=None)

    de = sub.add_parser("design", help="draw one assignment vector for a covariate file")
    de.add_argument("--input", required=True)
    de.add_argument("--mode", default="rem", choices=["cre", "rem"])
    de.add_argument("--pa", type=float, default=None)
    de.add_argument("--seed", type=int, default=0)
    de.add_argument("--n1", type=int, default=None,
                    help="treated-arm size (default: half the units)")
    de.add_argument("--out", required=True)

    lam = sub.add_parser("lambda", help="dump a mixture quantile table as CSV")
    lam.add_argument("--k", type=int, required=True)
    group = lam.add_mutually_exclusive_group(required=True)
    group.add_argument("--pa", type=float, default=None)
    group.add_argument("--a", type=float, default=None)
    lam.add_argument("--alpha", type=float, default=0.05)
    lam.add_argument("--out", required=True)
    return parser


def _cmd_analyze(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {ALL_METHODS}")
    report = analyze_file(args.input, methods=methods, adjustment=args.adjust,
                          design=args.design, p_a=args.pa, alpha=args.alpha,
                          gamma=args.gamma, p_plus=args.pplus)
    Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    if args.plot_data:
        write_plot_data(plot_data_rows(report), args.plot_data)
    return 0


def _cmd_simulate(args) -> int:
    raw = json.loads(Path(args.config).read_text())
    unknown = sorted(set(raw) - _CONFIG_KEYS)
    if unknown:
        raise ValueError(f"invalid config keys: {', '.join(unknown)}")
    if "tau_w" in raw:
        raw["tau_w"] = tuple(raw["tau_w"])
    if "gamma" in raw:
        raw["gamma"] = tuple(raw["gamma"])
    cfg = StudyConfig(**raw)
    if args.reps is not None:
        cfg = dataclasses.replace(cfg, reps=args.reps)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.threads is not None:
        cfg = dataclasses.replace(cfg, threads=args.threads)
    start = time.time()
    table = run_study(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.csv").write_text(table.to_csv())
    (out / "table.json").write_text(json.dumps(table.to_json_dict(), indent=2) + "\n")
    manifest = {
        "config": {k: list(v) if isinstance(v, tuple) else v
                   for k, v in dataclasses.asdict(cfg).items()},
        "seed": cfg.seed,
        "versions": {"latekit": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "wall_time_seconds": round(time.time() - start, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return 0


def _cmd_design(args) -> int:
    x_raw = read_covariates(args.input)
    x, _ = center_covariates(x_raw)
    n, k = x.shape
    n1 = args.n1 if args.n1 is not None else n // 2
    if args.mode == "rem":
        if args.pa is None:
            raise ValueError("--pa is required with --mode rem")
        if not 0.0 < args.pa < 1.0:
            raise ValueError("--pa must be strictly between 0 and 1")
        spec = DesignSpec.rem(n1, p_a=args.pa, k=k)
    else:
        spec = DesignSpec.cre(n1)
    rng = np.random.default_rng(args.seed)
    draw = draw_assignment(spec, x, rng)
    realized = mahalanobis(x, draw.z)
    lines = [
        f"# mode={args.mode}",
        f"# threshold={'inf' if math.isinf(spec.a) else format(spec.a, '.10g')}",
        f"# mahalanobis={format(realized, '.10g')}",
        f"# attempts={draw.accepted_after}",
        "index,z",
    ]
    lines += [f"{i},{int(zi)}" for i, zi in enumerate(draw.z)]
    Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


def _cmd_lambda(args) -> int:
    if args.pa is not None:
        a = threshold_from_pa(args.pa, args.k)
    else:
        a = args.a
    table = quantile_table(MixtureParams(k=args.k, a=a, alpha=args.alpha / 2.0))
    lines = ["rho,lambda"]
    lines += [f"{rho:.4f},{val:.6f}"
              for rho, val in zip(table.rho_grid, table.lambda_values)]
    Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"analyze": _cmd_analyze, "simulate": _cmd_simulate,
                "design": _cmd_design, "lambda": _cmd_lambda}
    try:
        return handlers[args.command](args)
    except AcceptanceRegionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
