"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 estimation or runtime failure,
3 acceptance gate failed (``sweep --assert-slope``).  Machine-readable
payloads go to stdout as single-line JSON; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .data import (
    DatasetFormatError,
    generate_dataset,
    load_dataset_csv,
    save_dataset_csv,
)
from .estimator import CATEEstimator
from .experiments import (
    ConfigError,
    ExperimentConfig,
    fit_rate_slope,
    json_safe,
    resolve_workers,
    run_ambient_invariance,
    run_coverage,
    run_double_robustness,
    run_mse_sweep,
    run_scheme_equivalence,
    write_outputs,
)
from .forest import ForestConfig, ForestError
from .smoother import EmptyNeighborhoodError, KernelSpec

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_GATE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(flag):
    def conv(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} must be an integer, got {text!r}")
        if v < 1:
            raise argparse.ArgumentTypeError(f"{flag} must be at least 1, got {v}")
        return v
    return conv


def _positive_float(flag):
    def conv(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} must be a number, got {text!r}")
        if not (v > 0 and math.isfinite(v)):
            raise argparse.ArgumentTypeError(f"{flag} must be positive and finite, got {text}")
        return v
    return conv


def _level(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--ci must be a number, got {text!r}")
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"--ci must lie strictly between 0 and 1, got {text}")
    return v


def _point(text):
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--x must be comma-separated numbers, got {text!r}")
    return np.array(vals)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="manifold-cate", description="Kernel-smoothed forest CATE estimation on manifold data.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="draw a synthetic dataset to CSV")
    g.add_argument("--config", required=True, help="experiment config JSON (manifold, outcome)")
    g.add_argument("--out", required=True, help="output CSV path")
    g.add_argument("--n", type=_positive_int("--n"), help="sample size (default: last n of the grid)")
    g.add_argument("--seed", type=int, help="data seed (default: config seed)")

    e = sub.add_parser("estimate", help="estimate the CATE at one point")
    e.add_argument("--data", required=True, help="dataset CSV (x1..xd,d,y)")
    e.add_argument("--m", required=True, type=_positive_int("--m"), help="intrinsic dimension")
    e.add_argument("--x", required=True, type=_point, help="query point, comma-separated")
    e.add_argument("--h", type=_positive_float("--h"), help="bandwidth (default from the regime)")
    e.add_argument("--ci", type=_level, help="also report a confidence interval at this level")
    e.add_argument("--kernel", choices=["box", "truncated_gaussian"], default="box")
    e.add_argument("--honesty", choices=["extremely_honest", "honest"], default="extremely_honest")
    e.add_argument("--trees", type=_positive_int("--trees"), help="trees per arm")
    e.add_argument("--c-leaf", type=_positive_float("--c-leaf"), default=1.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--threads", type=_positive_int("--threads"))

    for name, helptext in [("sweep", "MSE rate sweep"), ("coverage", "confidence interval coverage"),
                           ("dr-check", "double robustness regimes"),
                           ("ambient", "ambient-dimension invariance"),
                           ("equivalence", "forest vs weight-matrix equivalence")]:
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="experiment config JSON")
        s.add_argument("--out-dir", help="directory for result files (default: config out_dir)")
        s.add_argument("--threads", type=_positive_int("--threads"), help="worker processes")
        if name == "sweep":
            s.add_argument("--assert-slope", nargs=2, type=float, metavar=("LO", "HI"),
                           help="exit 3 unless the fitted slope lies in [LO, HI]")
        if name == "equivalence":
            s.add_argument("--perturb", type=float, default=0.0,
                           help="add this to one weight of the matrix path (mutation check)")

    sub.add_parser("version", help="print the package version")
    return p


def _emit(payload):
    sys.stdout.write(json.dumps(json_safe(payload), sort_keys=True, allow_nan=False) + "\n")


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config)
    threads = getattr(args, "threads", None)
    if threads is not None:
        config = replace(config, workers=threads)
    return config


def _cmd_generate(args):
    config = _load_config(args)
    n = args.n or config.n_grid[-1]
    seed = config.seed if args.seed is None else args.seed
    data, _ = generate_dataset(config.manifold, config.outcome, n, seed)
    save_dataset_csv(data, args.out)
    _emit({"out": args.out, "n": data.n, "d": data.d, "treated": int(data.D.sum())})
    return EXIT_OK


def _cmd_estimate(args):
    data = load_dataset_csv(args.data)
    x = args.x
    if x.size != data.d:
        raise UsageError(f"--x has {x.size} coordinates but the data has d={data.d}")
    if args.m > data.d:
        raise UsageError(f"--m={args.m} exceeds the ambient dimension d={data.d}")
    if data.arm(0).size == 0 or data.arm(1).size == 0:
        raise EmptyNeighborhoodError("both treatment arms must be present in the data")
    regime = "clt" if args.ci is not None else "mse"
    est = CATEEstimator(
        m=args.m, h=args.h, regime=regime, kernel=KernelSpec(args.kernel),
        forest=ForestConfig(B=args.trees, c_leaf=args.c_leaf, honesty=args.honesty, seed=args.seed),
        n_jobs=resolve_workers(args.threads),
    ).fit(data)
    tau = est.predict(x[None, :])[0]
    if not np.isfinite(tau):
        raise EmptyNeighborhoodError(f"no observation within the kernel support at x (h={est.h_:.4g})")
    out = {"tau_hat": float(tau), "h": est.h_, "n": data.n, "m": args.m}
    if args.ci is not None:
        ci = est.intervals(x[None, :], [tau], level=args.ci)[0]
        if ci is None:
            raise EmptyNeighborhoodError("nuisance estimates unavailable at x")
        out.update({"level": args.ci, "lower": ci.lower, "upper": ci.upper})
    _emit(out)
    return EXIT_OK


def _out_dir(args, config):
    out = args.out_dir or config.out_dir
    if not out:
        raise UsageError("--out-dir is required when the config sets no out_dir")
    return out


def _cmd_experiment(args):
    config = _load_config(args)
    out = _out_dir(args, config)
    runner = {
        "sweep": run_mse_sweep,
        "coverage": run_coverage,
        "dr-check": run_double_robustness,
        "ambient": run_ambient_invariance,
    }.get(args.command)
    if args.command == "equivalence":
        result = run_scheme_equivalence(config, perturb=args.perturb)
    else:
        result = runner(config)
    paths = write_outputs(result, out)
    summary = result.summary()
    summary.pop("config", None)
    summary["files"] = [str(p) for p in paths]
    _emit(summary)
    if args.command == "sweep" and args.assert_slope is not None:
        lo, hi = args.assert_slope
        slope = result.slope if result.slope is not None else fit_rate_slope(result)[0]
        if not lo <= slope <= hi:
            print(f"slope {slope:.4f} outside [{lo}, {hi}]", file=sys.stderr)
            return EXIT_GATE
    if args.command == "equivalence" and not result.passed:
        print(f"equivalence failed: max abs difference {result.max_abs_diff:.3e}", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "version":
            _emit({"version": __version__})
            return EXIT_OK
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "estimate":
            return _cmd_estimate(args)
        return _cmd_experiment(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DatasetFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EmptyNeighborhoodError, ForestError, ValueError, MemoryError) as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
