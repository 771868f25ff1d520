"""Monte-Carlo harness: rate sweeps, interval coverage, double robustness,
ambient-dimension invariance and the forest/framework equivalence check.

Every job is keyed by its grid position and replication, and aggregates are
formed in key order with ``math.fsum``, so results do not depend on the
number of worker processes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from .data import ManifoldSpec, OutcomeModel, generate_dataset, sample_test_points
from .estimator import CATEEstimator
from .forest import ForestConfig, ForestError
from .smoother import (
    EmptyNeighborhoodError,
    KernelSpec,
    cate_batch,
    impute_potential_outcomes,
    impute_rf_direct,
    support_units,
)

EQUIVALENCE_TOL = 1e-12


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything an experiment needs; round-trips through JSON.

    ``seeds`` lists one base seed per replication (default ``seed + r``).
    ``h`` fixes the bandwidth outright; otherwise ``regime`` and ``c_h``
    pick it per ``n``.
    """

    manifold: ManifoldSpec = field(default_factory=ManifoldSpec)
    outcome: OutcomeModel = field(default_factory=OutcomeModel)
    n_grid: list = field(default_factory=lambda: [500, 1000, 2000, 4000, 8000])
    replications: int = 20
    seed: int = 0
    seeds: Optional[list] = None
    forest: ForestConfig = field(default_factory=ForestConfig)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    regime: str = "mse"
    c_h: float = 1.0
    h: Optional[float] = None
    test_points: int = 5
    test_seed: int = 999
    adjustment: str = "zero"
    scheme: str = "forest"
    knn_k: int = 5
    level: float = 0.95
    d_grid: list = field(default_factory=lambda: [3, 10, 30])
    workers: Optional[int] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        self.n_grid = [int(n) for n in self.n_grid]
        if not self.n_grid:
            raise ConfigError("n_grid must not be empty")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigError("n_grid must be strictly increasing")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.seeds is not None:
            self.seeds = [int(s) for s in self.seeds]
            if len(self.seeds) != self.replications:
                raise ConfigError("seeds must list exactly one seed per replication")
        if self.regime not in ("mse", "clt"):
            raise ConfigError(f"unknown bandwidth regime {self.regime!r}")
        if self.test_points < 1:
            raise ConfigError("test_points must be at least 1")
        if self.scheme not in ("forest", "knn"):
            raise ConfigError(f"unknown weight scheme {self.scheme!r}")
        if self.adjustment not in ("zero", "oracle", "fitted"):
            raise ConfigError(f"unknown adjustment {self.adjustment!r}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError("level must lie in (0, 1)")

    @property
    def m(self) -> int:
        return self.manifold.m

    def rep_seeds(self) -> list:
        return list(self.seeds) if self.seeds is not None else [self.seed + r for r in range(self.replications)]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["manifold"] = self.manifold.to_dict()
        out["outcome"] = self.outcome.to_dict()
        out["forest"] = self.forest.to_dict()
        out["kernel"] = self.kernel.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "manifold" in d:
                d["manifold"] = ManifoldSpec.from_dict(d["manifold"])
            if "outcome" in d:
                d["outcome"] = OutcomeModel.from_dict(d["outcome"])
            if "forest" in d:
                d["forest"] = ForestConfig.from_dict(d["forest"])
            if "kernel" in d:
                d["kernel"] = KernelSpec.from_dict(d["kernel"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(**d)

    def echo(self) -> dict:
        """Config as recorded in results: runtime knobs that cannot change
        the numbers (worker count, output directory) are left out."""
        out = self.to_dict()
        del out["workers"], out["out_dir"]
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)


def data_seed(rep_seed: int, n: int) -> int:
    """Seed of the dataset for one (replication, n) cell; independent of ``d``."""
    return int(np.random.SeedSequence([rep_seed, n]).generate_state(1, np.uint64)[0] >> 1)


def _estimator(config: ExperimentConfig, rep_seed: int, scheme=None, adjustment=None) -> CATEEstimator:
    return CATEEstimator(
        m=config.m,
        h=config.h,
        regime=config.regime,
        c_h=config.c_h,
        kernel=config.kernel,
        forest=replace(config.forest, seed=rep_seed),
        scheme=scheme or config.scheme,
        knn_k=config.knn_k,
        adjustment=adjustment or config.adjustment,
    )


def _run_jobs(fn, jobs, workers):
    """Map ``fn`` over ``jobs`` preserving order; processes only when it helps."""
    workers = resolve_workers(workers)
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def resolve_workers(workers: Optional[int]) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("MANIFOLD_CATE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"MANIFOLD_CATE_THREADS must be an integer, got {env!r}")
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def _estimate_cell(config: ExperimentConfig, rep_seed: int, n: int, xs, spec=None,
                   scheme=None, adjustment=None, model=None):
    """One replication at one ``n``: estimates, true effects, status and the fitted pieces."""
    spec = spec or config.manifold
    data, truth = generate_dataset(spec, model or config.outcome, n, data_seed(rep_seed, n))
    est = _estimator(config, rep_seed, scheme, adjustment)
    try:
        est.fit(data, truth)
        tau_hat = est.predict(xs)
        status = "ok"
    except ForestError as exc:
        tau_hat = np.full(xs.shape[0], np.nan)
        status = f"forest_error: {exc}"
    return tau_hat, truth.tau(xs), status, truth, est, data


# -- MSE sweep ---------------------------------------------------------------

@dataclass
class SweepResult:
    """Per-cell records and per-``n`` aggregates of a rate sweep."""

    config: dict
    records: list
    rep_mse: dict
    mean_mse: dict
    slope: Optional[float] = None
    stderr: Optional[float] = None
    n_failed: int = 0

    @classmethod
    def from_means(cls, mean_mse: dict) -> "SweepResult":
        """Aggregates only, e.g. for fitting a known power law."""
        means = {int(n): float(v) for n, v in mean_mse.items()}
        return cls(config={}, records=[], rep_mse={n: [v] for n, v in means.items()}, mean_mse=means)

    def summary(self) -> dict:
        return {
            "experiment": "sweep",
            "mean_mse": {str(n): v for n, v in sorted(self.mean_mse.items())},
            "slope": self.slope,
            "stderr": self.stderr,
            "n_failed": self.n_failed,
            "strictly_decreasing": strictly_decreasing([self.mean_mse[n] for n in sorted(self.mean_mse)]),
            "config": self.config,
        }


def strictly_decreasing(values) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def _sweep_job(args):
    config, r, rep_seed, n, xs = args
    tau_hat, tau, status, *_ = _estimate_cell(config, rep_seed, n, xs)
    return r, rep_seed, n, tau_hat, tau, status


def run_mse_sweep(config: ExperimentConfig) -> SweepResult:
    """Mean squared error at fixed test points across the ``n`` grid."""
    if config.regime != "mse" and config.h is None:
        raise ConfigError("the rate sweep needs the mse bandwidth regime (or an explicit h)")
    xs = sample_test_points(config.manifold, config.test_points, config.test_seed)
    seeds = config.rep_seeds()
    jobs = [(config, r, s, n, xs) for n in config.n_grid for r, s in enumerate(seeds)]
    records, rep_mse, n_failed = [], {n: [] for n in config.n_grid}, 0
    for r, rep_seed, n, tau_hat, tau, status in _run_jobs(_sweep_job, jobs, config.workers):
        sq = (tau_hat - tau) ** 2
        for t in range(xs.shape[0]):
            ok = status == "ok" and np.isfinite(tau_hat[t])
            records.append({
                "n": n, "rep": r, "seed": rep_seed, "test_point": t,
                "tau_true": float(tau[t]), "tau_hat": float(tau_hat[t]),
                "sq_error": float(sq[t]),
                "status": status if status != "ok" else ("ok" if ok else "empty_neighborhood"),
            })
        good = sq[np.isfinite(sq)] if status == "ok" else np.array([])
        if good.size:
            rep_mse[n].append(math.fsum(good.tolist()) / good.size)
        else:
            n_failed += 1
    mean_mse = {n: (math.fsum(v) / len(v) if v else float("nan")) for n, v in rep_mse.items()}
    result = SweepResult(config.echo(), records, rep_mse, mean_mse, n_failed=n_failed)
    if sum(1 for v in mean_mse.values() if v > 0) >= 2:
        result.slope, result.stderr = fit_rate_slope(result)
    return result


def fit_rate_slope(result) -> tuple:
    """Least-squares slope of ``log(mean MSE)`` on ``log n`` with its standard error.

    Accepts a :class:`SweepResult` or a mapping ``n -> mean MSE``.  Cells
    with non-positive or non-finite MSE are dropped with a warning.  The
    standard error is ``nan`` when only two points remain.
    """
    means = result.mean_mse if isinstance(result, SweepResult) else dict(result)
    ns, ys = [], []
    for n in sorted(means):
        v = means[n]
        if not (np.isfinite(v) and v > 0):
            warnings.warn(f"excluding n={n} from the slope fit (mean MSE {v!r})", RuntimeWarning)
            continue
        ns.append(math.log(n))
        ys.append(math.log(v))
    if len(ns) < 2:
        raise ValueError("slope fit needs at least two grid points with positive MSE")
    fit = stats.linregress(ns, ys)
    stderr = float(fit.stderr) if len(ns) > 2 else float("nan")
    return float(fit.slope), stderr


# -- coverage ----------------------------------------------------------------

@dataclass
class CoverageResult:
    config: dict
    level: float
    records: list
    coverage: list
    mean_width: list
    n_valid: list
    n_failed: list

    def summary(self) -> dict:
        return {
            "experiment": "coverage",
            "level": self.level,
            "coverage": self.coverage,
            "mean_width": self.mean_width,
            "n_valid": self.n_valid,
            "n_failed": self.n_failed,
            "min_coverage": min(self.coverage) if self.coverage else None,
            "config": self.config,
        }


def _coverage_job(args):
    config, r, rep_seed, n, xs = args
    tau_hat, tau, status, truth, est, data = _estimate_cell(config, rep_seed, n, xs)
    out = []
    cis = est.intervals(xs, tau_hat, level=config.level) if status == "ok" else [None] * xs.shape[0]
    for t, ci in enumerate(cis):
        if ci is None:
            out.append((t, float(tau[t]), float(tau_hat[t]), None, None, False))
        else:
            out.append((t, float(tau[t]), ci.center, ci.lower, ci.upper, ci.covers(float(tau[t]))))
    return r, rep_seed, out


def coverage_fraction(covered) -> float:
    covered = list(covered)
    return sum(1 for c in covered if c) / len(covered) if covered else float("nan")


def run_coverage(config: ExperimentConfig) -> CoverageResult:
    """Empirical coverage of the plug-in intervals at the fixed test points.

    Uses the largest ``n`` of the grid.  Replications whose interval could
    not be formed are excluded from the fraction and counted in ``n_failed``.
    """
    if config.regime != "clt" and config.h is None:
        raise ConfigError("coverage needs the clt bandwidth regime (or an explicit h)")
    n = config.n_grid[-1]
    xs = sample_test_points(config.manifold, config.test_points, config.test_seed)
    seeds = config.rep_seeds()
    jobs = [(config, r, s, n, xs) for r, s in enumerate(seeds)]
    T = xs.shape[0]
    covered = [[] for _ in range(T)]
    widths = [[] for _ in range(T)]
    failed = [0] * T
    records = []
    for r, rep_seed, rows in _run_jobs(_coverage_job, jobs, config.workers):
        for t, tau, center, lo, hi, cov in rows:
            records.append({"rep": r, "seed": rep_seed, "test_point": t, "tau_true": tau,
                            "tau_hat": center, "lower": lo, "upper": hi,
                            "covered": int(cov) if lo is not None else ""})
            if lo is None:
                failed[t] += 1
            else:
                covered[t].append(cov)
                widths[t].append(hi - lo)
    return CoverageResult(
        config=config.echo(),
        level=config.level,
        records=records,
        coverage=[coverage_fraction(c) for c in covered],
        mean_width=[math.fsum(w) / len(w) if w else float("nan") for w in widths],
        n_valid=[len(c) for c in covered],
        n_failed=failed,
    )


# -- double robustness -------------------------------------------------------

REGIMES = {
    "I": ("forest", "zero"),
    "II": ("knn", "oracle"),
}


@dataclass
class DoubleRobustnessResult:
    """Max-abs test-point error per (regime, n, replication).

    ``smoothed`` errors are measured against the kernel average of the true
    effect over the sample, which isolates the imputation step from the
    smoothing bias.
    """

    config: dict
    records: list
    max_error: dict
    max_error_smoothed: dict
    decreasing_fraction: dict

    def summary(self) -> dict:
        return {
            "experiment": "dr-check",
            "decreasing_fraction": self.decreasing_fraction,
            "mean_max_error": {
                reg: {str(n): math.fsum(v) / len(v) for n, v in sorted(per.items())}
                for reg, per in self.max_error.items()
            },
            "worst_smoothed_error": {
                reg: max(max(v) for v in per.values()) for reg, per in self.max_error_smoothed.items()
            },
            "config": self.config,
        }


def smoothed_truth(data, truth, spec: KernelSpec, h: float, xs) -> np.ndarray:
    """Kernel average of the true effect over the sample around each test point."""
    tau_i = truth.tau(data.X)
    out = np.empty(len(xs))
    for t, x in enumerate(xs):
        k = spec.K_h(h, data.X, x)
        out[t] = np.sum(k * tau_i) / np.sum(k) if np.sum(k) > 0 else np.nan
    return out


def _dr_job(args):
    config, regime, model, r, rep_seed, n, xs = args
    scheme, adjustment = REGIMES[regime.split("-")[0]]
    tau_hat, tau, status, truth, est, data = _estimate_cell(
        config, rep_seed, n, xs, scheme=scheme, adjustment=adjustment, model=model)
    if status != "ok":
        return regime, r, rep_seed, n, float("nan"), float("nan")
    bar = smoothed_truth(data, truth, est.kernel, est.h_, xs)
    return (regime, r, rep_seed, n, float(np.max(np.abs(tau_hat - tau))),
            float(np.max(np.abs(tau_hat - bar))))


def run_double_robustness(config: ExperimentConfig) -> DoubleRobustnessResult:
    """Regime I (forest, zero adjustment) and II (kNN, oracle adjustment),
    plus regime II repeated without noise, on a shared grid and seeds."""
    xs = sample_test_points(config.manifold, config.test_points, config.test_seed)
    seeds = config.rep_seeds()
    quiet = replace(config.outcome, noise_scale=0.0)
    plan = [("I", config.outcome), ("II", config.outcome), ("II-noiseless", quiet)]
    jobs = [(config, reg, model, r, s, n, xs)
            for reg, model in plan for n in config.n_grid for r, s in enumerate(seeds)]
    max_error = {reg: {n: [] for n in config.n_grid} for reg, _ in plan}
    smoothed = {reg: {n: [] for n in config.n_grid} for reg, _ in plan}
    records = []
    for regime, r, rep_seed, n, err, err_bar in _run_jobs(_dr_job, jobs, config.workers):
        records.append({"regime": regime, "n": n, "rep": r, "seed": rep_seed,
                        "max_abs_error": err, "max_abs_error_smoothed": err_bar})
        max_error[regime][n].append(err)
        smoothed[regime][n].append(err_bar)
    first, last = config.n_grid[0], config.n_grid[-1]
    frac = {}
    for reg, _ in plan:
        pairs = list(zip(max_error[reg][first], max_error[reg][last]))
        frac[reg] = sum(1 for a, b in pairs if b < a) / len(pairs)
    return DoubleRobustnessResult(config.echo(), records, max_error, smoothed, frac)


# -- ambient invariance ------------------------------------------------------

@dataclass
class AmbientResult:
    config: dict
    n: int
    records: list
    mean_mse: dict
    intrinsic_identical: bool

    @property
    def ratio(self) -> float:
        vals = list(self.mean_mse.values())
        return max(vals) / min(vals)

    def summary(self) -> dict:
        return {
            "experiment": "ambient",
            "n": self.n,
            "mean_mse": {str(d): v for d, v in sorted(self.mean_mse.items())},
            "max_min_ratio": self.ratio,
            "intrinsic_identical": self.intrinsic_identical,
            "config": self.config,
        }


def _ambient_job(args):
    config, d, r, rep_seed, n = args
    spec = replace(config.manifold, d=d)
    xs = sample_test_points(spec, config.test_points, config.test_seed)
    tau_hat, tau, status, truth, *_ = _estimate_cell(config, rep_seed, n, xs, spec=spec)
    digest = hashlib.sha256(np.ascontiguousarray(truth.canonical).tobytes()).hexdigest()
    sq = (tau_hat - tau) ** 2
    good = sq[np.isfinite(sq)]
    mse = math.fsum(good.tolist()) / good.size if status == "ok" and good.size else float("nan")
    return d, r, rep_seed, mse, digest


def run_ambient_invariance(config: ExperimentConfig) -> AmbientResult:
    """Mean MSE at the first grid ``n`` as the same intrinsic sample is
    re-embedded in each ambient dimension of ``d_grid``."""
    if config.manifold.kind not in ("circle", "flat_subspace"):
        raise ConfigError("ambient invariance needs a circle or flat_subspace manifold")
    n = config.n_grid[0]
    seeds = config.rep_seeds()
    jobs = [(config, d, r, s, n) for d in config.d_grid for r, s in enumerate(seeds)]
    per_d = {d: [] for d in config.d_grid}
    digests = {}
    records = []
    for d, r, rep_seed, mse, digest in _run_jobs(_ambient_job, jobs, config.workers):
        records.append({"d": d, "rep": r, "seed": rep_seed, "mse": mse})
        if np.isfinite(mse):
            per_d[d].append(mse)
        digests.setdefault(r, set()).add(digest)
    mean_mse = {d: (math.fsum(v) / len(v) if v else float("nan")) for d, v in per_d.items()}
    same = all(len(s) == 1 for s in digests.values())
    return AmbientResult(config.echo(), n, records, mean_mse, same)


# -- scheme equivalence ------------------------------------------------------

@dataclass
class EquivalenceResult:
    max_abs_diff: float
    tol: float
    n_test: int
    perturbation: float

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_diff <= self.tol)

    def summary(self) -> dict:
        return {"experiment": "equivalence", "passed": self.passed, "max_abs_diff": self.max_abs_diff,
                "tol": self.tol, "n_test": self.n_test, "perturbation": self.perturbation}


def run_scheme_equivalence(config: ExperimentConfig, perturb: float = 0.0,
                           tol: float = EQUIVALENCE_TOL) -> EquivalenceResult:
    """Compare the weight-matrix path with literal tree-by-tree leaf averages.

    Both paths share the same forests.  ``perturb`` adds that amount to one
    weight of the matrix path (at the unit with the largest kernel weight at
    the first test point), which must then be detected.
    """
    n = config.n_grid[0]
    rep_seed = config.rep_seeds()[0]
    xs = sample_test_points(config.manifold, config.test_points, config.test_seed)
    data, truth = generate_dataset(config.manifold, config.outcome, n, data_seed(rep_seed, n))
    est = _estimator(config, rep_seed, scheme="forest").fit(data, truth)
    h = est.h_
    units = support_units(data, est.kernel, h, xs)
    if units.size == 0:
        raise EmptyNeighborhoodError("no unit falls inside the kernel support of the test points")
    rows = est.scheme_.rows(data, units)
    if perturb:
        k0 = est.kernel.K_h(h, data.X, xs[0])
        target = int(units[np.argmax(k0[units])])
        r = int(np.flatnonzero(rows.units == target)[0])
        mat = rows.matrix.tolil()
        j = mat.rows[r][0]
        mat[r, j] = mat[r, j] + perturb
        rows = replace(rows, matrix=mat.tocsr())
    via_matrix = impute_potential_outcomes(data, est.scheme_, est.adj_, units, rows=rows)
    f0, f1 = est.scheme_.forests[0], est.scheme_.forests[1]
    direct = impute_rf_direct(data, f0, f1, est.adj_, units)
    a = cate_batch(data, via_matrix, est.kernel, h, xs)
    b = cate_batch(data, direct, est.kernel, h, xs)
    # empty neighborhoods are NaN on both paths; any other NaN is a mismatch
    na, nb = np.isnan(a), np.isnan(b)
    if np.any(na != nb):
        diff = float("inf")
    else:
        diff = float(np.max(np.abs(a[~na] - b[~nb]))) if np.any(~na) else 0.0
    return EquivalenceResult(diff, tol, xs.shape[0], perturb)


# -- outputs -----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_csv(path: Path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def _write_pairs(path: Path, header, pairs):
    _write_csv(path, [dict(zip(header, p)) for p in pairs], header)


def json_safe(obj):
    """Replace non-finite floats by ``None`` so payloads stay strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj


def _write_json(path: Path, payload):
    with open(path, "w") as fh:
        json.dump(json_safe(payload), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_outputs(result, out_dir) -> list:
    """Write records, summary JSON and plot-data files; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    def emit(name, fn, *args):
        p = out / name
        fn(p, *args)
        paths.append(p)

    if isinstance(result, SweepResult):
        emit("records.csv", _write_csv, result.records,
             ["n", "rep", "seed", "test_point", "tau_true", "tau_hat", "sq_error", "status"])
        emit("mean_mse.csv", _write_pairs, ["n", "mean_mse"], sorted(result.mean_mse.items()))
        emit("summary.json", _write_json, result.summary())
    elif isinstance(result, CoverageResult):
        emit("records.csv", _write_csv, result.records,
             ["rep", "seed", "test_point", "tau_true", "tau_hat", "lower", "upper", "covered"])
        rows = [{"test_point": t, "coverage": c, "mean_width": w, "n_valid": v, "n_failed": f}
                for t, (c, w, v, f) in enumerate(zip(result.coverage, result.mean_width,
                                                     result.n_valid, result.n_failed))]
        emit("coverage.csv", _write_csv, rows, ["test_point", "coverage", "mean_width", "n_valid", "n_failed"])
        emit("coverage_plot.csv", _write_pairs, ["test_point", "coverage"], list(enumerate(result.coverage)))
        emit("summary.json", _write_json, result.summary())
    elif isinstance(result, DoubleRobustnessResult):
        emit("records.csv", _write_csv, result.records,
             ["regime", "n", "rep", "seed", "max_abs_error", "max_abs_error_smoothed"])
        for reg, per in result.max_error.items():
            pairs = [(n, math.fsum(v) / len(v)) for n, v in sorted(per.items())]
            emit(f"regime_{reg}_plot.csv", _write_pairs, ["n", "mean_max_abs_error"], pairs)
        emit("summary.json", _write_json, result.summary())
    elif isinstance(result, AmbientResult):
        emit("records.csv", _write_csv, result.records, ["d", "rep", "seed", "mse"])
        emit("ambient_plot.csv", _write_pairs, ["d", "mean_mse"], sorted(result.mean_mse.items()))
        emit("summary.json", _write_json, result.summary())
    elif isinstance(result, EquivalenceResult):
        emit("summary.json", _write_json, result.summary())
    else:
        raise TypeError(f"no writer for {type(result).__name__}")
    return paths
