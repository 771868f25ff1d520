"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``[PASS]``/``[FAIL]`` line with the measured numbers
before asserting, so ``pytest -v`` doubles as the acceptance report.
Experiments 1 to 4 read their configs from ``configs/``.
"""

import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from instances import oracle_inputs, package_cate, random_instance
from invariants import CHECKS, random_case
from oracle import box_profile, forest_cate, gauss_profile

from manifold_cate.data import ManifoldSpec, OutcomeModel, generate_dataset, sample_test_points
from manifold_cate.experiments import (
    ExperimentConfig,
    run_ambient_invariance,
    run_coverage,
    run_double_robustness,
    run_mse_sweep,
    strictly_decreasing,
)
from manifold_cate.inference import (
    NuisanceEstimates,
    estimate_nuisance,
    kernel_constants,
    sigma_closed_form,
    sigma_hat,
)
from manifold_cate.smoother import KernelSpec, default_bandwidth, make_adjustment

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def load(name, **overrides):
    return replace(ExperimentConfig.load(CONFIGS / name), **overrides)


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} {title}: {detail}")
        return ok
    return emit


def test_criterion_1_manifold_rate(report):
    cfg = load("sweep_circle_d10.json")
    assert cfg.n_grid == [500, 1000, 2000, 4000, 8000] and cfg.replications == 20 and cfg.test_points == 5
    res = run_mse_sweep(cfg)
    target = -2 / 3
    means = [res.mean_mse[n] for n in cfg.n_grid]
    ok = (res.slope is not None and abs(res.slope - target) <= 0.35
          and strictly_decreasing(means) and res.n_failed == 0)
    detail = (f"slope={res.slope:.4f} (window [{target - 0.35:.3f}, {target + 0.35:.3f}]), "
              f"mean MSE {['%.3e' % v for v in means]}, failed cells={res.n_failed}")
    assert report(1, "manifold-rate adaptation", ok, detail)


def test_criterion_2_ambient_invariance(report):
    cfg = load("ambient_circle.json")
    assert cfg.d_grid == [3, 10, 30] and cfg.n_grid[0] == 2000
    res = run_ambient_invariance(cfg)
    finite = all(np.isfinite(v) and v > 0 for v in res.mean_mse.values())
    ok = finite and res.intrinsic_identical and res.ratio < 2.0
    detail = (f"max/min MSE ratio={res.ratio:.4f} (< 2), MSE by d "
              f"{ {d: float('%.3e' % v) for d, v in res.mean_mse.items()} }, "
              f"intrinsic sample identical={res.intrinsic_identical}")
    assert report(2, "ambient invariance", ok, detail)


def test_criterion_3_clt_coverage(report):
    cfg = load("coverage_circle.json")
    assert (cfg.m, cfg.n_grid[-1], cfg.replications, cfg.level, cfg.regime, cfg.c_h) == \
        (1, 4000, 200, 0.95, "clt", 1.0)
    # clt regime with m = 1 gives h = 1 / n
    assert default_bandwidth(4000, 1, "clt") == pytest.approx(1 / 4000, rel=1e-12)
    res = run_coverage(cfg)
    ok = all(0.88 <= c <= 0.99 for c in res.coverage) and sum(res.n_failed) == 0
    detail = f"coverage per test point {res.coverage} (window [0.88, 0.99]), failed={res.n_failed}"
    assert report(3, "CLT coverage", ok, detail)


def test_criterion_4_double_robustness(report):
    cfg = load("dr_check.json")
    assert cfg.n_grid == [500, 8000] and cfg.replications == 10
    res = run_double_robustness(cfg)
    frac_ok = res.decreasing_fraction["I"] >= 0.8 and res.decreasing_fraction["II"] >= 0.8
    # noiseless oracle adjustment makes every imputed difference exact, so the
    # estimate equals the kernel average of the true effect over the sample
    exact_smoothed = max(max(v) for v in res.max_error_smoothed["II-noiseless"].values())
    pointwise = max(max(v) for v in res.max_error["II-noiseless"].values())
    # with a constant effect that average is the effect itself
    flat = replace(cfg, outcome=OutcomeModel(mu_kind="constant", mu0_value=-0.5, mu1_value=2.0))
    flat_err = max(max(v) for v in run_double_robustness(flat).max_error["II-noiseless"].values())
    ok = frac_ok and exact_smoothed <= 1e-10 and flat_err <= 1e-10
    detail = (f"decreasing fraction I={res.decreasing_fraction['I']:.2f} II={res.decreasing_fraction['II']:.2f} "
              f"(>= 0.8); noiseless II error vs smoothed effect={exact_smoothed:.2e}, "
              f"vs tau(x) with constant effect={flat_err:.2e} (<= 1e-10); "
              f"vs tau(x) with varying effect={pointwise:.2e} (smoothing bias, not gated)")
    assert report(4, "double robustness", ok, detail)


def test_criterion_5_brute_force_oracle(report):
    profiles = {"box": box_profile, "truncated_gaussian": gauss_profile}
    worst, used, seed = 0.0, 0, 0
    while used < 10:
        inst = random_instance(seed)
        seed += 1
        assert inst["X"].shape[0] <= 8 and max(len(s[1]) for s in inst["forests"].values()) <= 3
        X, D, Y, forests, box = oracle_inputs(inst)
        try:
            want = forest_cate(X, D, Y, inst["x"].tolist(), inst["h"], profiles[inst["profile"]],
                               forests, box, inst["adj"])
        except ZeroDivisionError:
            continue
        worst = max(worst, abs(package_cate(inst) - want))
        used += 1
    ok = worst <= 1e-12
    detail = f"{used} instances (n <= 8, B <= 3), max |pipeline - brute force|={worst:.2e} (<= 1e-12)"
    assert report(5, "small-instance oracle equivalence", ok, detail)


def test_criterion_6_invariant_suite(report):
    worst = {name: 0.0 for name in CHECKS}
    failures = []
    for seed in range(50):
        case = random_case(seed)
        for name, (check, tol) in CHECKS.items():
            dev = check(case)
            worst[name] = max(worst[name], dev)
            if not dev <= tol:
                failures.append((seed, name, dev))
    ok = not failures
    detail = "50 configs; worst deviation " + ", ".join(
        f"{name}={v:.1e}" for name, v in worst.items()) + (f"; failures {failures[:5]}" if failures else "")
    assert report(6, "invariant suite", ok, detail)


def test_criterion_7_variance_plugin(report):
    spec = ManifoldSpec("circle", density="uniform")
    model = OutcomeModel(propensity_kind="constant", propensity_value=0.5, noise_kind="uniform_bounded")
    n = 100_000
    data, truth = generate_dataset(spec, model, n, 7)
    xs = sample_test_points(spec, 5, 999)
    kernel = KernelSpec()
    consts = kernel_constants(kernel, 1)
    h = default_bandwidth(n, 1, "mse")
    adj = make_adjustment("fitted", data, spec=kernel, h_mu=h)
    rel = []
    for x in xs:
        est = sigma_hat(estimate_nuisance(data, kernel, x, 1, h, adj), consts)
        f, s0, s1 = truth.f(x[None])[0], truth.sigma0_sq(x[None])[0], truth.sigma1_sq(x[None])[0]
        rel.append(est / sigma_closed_form(f, 0.5, s0, s1, consts) - 1)
    rng = np.random.default_rng(2024)
    ident = 0.0
    for _ in range(20):
        m = int(rng.integers(1, 5))
        k = kernel_constants(KernelSpec(["box", "truncated_gaussian"][int(rng.integers(2))]), m)
        f, e = rng.uniform(0.05, 3.0), rng.uniform(0.05, 0.95)
        s0, s1 = rng.uniform(0.01, 2.0, 2)
        direct = sigma_closed_form(f, e, s0, s1, k)
        via = sigma_hat(NuisanceEstimates(k[0] * f, e, s0, s1), k)
        ident = max(ident, abs(via - direct) / max(1.0, abs(direct)))
    ok = max(abs(r) for r in rel) <= 0.35 and ident <= 1e-12 and all(math.isfinite(r) for r in rel)
    detail = (f"Sigma_hat/Sigma - 1 at 5 points {[round(float(r), 4) for r in rel]} (|.| <= 0.35); "
              f"rearrangement identity max deviation={ident:.1e} (<= 1e-12)")
    assert report(7, "variance plug-in sanity", ok, detail)
