"""Randomized pipeline configurations and the invariants checked on each.

Every ``check_*`` returns the largest deviation it saw, so callers can
compare against their own tolerance and report the margin.
"""

from dataclasses import dataclass

import numpy as np

from manifold_cate.data import ManifoldSpec, OutcomeModel, generate_dataset
from manifold_cate.estimator import CATEEstimator
from manifold_cate.experiments import ExperimentConfig, run_scheme_equivalence
from manifold_cate.forest import ForestConfig
from manifold_cate.smoother import (
    ForestScheme,
    KernelSpec,
    cate_batch,
    impute_potential_outcomes,
    make_adjustment,
)

ROW_TOL = 1e-12
VALUE_TOL = 1e-10


@dataclass
class Case:
    seed: int
    spec: ManifoldSpec
    model: OutcomeModel
    n: int
    h: float
    kernel: KernelSpec
    forest: ForestConfig
    adjustment: str

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig(manifold=self.spec, outcome=self.model, n_grid=[self.n], replications=1,
                                seed=self.seed, forest=self.forest, kernel=self.kernel, h=self.h,
                                adjustment=self.adjustment, test_points=3, workers=1)


def random_case(seed: int) -> Case:
    rng = np.random.default_rng(seed)
    kind = ["circle", "sphere2", "flat_subspace"][int(rng.integers(3))]
    d = int(rng.integers(3, 9))
    m = int(rng.integers(1, min(d, 3) + 1)) if kind == "flat_subspace" else None
    spec = ManifoldSpec(kind, d=d, m=m, embedding_seed=int(rng.integers(1000)))
    model = OutcomeModel(noise_kind=["uniform_bounded", "truncated_gaussian"][int(rng.integers(2))],
                         coef_seed=int(rng.integers(1000)))
    forest = ForestConfig(B=int(rng.integers(2, 9)),
                          honesty=["extremely_honest", "honest"][int(rng.integers(2))],
                          c_leaf=float(rng.uniform(0.5, 3.0)), seed=int(rng.integers(1 << 20)),
                          min_leaf=int(rng.integers(1, 3)))
    return Case(
        seed=seed, spec=spec, model=model, n=int(rng.integers(40, 161)),
        h=float(rng.uniform(0.05, 0.6)),
        kernel=KernelSpec(["box", "truncated_gaussian"][int(rng.integers(2))]),
        forest=forest, adjustment=["zero", "oracle", "fitted"][int(rng.integers(3))],
    )


def fitted(case: Case):
    data, truth = generate_dataset(case.spec, case.model, case.n, case.seed)
    est = CATEEstimator(m=case.spec.m, h=case.h, kernel=case.kernel, forest=case.forest,
                        adjustment=case.adjustment).fit(data, truth)
    return data, truth, est


def _adjustment(case, data, truth):
    return make_adjustment(case.adjustment, data, truth, case.kernel, data.n ** (-1.0 / (case.spec.m + 2)))


def _tau(data, scheme, adj, case, xs):
    imp = impute_potential_outcomes(data, scheme, adj)
    return imp, cate_batch(data, imp, case.kernel, case.h, xs)


class SwappedAdjustment:
    """Arm labels of a regression adjustment exchanged."""

    def __init__(self, inner):
        self.inner = inner
        self.kind = inner.kind

    def predict(self, arm, X):
        return self.inner.predict(1 - arm, X)


def check_row_normalization(case: Case) -> float:
    data, _, est = fitted(case)
    rows = est.scheme_.rows(data, np.arange(data.n))
    W = rows.matrix.toarray()
    if np.any(W < 0):
        return float("inf")
    # weights land on the opposite arm only
    same_arm = data.D[:, None] == data.D[None, :]
    if np.any(W[same_arm] != 0):
        return float("inf")
    return float(np.max(np.abs(W.sum(axis=1) - 1.0)))


def check_shift_invariance(case: Case) -> float:
    data, truth, est = fitted(case)
    xs = data.X[:3]
    _, base = _tau(data, est.scheme_, est.adj_, case, xs)
    c = float(np.random.default_rng(case.seed + 1).uniform(-5, 5))
    moved = data.shifted(c)
    _, shifted = _tau(moved, est.scheme_, _adjustment(case, moved, truth), case, xs)
    return float(np.max(np.abs(shifted - base)))


def check_swap_antisymmetry(case: Case) -> float:
    data, _, est = fitted(case)
    xs = data.X[:3]
    _, base = _tau(data, est.scheme_, est.adj_, case, xs)
    _, flipped = _tau(data.swapped(), est.scheme_.swapped(), SwappedAdjustment(est.adj_), case, xs)
    return float(np.max(np.abs(flipped + base)))


def check_permutation_equivariance(case: Case) -> float:
    data, truth, est = fitted(case)
    xs = data.X[:3]
    imp, base = _tau(data, est.scheme_, est.adj_, case, xs)
    perm = np.random.default_rng(case.seed + 2).permutation(data.n)
    pdata = data.permuted(perm)
    f0, f1 = est.scheme_.forests[0], est.scheme_.forests[1]
    scheme = ForestScheme(f0.permuted(perm, pdata.X), f1.permuted(perm, pdata.X))
    pimp, moved = _tau(pdata, scheme, _adjustment(case, pdata, truth), case, xs)
    dev_units = max(np.max(np.abs(pimp.Y0[perm] - imp.Y0)), np.max(np.abs(pimp.Y1[perm] - imp.Y1)))
    return float(max(dev_units, np.max(np.abs(moved - base))))


def check_scheme_equivalence(case: Case) -> float:
    res = run_scheme_equivalence(case.experiment_config())
    return res.max_abs_diff if res.passed else float("inf")


CHECKS = {
    "row normalization": (check_row_normalization, ROW_TOL),
    "outcome-shift invariance": (check_shift_invariance, VALUE_TOL),
    "treatment-swap antisymmetry": (check_swap_antisymmetry, VALUE_TOL),
    "permutation equivariance": (check_permutation_equivariance, VALUE_TOL),
    "scheme equivalence": (check_scheme_equivalence, 1e-12),
}
