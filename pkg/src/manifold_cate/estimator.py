"""End-to-end CATE estimation: forests, imputation, smoothing and intervals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, GeneratedTruth
from .forest import ForestConfig, build_forest
from .inference import (
    confidence_interval,
    estimate_nuisance,
    kernel_constants,
    sigma_hat,
)
from .smoother import (
    EmptyNeighborhoodError,
    ForestScheme,
    KernelSpec,
    KnnScheme,
    cate_batch,
    default_bandwidth,
    impute_potential_outcomes,
    make_adjustment,
    support_units,
)


@dataclass
class CATEEstimator:
    """Kernel-smoothed CATE with forest (or kNN) imputation.

    Only units inside the kernel support of the query points are imputed,
    which is all the smoothed estimate needs.
    """

    m: int
    h: Optional[float] = None
    regime: str = "mse"
    c_h: float = 1.0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    forest: ForestConfig = field(default_factory=ForestConfig)
    scheme: str = "forest"
    knn_k: int = 5
    adjustment: str = "zero"
    h_mu: Optional[float] = None
    n_jobs: int = 1

    def fit(self, data: Dataset, truth: Optional[GeneratedTruth] = None) -> "CATEEstimator":
        self.data_ = data
        self.h_ = self.h if self.h is not None else default_bandwidth(data.n, self.m, self.regime, self.c_h)
        h_mu = self.h_mu if self.h_mu is not None else data.n ** (-1.0 / (self.m + 2))
        self.adj_ = make_adjustment(self.adjustment, data, truth, self.kernel, h_mu)
        if self.scheme == "forest":
            f0 = build_forest(data, 0, self.forest, self.h_, m=self.m)
            f1 = build_forest(data, 1, self.forest, self.h_, m=self.m)
            self.scheme_ = ForestScheme(f0, f1, n_jobs=self.n_jobs)
        elif self.scheme == "knn":
            self.scheme_ = KnnScheme(self.knn_k)
        else:
            raise ValueError(f"unknown weight scheme {self.scheme!r}")
        return self

    def predict(self, xs) -> np.ndarray:
        """Estimates at each row of ``xs``; ``NaN`` where the neighborhood is empty."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        units = support_units(self.data_, self.kernel, self.h_, xs)
        self.imputed_ = impute_potential_outcomes(self.data_, self.scheme_, self.adj_, units)
        return cate_batch(self.data_, self.imputed_, self.kernel, self.h_, xs)

    def intervals(self, xs, tau_hat, level: float = 0.95, h_nuis: Optional[float] = None,
                  nuisance_adj=None) -> list:
        """Normal intervals from the plug-in variance; ``None`` where estimation failed.

        Nuisances use ``h_nuis`` (default: MSE-regime bandwidth) and a fitted
        kernel regression for the residuals unless ``nuisance_adj`` is given.
        """
        data = self.data_
        h_nuis = h_nuis if h_nuis is not None else default_bandwidth(data.n, self.m, "mse", self.c_h)
        adj = nuisance_adj if nuisance_adj is not None else make_adjustment(
            "fitted", data, spec=self.kernel, h_mu=h_nuis)
        consts = kernel_constants(self.kernel, self.m)
        out = []
        for x, t in zip(np.atleast_2d(xs), np.atleast_1d(tau_hat)):
            if not np.isfinite(t):
                out.append(None)
                continue
            try:
                nu = estimate_nuisance(data, self.kernel, x, self.m, h_nuis, adj)
            except EmptyNeighborhoodError:
                out.append(None)
                continue
            out.append(confidence_interval(t, sigma_hat(nu, consts), data.n, self.h_, self.m, level))
        return out
