"""Kernel-smoothed causal-forest CATE estimation for covariates on manifolds."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .data import (
    Dataset,
    GeneratedTruth,
    ManifoldSpec,
    OutcomeModel,
    generate_dataset,
    load_dataset_csv,
    sample_test_points,
    save_dataset_csv,
    validate_dataset,
)
from .estimator import CATEEstimator
from .forest import ForestConfig, build_forest, forest_weights, leaf_diameter_check
from .inference import confidence_interval, estimate_nuisance, kernel_constants, sigma_hat
from .smoother import (
    KernelSpec,
    cate_at,
    default_bandwidth,
    impute_potential_outcomes,
    kernel_value,
    knn_weights,
)

__all__ = [
    "BACKEND",
    "CATEEstimator",
    "Dataset",
    "ForestConfig",
    "GeneratedTruth",
    "KernelSpec",
    "ManifoldSpec",
    "OutcomeModel",
    "build_forest",
    "cate_at",
    "confidence_interval",
    "default_bandwidth",
    "estimate_nuisance",
    "forest_weights",
    "generate_dataset",
    "impute_potential_outcomes",
    "kernel_constants",
    "kernel_value",
    "knn_weights",
    "leaf_diameter_check",
    "load_dataset_csv",
    "sample_test_points",
    "save_dataset_csv",
    "sigma_hat",
    "validate_dataset",
]
