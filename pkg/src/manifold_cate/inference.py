"""Plug-in asymptotic variance and normal confidence intervals for the CATE."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from statistics import NormalDist

import numpy as np
from scipy import integrate

from .data import Dataset
from .smoother import EmptyNeighborhoodError, KernelSpec

DEFAULT_CLIP = 0.02
VAR_FLOOR = 1e-8


def unit_ball_volume(m: int) -> float:
    return math.pi ** (m / 2.0) / math.gamma(m / 2.0 + 1.0)


def sphere_area(m: int) -> float:
    """Surface area of the unit sphere ``S^{m-1}`` in ``R^m``."""
    return 2.0 * math.pi ** (m / 2.0) / math.gamma(m / 2.0)


@lru_cache(maxsize=None)
def kernel_constants(spec: KernelSpec, m: int):
    """``(c_K, K2)``: integrals of ``K(|t|)`` and ``K(|t|)^2`` over ``R^m``."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if spec.profile == "box":
        v = unit_ball_volume(m)
        return v, v
    R = spec.support_radius
    area = sphere_area(m)

    def radial(power):
        val, _ = integrate.quad(lambda r: r ** (m - 1) * float(spec.K(r)) ** power, 0.0, R,
                                epsabs=0.0, epsrel=1e-13, limit=200)
        return area * val

    return radial(1), radial(2)


@dataclass
class NuisanceEstimates:
    A_hat: float
    e_hat: float
    s0_sq_hat: float
    s1_sq_hat: float
    floored: bool = False

    def __post_init__(self):
        if not self.A_hat > 0:
            raise ValueError("density factor must be positive")
        if not 0.0 < self.e_hat < 1.0:
            raise ValueError("propensity estimate must lie strictly inside (0, 1)")
        if self.s0_sq_hat <= 0 or self.s1_sq_hat <= 0:
            raise ValueError("residual variances must be positive")


def _kernel_profile(data, spec, h, x, units=None):
    X = data.X if units is None else data.X[units]
    dist = np.sqrt(np.sum((X - np.asarray(x, dtype=float)) ** 2, axis=1))
    return spec.K(dist / math.sqrt(h))


def estimate_density_factor(data: Dataset, spec: KernelSpec, h: float, x, m: int) -> float:
    """``h^{(d-m)/2} (1/n) sum_i K_h(X_i - x)``, which tends to ``c_K f(x)``.

    The ambient factor ``h^{-d/2}`` is folded in analytically, leaving
    ``h^{-m/2}`` times the mean profile value.
    """
    k = _kernel_profile(data, spec, h, x)
    total = float(np.sum(k))
    if total <= 0:
        raise EmptyNeighborhoodError("no observation in the kernel support at x")
    return h ** (-m / 2.0) * total / data.n


def estimate_propensity(data: Dataset, spec: KernelSpec, h_e: float, x,
                        clip: float = DEFAULT_CLIP) -> float:
    k = _kernel_profile(data, spec, h_e, x)
    den = float(np.sum(k))
    if den <= 0:
        raise EmptyNeighborhoodError("no observation in the propensity kernel support at x")
    e = float(np.sum(k * data.D)) / den
    return min(max(e, clip), 1.0 - clip)


def estimate_residual_variance(data: Dataset, adj, spec: KernelSpec, h_s: float, x, arm: int,
                               var_floor: float = VAR_FLOOR) -> float:
    """Kernel-weighted mean of squared arm residuals ``Y_i - mu_arm(X_i)`` near ``x``."""
    units = data.arm(arm)
    k = _kernel_profile(data, spec, h_s, x, units)
    nz = np.flatnonzero(k > 0)
    if nz.size == 0:
        raise EmptyNeighborhoodError(f"arm {arm} has no observation in the kernel support at x")
    res = adj.residuals(data, arm, units[nz])
    s2 = float(np.sum(k[nz] * res ** 2) / np.sum(k[nz]))
    return max(s2, var_floor)


def estimate_nuisance(data: Dataset, spec: KernelSpec, x, m: int, h_nuis: float, adj,
                      clip: float = DEFAULT_CLIP, var_floor: float = VAR_FLOOR) -> NuisanceEstimates:
    A = estimate_density_factor(data, spec, h_nuis, x, m)
    e = estimate_propensity(data, spec, h_nuis, x, clip)
    s0 = estimate_residual_variance(data, adj, spec, h_nuis, x, 0, var_floor)
    s1 = estimate_residual_variance(data, adj, spec, h_nuis, x, 1, var_floor)
    return NuisanceEstimates(A, e, s0, s1, floored=(s0 == var_floor or s1 == var_floor))


def sigma_hat(nuisance: NuisanceEstimates, constants) -> float:
    """``(K2 / c_K) (s1^2 / e + s0^2 / (1 - e)) / A`` with ``A`` estimating ``c_K f``."""
    c_K, K2 = constants
    nu = nuisance
    return (K2 / c_K) * (nu.s1_sq_hat / nu.e_hat + nu.s0_sq_hat / (1.0 - nu.e_hat)) / nu.A_hat


def sigma_closed_form(f: float, e: float, s0_sq: float, s1_sq: float, constants) -> float:
    """Asymptotic variance from the true density, propensity and residual variances."""
    c_K, K2 = constants
    return (s1_sq / e + s0_sq / (1.0 - e)) * K2 / (c_K ** 2 * f)


@dataclass
class ConfidenceInterval:
    center: float
    half_width: float
    level: float
    n: int
    h: float
    m: int

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def normal_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


def confidence_interval(tau_hat: float, Sigma_hat: float, n: int, h: float, m: int,
                        level: float = 0.95) -> ConfidenceInterval:
    """``tau_hat +- z sqrt(Sigma_hat / (n h^{m/2}))``."""
    if not Sigma_hat > 0:
        raise ValueError("Sigma_hat must be positive")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    z = normal_quantile(0.5 * (1.0 + level))
    half = z * math.sqrt(Sigma_hat / (n * h ** (m / 2.0)))
    return ConfidenceInterval(float(tau_hat), half, level, n, h, m)
