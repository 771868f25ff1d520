"""Kernel smoothing, linear-smoother imputation and the smoothed CATE estimate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from .data import Dataset, GeneratedTruth
from .forest import Forest, WeightRow, WeightRows, forest_weight_rows, nearest_index

KERNEL_PROFILES = ("box", "truncated_gaussian")
CHUNK = 256


class EmptyNeighborhoodError(RuntimeError):
    """No observation carries positive kernel weight at the query point."""


@dataclass(frozen=True)
class KernelSpec:
    """Radial profile ``K`` with bounded support.

    ``box`` is 1 on ``[0, 1]``; ``truncated_gaussian`` is ``exp(-r^2/2)`` on
    ``[0, cutoff]``.  Both are zero beyond the support radius.
    """

    profile: str = "box"
    cutoff: float = 3.0

    def __post_init__(self):
        if self.profile not in KERNEL_PROFILES:
            raise ValueError(f"unknown kernel profile {self.profile!r}")
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")

    @property
    def support_radius(self) -> float:
        return 1.0 if self.profile == "box" else self.cutoff

    def K(self, r):
        r = np.asarray(r, dtype=float)
        inside = r <= self.support_radius
        if self.profile == "box":
            return inside.astype(float)
        return np.where(inside, np.exp(-0.5 * r * r), 0.0)

    def K_h(self, h: float, X: np.ndarray, x) -> np.ndarray:
        """``h^{-d/2} K(|X_i - x| / sqrt(h))`` for every row of ``X``."""
        if h <= 0:
            raise ValueError("bandwidth h must be positive")
        X = np.atleast_2d(X)
        d = X.shape[1]
        dist = np.sqrt(np.sum((X - np.asarray(x, dtype=float)) ** 2, axis=1))
        return h ** (-d / 2.0) * self.K(dist / math.sqrt(h))

    def to_dict(self) -> dict:
        return {"profile": self.profile, "cutoff": self.cutoff}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(**d)


def kernel_value(spec: KernelSpec, h: float, xi, x) -> float:
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    return float(spec.K_h(h, xi.reshape(1, -1), x)[0])


def default_bandwidth(n: int, m: int, regime: str = "mse", c_h: float = 1.0) -> float:
    """``c_h n^{-2/(m+2)}`` for the MSE-optimal regime, ``c_h n^{-2/(m+1)}`` to undersmooth."""
    if n < 2 or m < 1 or c_h <= 0:
        raise ValueError("need n >= 2, m >= 1 and c_h > 0")
    if regime == "mse":
        return c_h * n ** (-2.0 / (m + 2))
    if regime == "clt":
        return c_h * n ** (-2.0 / (m + 1))
    raise ValueError(f"unknown bandwidth regime {regime!r}")


# -- regression adjustment -------------------------------------------------

class ZeroAdjustment:
    kind = "zero"

    def predict(self, arm: int, X) -> np.ndarray:
        return np.zeros(np.atleast_2d(X).shape[0])

    def residuals(self, data: Dataset, arm: int, units=None) -> np.ndarray:
        units = data.arm(arm) if units is None else np.asarray(units)
        return data.Y[units].copy()


class OracleAdjustment:
    """True regression surfaces of a synthetic design."""

    kind = "oracle"

    def __init__(self, truth: GeneratedTruth):
        self.truth = truth

    def predict(self, arm: int, X) -> np.ndarray:
        return self.truth.mu(arm, X)

    def residuals(self, data: Dataset, arm: int, units=None) -> np.ndarray:
        units = data.arm(arm) if units is None else np.asarray(units)
        return data.Y[units] - self.predict(arm, data.X[units])


class FittedAdjustment:
    """Per-arm Nadaraya-Watson regression with bandwidth ``h_mu``.

    Queries with no arm observation inside the kernel support get the arm
    mean.  :meth:`residuals` is leave-one-out so residual variances are not
    shrunk by each point fitting itself.
    """

    kind = "fitted"

    def __init__(self, data: Dataset, spec: KernelSpec, h_mu: float):
        if h_mu <= 0:
            raise ValueError("h_mu must be positive")
        self.spec = spec
        self.h_mu = h_mu
        self._X = {}
        self._Y = {}
        self._mean = {}
        for arm in (0, 1):
            idx = data.arm(arm)
            if idx.size == 0:
                raise ValueError(f"arm {arm} is empty")
            self._X[arm] = data.X[idx]
            self._Y[arm] = data.Y[idx]
            self._mean[arm] = float(np.mean(self._Y[arm]))

    def _smooth(self, arm, Xq, exclude_self=False):
        Xa, Ya = self._X[arm], self._Y[arm]
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        out = np.empty(Xq.shape[0])
        scale = 1.0 / math.sqrt(self.h_mu)
        for a in range(0, Xq.shape[0], CHUNK):
            q = Xq[a:a + CHUNK]
            d2 = (np.sum(q ** 2, axis=1)[:, None] + np.sum(Xa ** 2, axis=1)[None, :]
                  - 2.0 * q @ Xa.T)
            k = self.spec.K(np.sqrt(np.maximum(d2, 0.0)) * scale)
            if exclude_self:
                k[np.arange(q.shape[0]), np.arange(a, a + q.shape[0])] = 0.0
            den = k.sum(axis=1)
            num = k @ Ya
            ok = den > 0
            out[a:a + CHUNK] = np.where(ok, num / np.where(ok, den, 1.0), self._mean[arm])
        return out

    def predict(self, arm: int, X) -> np.ndarray:
        return self._smooth(arm, X)

    def residuals(self, data: Dataset, arm: int, units=None) -> np.ndarray:
        idx = data.arm(arm)
        if units is None:
            return data.Y[idx] - self._smooth(arm, data.X[idx], exclude_self=True)
        units = np.asarray(units)
        res = np.empty(units.size)
        for r, i in enumerate(units.tolist()):
            # leave unit i out of its own arm's fit
            keep = idx != i
            Xa, Ya = self._X[arm][keep], self._Y[arm][keep]
            k = self.spec.K(np.sqrt(np.sum((Xa - data.X[i]) ** 2, axis=1)) / math.sqrt(self.h_mu))
            den = k.sum()
            fit = (k @ Ya) / den if den > 0 else self._mean[arm]
            res[r] = data.Y[i] - fit
        return res


def fit_adjustment(data: Dataset, spec: KernelSpec, h_mu: float) -> FittedAdjustment:
    return FittedAdjustment(data, spec, h_mu)


def make_adjustment(kind: str, data: Dataset = None, truth: GeneratedTruth = None,
                    spec: KernelSpec = None, h_mu: float = None):
    if kind == "zero":
        return ZeroAdjustment()
    if kind == "oracle":
        if truth is None:
            raise ValueError("oracle adjustment needs the generating truth")
        return OracleAdjustment(truth)
    if kind == "fitted":
        return FittedAdjustment(data, spec or KernelSpec(), h_mu)
    raise ValueError(f"unknown adjustment kind {kind!r}")


# -- weight schemes ----------------------------------------------------------

def knn_weight_rows(data: Dataset, units, k: int) -> WeightRows:
    """Uniform ``1/k`` weights on the ``k`` nearest opposite-arm units."""
    units = np.asarray(units, dtype=np.int64).reshape(-1)
    rows, cols, vals = [], [], []
    pools = {0: data.arm(0), 1: data.arm(1)}
    for r, i in enumerate(units.tolist()):
        pool = pools[1 - int(data.D[i])]
        if k < 1 or k > pool.size:
            raise ValueError(f"k={k} outside [1, {pool.size}] (opposite arm size)")
        dist = np.sqrt(np.sum((data.X[pool] - data.X[i]) ** 2, axis=1))
        nn = pool[np.lexsort((pool, dist))[:k]]
        rows.append(np.full(k, r))
        cols.append(nn)
        vals.append(np.full(k, 1.0 / k))
    mat = sparse.csr_matrix((np.concatenate(vals) if vals else [],
                             (np.concatenate(rows) if rows else [],
                              np.concatenate(cols) if cols else [])),
                            shape=(units.size, data.n))
    mat.sort_indices()
    zeros = np.zeros(units.size, dtype=np.int64)
    return WeightRows(units, mat, zeros, zeros.copy(), np.zeros(units.size, bool))


def knn_weights(data: Dataset, i: int, k: int) -> WeightRow:
    return knn_weight_rows(data, [i], k).row(0)


class ForestScheme:
    """Forest weights: units of arm ``w`` draw on the forest of arm ``1 - w``."""

    kind = "forest"

    def __init__(self, forest0: Forest, forest1: Forest, n_jobs: int = 1):
        if forest0.arm != 0 or forest1.arm != 1:
            raise ValueError("forest0 must carry arm 0 and forest1 arm 1")
        self.forests = {0: forest0, 1: forest1}
        self.n_jobs = n_jobs

    def rows(self, data: Dataset, units) -> WeightRows:
        units = np.asarray(units, dtype=np.int64).reshape(-1)
        parts = {}
        for arm in (0, 1):
            mine = units[data.D[units] == 1 - arm]
            if mine.size:
                parts[arm] = forest_weight_rows(self.forests[arm], data, mine, n_jobs=self.n_jobs)
        return _merge_rows(units, data, parts)

    def swapped(self) -> "ForestScheme":
        return ForestScheme(self.forests[1].relabeled(0), self.forests[0].relabeled(1), self.n_jobs)


class KnnScheme:
    kind = "knn"

    def __init__(self, k: int):
        self.k = int(k)

    def rows(self, data: Dataset, units) -> WeightRows:
        return knn_weight_rows(data, units, self.k)


class ExplicitScheme:
    """Caller-supplied ``n x n`` matrix, ``W[i, j] = w_{i<-j}``."""

    kind = "explicit"

    def __init__(self, W):
        self.W = np.asarray(W, dtype=float)

    def rows(self, data: Dataset, units) -> WeightRows:
        units = np.asarray(units, dtype=np.int64).reshape(-1)
        if self.W.shape != (data.n, data.n):
            raise ValueError("explicit weight matrix must be n x n")
        sub = self.W[units].copy()
        same = data.D[units][:, None] == data.D[None, :]
        if np.any(sub[same] != 0):
            raise ValueError("explicit weights must vanish within the same arm")
        mat = sparse.csr_matrix(sub)
        zeros = np.zeros(units.size, dtype=np.int64)
        return WeightRows(units, mat, zeros, zeros.copy(), np.zeros(units.size, bool))


def _merge_rows(units, data, parts) -> WeightRows:
    n_used = np.zeros(units.size, dtype=np.int64)
    n_drop = np.zeros(units.size, dtype=np.int64)
    fb = np.zeros(units.size, dtype=bool)
    blocks = []
    order = []
    for arm, wr in parts.items():
        pos = np.flatnonzero(data.D[units] == 1 - arm)
        order.append(pos)
        blocks.append(wr.matrix)
        n_used[pos] = wr.n_trees_used
        n_drop[pos] = wr.n_trees_dropped
        fb[pos] = wr.fallback_nn
    if not blocks:
        return WeightRows(units, sparse.csr_matrix((0, data.n)), n_used, n_drop, fb)
    stacked = sparse.vstack(blocks, format="csr")
    order = np.concatenate(order)
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    mat = stacked[inv]
    mat.sort_indices()
    return WeightRows(units, mat, n_used, n_drop, fb)


# -- imputation and CATE -----------------------------------------------------

@dataclass
class ImputedOutcomes:
    """Potential outcome pairs; ``NaN`` marks units that were not imputed."""

    Y0: np.ndarray
    Y1: np.ndarray
    observed: np.ndarray
    computed: np.ndarray

    @property
    def diff(self) -> np.ndarray:
        return self.Y1 - self.Y0


def impute_potential_outcomes(data: Dataset, scheme, adj=None, units=None,
                              rows: Optional[WeightRows] = None) -> ImputedOutcomes:
    """Fill the missing arm with ``sum_j w_{i<-j} (Y_j + mu(X_i) - mu(X_j))``.

    ``units`` restricts imputation to a subset (others stay ``NaN``); the
    observed arm is always passed through.
    """
    adj = adj if adj is not None else ZeroAdjustment()
    n = data.n
    if data.arm(0).size == 0 or data.arm(1).size == 0:
        raise ValueError("both arms must be nonempty")
    units = np.arange(n) if units is None else np.unique(np.asarray(units, dtype=np.int64))
    Y0 = np.where(data.D == 0, data.Y, np.nan)
    Y1 = np.where(data.D == 1, data.Y, np.nan)
    if rows is None:
        rows = scheme.rows(data, units)
    mat = rows.matrix
    D_u = data.D[rows.units]
    target = 1 - D_u
    values = np.empty(rows.units.size)
    for arm in (0, 1):
        sel = np.flatnonzero(target == arm)
        if sel.size == 0:
            continue
        sub = mat[sel]
        cols = sub.indices
        row_of = np.repeat(np.arange(sel.size), np.diff(sub.indptr))
        if adj.kind == "zero":
            contrib = sub.data * data.Y[cols]
        else:
            mu_cols = np.zeros(n)
            used = np.unique(cols)
            mu_cols[used] = adj.predict(arm, data.X[used])
            mu_i = adj.predict(arm, data.X[rows.units[sel]])
            contrib = sub.data * (data.Y[cols] + mu_i[row_of] - mu_cols[cols])
        values[sel] = np.bincount(row_of, weights=contrib, minlength=sel.size)
        values[sel[np.diff(sub.indptr) == 0]] = np.nan
    Y0[rows.units[target == 0]] = values[target == 0]
    Y1[rows.units[target == 1]] = values[target == 1]
    computed = np.zeros(n, dtype=bool)
    computed[rows.units] = True
    return ImputedOutcomes(Y0, Y1, data.D == 1, computed)


def cate_at(data: Dataset, imputed: ImputedOutcomes, spec: KernelSpec, h: float, x) -> float:
    """Kernel-weighted average of imputed differences ``Y_i(1) - Y_i(0)`` around ``x``."""
    k = spec.K_h(h, data.X, x)
    nz = np.flatnonzero(k > 0)
    if nz.size == 0:
        raise EmptyNeighborhoodError(
            f"no observation within the kernel support at x (h={h:.4g}); increase h"
        )
    diff = imputed.Y1[nz] - imputed.Y0[nz]
    if np.any(np.isnan(diff)):
        raise ValueError("imputed outcomes missing for units inside the kernel support")
    kk = k[nz]
    return float(np.sum(kk * diff) / np.sum(kk))


def cate_batch(data: Dataset, imputed: ImputedOutcomes, spec: KernelSpec, h: float, xs) -> np.ndarray:
    """``cate_at`` per row of ``xs``; ``NaN`` marks an empty neighborhood."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    out = np.empty(xs.shape[0])
    for t, x in enumerate(xs):
        try:
            out[t] = cate_at(data, imputed, spec, h, x)
        except EmptyNeighborhoodError:
            out[t] = np.nan
    return out


def support_units(data: Dataset, spec: KernelSpec, h: float, xs) -> np.ndarray:
    """Units with positive kernel weight at any of ``xs``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    keep = np.zeros(data.n, dtype=bool)
    for x in xs:
        keep |= spec.K_h(h, data.X, x) > 0
    return np.flatnonzero(keep)


def impute_rf_direct(data: Dataset, forest0: Forest, forest1: Forest, adj=None, units=None):
    """Tree-by-tree leaf averages, the forest imputation written out literally.

    Independent of the weight matrix path: each tree's leaf mean of
    ``Y_j + mu(X_i) - mu(X_j)`` is averaged over trees whose leaf at ``X_i``
    is nonempty.  Trees are materialized, so keep ``n`` small.
    """
    adj = adj if adj is not None else ZeroAdjustment()
    forests = {0: forest0, 1: forest1}
    trees = {a: [forests[a].tree(b) for b in range(forests[a].B)] for a in (0, 1)}
    units = np.arange(data.n) if units is None else np.asarray(units, dtype=np.int64)
    Y0 = np.where(data.D == 0, data.Y, np.nan)
    Y1 = np.where(data.D == 1, data.Y, np.nan)
    min_leaf = {a: max(1, forests[a].config.min_leaf) for a in (0, 1)}
    for i in units.tolist():
        arm = 1 - int(data.D[i])
        mu_i = float(adj.predict(arm, data.X[i:i + 1])[0])
        per_tree = []
        for tree in trees[arm]:
            members = tree.leaf_of(data.X[i]).indices
            if members.size < min_leaf[arm]:
                continue
            mu_j = adj.predict(arm, data.X[members])
            per_tree.append(np.mean(data.Y[members] + mu_i - mu_j))
        if per_tree:
            val = float(np.mean(per_tree))
        else:
            pool = data.arm(arm)
            j = nearest_index(data.X[pool], pool, data.X[i])
            val = float(data.Y[j] + mu_i - adj.predict(arm, data.X[j:j + 1])[0])
        if arm == 0:
            Y0[i] = val
        else:
            Y1[i] = val
    computed = np.zeros(data.n, dtype=bool)
    computed[units] = True
    return ImputedOutcomes(Y0, Y1, data.D == 1, computed)
