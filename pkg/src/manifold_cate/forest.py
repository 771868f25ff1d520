"""Per-arm subsampled partition forests and their smoothing weights.

Trees are never stored whole during estimation: the split at every node is a
deterministic function of the node's key (extremely honest) or of the
structure half of the subsample (honest), so the kernel in ``_backend`` can
re-derive exactly the cells it needs.  ``Forest.tree`` materializes a single
tree for inspection, diameter checks and debug dumps.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import sparse

from . import _backend
from ._keys import child_key, root_key
from ._partition_py import cell_diameter_sq, choose_split
from .data import Dataset

HONESTY_MODES = ("honest", "extremely_honest")
DEFAULT_B_CAP = 2000
BOX_PAD = 0.01


class ForestError(RuntimeError):
    """Forest construction or weight evaluation failed."""


class DepthCapError(ForestError):
    """The leaf-diameter rule was not met within the depth cap (h too small)."""


@dataclass
class ForestConfig:
    """Forest tuning; ``None`` fields are filled by :meth:`resolved`.

    Defaults: ``s = floor(arm_size ** 0.9)``, ``B = min(n, B_cap)``,
    ``epsilon = min(0.1, 1 / (2 (m + 2)))``, ``max_depth = 64 d``.
    """

    s: Optional[int] = None
    B: Optional[int] = None
    epsilon: Optional[float] = None
    c_leaf: float = 1.0
    honesty: str = "extremely_honest"
    min_leaf: int = 1
    seed: int = 0
    max_depth: Optional[int] = None
    B_cap: int = DEFAULT_B_CAP
    box: Optional[list] = None

    def __post_init__(self):
        if self.honesty not in HONESTY_MODES:
            raise ValueError(f"honesty must be one of {HONESTY_MODES}")
        if self.c_leaf <= 0:
            raise ValueError("c_leaf must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def resolved(self, n: int, arm_size: int, m: int, d: int) -> "ForestConfig":
        s = self.s if self.s is not None else max(1, int(math.floor(arm_size ** 0.9)))
        B = self.B if self.B is not None else min(n, self.B_cap)
        eps = self.epsilon if self.epsilon is not None else min(0.1, 1.0 / (2 * (m + 2)))
        depth = self.max_depth if self.max_depth is not None else 64 * d
        if not 1 <= s <= arm_size:
            raise ForestError(f"subsample size s={s} outside [1, {arm_size}] (arm size)")
        if self.honesty == "honest" and s < 2:
            raise ForestError("honest trees need s >= 2 to split structure and estimation halves")
        if B < 1:
            raise ForestError("B must be at least 1")
        if not 0.0 < eps < 1.0 / (m + 2):
            raise ForestError(f"epsilon={eps} outside (0, 1/(m+2)) for m={m}")
        return replace(self, s=s, B=B, epsilon=eps, max_depth=depth)

    def leaf_bound(self, h: float) -> float:
        if self.epsilon is None:
            raise ValueError("resolve the config before asking for the leaf bound")
        return self.c_leaf * h ** (0.5 + self.epsilon)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        return cls(**d)


def bounding_box(X: np.ndarray, pad: float = BOX_PAD):
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    width = hi - lo
    margin = np.where(width > 0, pad * width, pad)
    return np.ascontiguousarray(lo - margin), np.ascontiguousarray(hi + margin)


@dataclass
class Leaf:
    lo: np.ndarray
    hi: np.ndarray
    indices: np.ndarray
    depth: int
    virtual: bool = False

    @property
    def diameter(self) -> float:
        return math.sqrt(cell_diameter_sq(self.lo, self.hi))


class PartitionTree:
    """Axis-aligned binary partition of a box with half-open cells.

    A point goes left when ``x[coord] < value``.  Leaves hold the subsample
    indices falling in them.  Generated trees keep cells without any
    subsample point as stubs and refine them on demand in :meth:`leaf_of`.
    """

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.coord: list = []
        self.value: list = []
        self.left: list = []
        self.right: list = []
        self.leaf: list = []
        self._stub: dict = {}
        self._rule = None

    @property
    def d(self) -> int:
        return self.lo.shape[0]

    def _new_node(self):
        self.coord.append(-1)
        self.value.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf.append(None)
        return len(self.coord) - 1

    @classmethod
    def from_splits(cls, lo, hi, splits) -> "PartitionTree":
        """Explicit tree from nested ``(coord, value, left, right)`` tuples; ``None`` is a leaf."""
        tree = cls(lo, hi)

        def build(node_spec, lo_c, hi_c, depth):
            nid = tree._new_node()
            if node_spec is None:
                tree.leaf[nid] = Leaf(lo_c.copy(), hi_c.copy(), np.empty(0, np.int64), depth)
                return nid
            c, v, lspec, rspec = node_spec
            tree.coord[nid] = int(c)
            tree.value[nid] = float(v)
            h2 = hi_c.copy()
            h2[c] = v
            l2 = lo_c.copy()
            l2[c] = v
            tree.left[nid] = build(lspec, lo_c, h2, depth + 1)
            tree.right[nid] = build(rspec, l2, hi_c, depth + 1)
            return nid

        build(splits, tree.lo.copy(), tree.hi.copy(), 0)
        return tree

    def populate(self, X: np.ndarray, rows) -> "PartitionTree":
        """Store ``rows`` (indices into ``X``) in the leaves that contain them."""
        buckets: dict = {}
        for r in np.asarray(rows, dtype=np.int64).tolist():
            nid = self._descend(X[r])
            buckets.setdefault(nid, []).append(r)
        for nid, lf in enumerate(self.leaf):
            if lf is not None:
                lf.indices = np.array(sorted(buckets.get(nid, [])), dtype=np.int64)
        return self

    @classmethod
    def grow(cls, X, est_rows, struct_rows, lo, hi, bound, honest, key, max_depth):
        """Materialize a generated tree; same split rule as the kernel."""
        tree = cls(lo, hi)
        bound2 = bound * bound
        tree._rule = (X, bound2, bool(honest), max_depth)

        def build(lo_c, hi_c, key_c, depth, est, st):
            nid = tree._new_node()
            if cell_diameter_sq(lo_c, hi_c) <= bound2:
                tree.leaf[nid] = Leaf(lo_c.copy(), hi_c.copy(), np.sort(est), depth)
                return nid
            if est.size == 0 and st.size == 0:
                tree.leaf[nid] = Leaf(lo_c.copy(), hi_c.copy(), est, depth, virtual=True)
                tree._stub[nid] = (key_c, depth)
                return nid
            if depth >= max_depth:
                raise DepthCapError(
                    f"leaf diameter bound {bound:.4g} not reached within depth {max_depth}"
                )
            c, split = choose_split(X, lo_c, hi_c, key_c, honest, st)
            tree.coord[nid] = c
            tree.value[nid] = split
            h2 = hi_c.copy()
            h2[c] = split
            l2 = lo_c.copy()
            l2[c] = split
            el = X[est, c] < split
            sl = X[st, c] < split
            tree.left[nid] = build(lo_c, h2, child_key(key_c, 0), depth + 1, est[el], st[sl])
            tree.right[nid] = build(l2, hi_c, child_key(key_c, 1), depth + 1, est[~el], st[~sl])
            return nid

        build(tree.lo.copy(), tree.hi.copy(), key, 0,
              np.asarray(est_rows, dtype=np.int64), np.asarray(struct_rows, dtype=np.int64))
        return tree

    def _descend(self, x) -> int:
        nid = 0
        while self.leaf[nid] is None:
            nid = self.left[nid] if x[self.coord[nid]] < self.value[nid] else self.right[nid]
        return nid

    def leaf_of(self, x) -> Leaf:
        """Unique leaf containing ``x``; points outside the box clamp to boundary cells."""
        x = np.asarray(x, dtype=float)
        nid = self._descend(x)
        lf = self.leaf[nid]
        if nid not in self._stub:
            return lf
        # refine an empty stub with the tree's own rule to return the true cell
        X, bound2, honest, max_depth = self._rule
        key, depth = self._stub[nid]
        lo_c, hi_c = lf.lo.copy(), lf.hi.copy()
        empty = np.empty(0, np.int64)
        while cell_diameter_sq(lo_c, hi_c) > bound2:
            if depth >= max_depth:
                raise DepthCapError("depth cap reached while refining an empty cell")
            c, split = choose_split(X, lo_c, hi_c, key, honest, empty)
            if x[c] < split:
                hi_c[c] = split
                key = child_key(key, 0)
            else:
                lo_c[c] = split
                key = child_key(key, 1)
            depth += 1
        return Leaf(lo_c, hi_c, empty, depth, virtual=True)

    def leaves(self, include_virtual: bool = False):
        return [lf for lf in self.leaf
                if lf is not None and (include_virtual or not lf.virtual)]

    def max_leaf_diameter(self) -> float:
        """Largest diameter over cells that contain subsample points."""
        lv = [lf for lf in self.leaves() if lf.indices.size > 0] or self.leaves()
        return max((lf.diameter for lf in lv), default=0.0)

    def to_dict(self) -> dict:
        def node(nid):
            lf = self.leaf[nid]
            if lf is not None:
                return {"leaf": lf.indices.tolist(), "depth": lf.depth, "stub": lf.virtual}
            return {"coord": self.coord[nid], "value": self.value[nid],
                    "left": node(self.left[nid]), "right": node(self.right[nid])}
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "root": node(0)}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class Forest:
    """Forest of one arm: ``B`` trees with their subsample index sets.

    ``est_idx[b]`` is the index set whose leaf counts enter the weights
    (the whole subsample when extremely honest, its estimation half when
    honest).  ``key_arm`` fixes the split randomness and survives
    relabeling, which keeps partitions fixed under treatment swaps.
    """

    arm: int
    config: ForestConfig
    h: float
    bound: float
    box_lo: np.ndarray
    box_hi: np.ndarray
    X: np.ndarray = field(repr=False)
    est_idx: np.ndarray = field(repr=False)
    struct_idx: np.ndarray = field(repr=False)
    key_arm: int = 0
    trees: Optional[list] = field(default=None, repr=False)

    @property
    def B(self) -> int:
        return self.est_idx.shape[0]

    @property
    def honest(self) -> bool:
        return self.config.honesty == "honest"

    @property
    def subsamples(self) -> list:
        """Full subsample ``I_b`` of every tree (structure and estimation parts)."""
        return [np.sort(np.concatenate([self.struct_idx[b], self.est_idx[b]]))
                for b in range(self.B)]

    def tree(self, b: int) -> PartitionTree:
        if self.trees is not None:
            return self.trees[b]
        return PartitionTree.grow(
            self.X, self.est_idx[b], self.struct_idx[b], self.box_lo, self.box_hi,
            self.bound, self.honest, root_key(self.config.seed, self.key_arm, b),
            self.config.max_depth,
        )

    def materialized(self) -> "Forest":
        """Copy whose trees are all grown and stored (small forests only)."""
        return replace(self, trees=[self.tree(b) for b in range(self.B)])

    def relabeled(self, arm: int) -> "Forest":
        return replace(self, arm=arm)

    def permuted(self, perm, X_new) -> "Forest":
        """Same partitions after units are relabeled ``i -> perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        trees = None
        if self.trees is not None:
            trees = []
            for t in self.trees:
                t2 = PartitionTree(t.lo, t.hi)
                t2.coord, t2.value = list(t.coord), list(t.value)
                t2.left, t2.right = list(t.left), list(t.right)
                t2.leaf = [None if lf is None else
                           replace(lf, indices=np.sort(perm[lf.indices])) for lf in t.leaf]
                t2._stub = dict(t._stub)
                t2._rule = None if t._rule is None else (X_new,) + t._rule[1:]
                trees.append(t2)
        return replace(self, X=np.ascontiguousarray(X_new), est_idx=perm[self.est_idx],
                       struct_idx=perm[self.struct_idx], trees=trees)

    def accumulate(self, XQ: np.ndarray, col_of: np.ndarray, ncols: int, n_jobs: int = 1):
        """Raw per-query leaf-share sums and surviving-tree counts."""
        XQ = np.ascontiguousarray(np.atleast_2d(XQ), dtype=float)
        q = XQ.shape[0]
        W_sum = np.zeros((q, ncols))
        n_used = np.zeros(q, dtype=np.int64)
        if q == 0:
            return W_sum, n_used
        if self.trees is not None:
            _accumulate_materialized(self.trees, XQ, col_of, W_sum, n_used,
                                     self.config.min_leaf)
            return W_sum, n_used
        args = (self.X, self.box_lo, self.box_hi, self.bound * self.bound, self.honest,
                int(self.config.max_depth), int(self.config.min_leaf),
                int(self.config.seed), int(self.key_arm), self.est_idx, self.struct_idx,
                np.arange(self.B, dtype=np.int64), XQ, col_of, W_sum, n_used)
        n_jobs = max(1, min(int(n_jobs), q))
        if n_jobs == 1:
            status = _backend.accumulate_weights(*args)
        else:
            edges = np.linspace(0, q, n_jobs + 1).astype(int)
            with ThreadPoolExecutor(n_jobs) as pool:
                futs = [pool.submit(_backend.accumulate_weights, *args, int(a), int(b))
                        for a, b in zip(edges[:-1], edges[1:])]
                status = max(f.result() for f in futs)
        if status:
            raise DepthCapError(
                f"leaf diameter bound {self.bound:.4g} not reached within depth "
                f"{self.config.max_depth}; h={self.h:.4g} is too small for the data range"
            )
        return W_sum, n_used


def _accumulate_materialized(trees, XQ, col_of, W_sum, n_used, min_leaf):
    min_leaf = max(int(min_leaf), 1)
    for tree in trees:
        for qi in range(XQ.shape[0]):
            idx = tree.leaf_of(XQ[qi]).indices
            if idx.size >= min_leaf:
                W_sum[qi, col_of[idx]] += 1.0 / idx.size
                n_used[qi] += 1


def _draw_subsamples(arm_units, config, arm):
    s, B = config.s, config.B
    n_arm = arm_units.size
    n_struct = s // 2 if config.honesty == "honest" else 0
    est = np.empty((B, s - n_struct), dtype=np.int64)
    st = np.empty((B, n_struct), dtype=np.int64)
    for b in range(B):
        rng = np.random.default_rng([config.seed, arm, b])
        pick = arm_units[rng.choice(n_arm, size=s, replace=False)]
        st[b] = pick[:n_struct]
        est[b] = pick[n_struct:]
    return est, st


def build_forest(data: Dataset, arm: int, config: ForestConfig, h: float,
                 m: Optional[int] = None) -> Forest:
    """Draw ``B`` size-``s`` subsamples of arm ``arm`` and fix their partitions.

    ``m`` (intrinsic dimension) only feeds the default ``epsilon``; it falls
    back to the ambient dimension.
    """
    if h <= 0:
        raise ValueError("bandwidth h must be positive")
    units = data.arm(arm)
    if units.size == 0:
        raise ForestError(f"arm {arm} is empty")
    cfg = config.resolved(data.n, units.size, m if m is not None else data.d, data.d)
    if cfg.box is not None:
        lo, hi = (np.ascontiguousarray(np.asarray(v, dtype=float)) for v in cfg.box)
    else:
        lo, hi = bounding_box(data.X)
    est, st = _draw_subsamples(units, cfg, arm)
    return Forest(arm=arm, config=cfg, h=h, bound=cfg.leaf_bound(h), box_lo=lo, box_hi=hi,
                  X=data.X, est_idx=est, struct_idx=st, key_arm=arm)


def forest_from_trees(data: Dataset, arm: int, trees, subsamples, min_leaf: int = 1) -> Forest:
    """Forest over explicit partitions; ``subsamples[b]`` are the units in tree ``b``."""
    B = len(trees)
    if B == 0 or len(subsamples) != B:
        raise ValueError("need one subsample per tree")
    sizes = {len(s) for s in subsamples}
    if len(sizes) != 1:
        raise ValueError("all subsamples must have the same size s")
    est = np.array([np.sort(np.asarray(s, dtype=np.int64)) for s in subsamples])
    if np.any(data.D[est] != arm):
        raise ValueError(f"subsample contains units outside arm {arm}")
    trees = [t.populate(data.X, e) for t, e in zip(trees, est)]
    cfg = ForestConfig(s=est.shape[1], B=B, epsilon=0.0, min_leaf=min_leaf)
    return Forest(arm=arm, config=cfg, h=float("nan"), bound=float("inf"),
                  box_lo=trees[0].lo, box_hi=trees[0].hi, X=data.X, est_idx=est,
                  struct_idx=np.empty((B, 0), np.int64), key_arm=arm, trees=trees)


@dataclass
class WeightRow:
    """Smoothing weights of unit ``unit`` over the opposite arm."""

    unit: int
    indices: np.ndarray
    weights: np.ndarray
    n_trees_used: int = 0
    n_trees_dropped: int = 0
    fallback_nn: bool = False

    def as_dict(self) -> dict:
        return dict(zip(self.indices.tolist(), self.weights.tolist()))


@dataclass
class WeightRows:
    """Batch of weight rows; ``matrix[r, j]`` is the weight of unit ``units[r]`` on unit ``j``."""

    units: np.ndarray
    matrix: sparse.csr_matrix
    n_trees_used: np.ndarray
    n_trees_dropped: np.ndarray
    fallback_nn: np.ndarray

    def row(self, r: int) -> WeightRow:
        sl = slice(self.matrix.indptr[r], self.matrix.indptr[r + 1])
        return WeightRow(int(self.units[r]), self.matrix.indices[sl].astype(np.int64),
                         self.matrix.data[sl].copy(), int(self.n_trees_used[r]),
                         int(self.n_trees_dropped[r]), bool(self.fallback_nn[r]))


def nearest_index(X_pool: np.ndarray, pool: np.ndarray, x: np.ndarray) -> int:
    """Pool member nearest to ``x``; ties go to the smaller index."""
    dist = np.sqrt(np.sum((X_pool - x) ** 2, axis=1))
    order = np.lexsort((pool, dist))
    return int(pool[order[0]])


def forest_weight_rows(forest: Forest, data: Dataset, units, n_jobs: int = 1) -> WeightRows:
    """Weights ``w_{i<-j}`` for every ``i`` in ``units`` from ``forest``'s arm.

    Units whose own arm equals the forest's arm are allowed (the same
    formula applies); imputation only asks for opposite-arm units.
    """
    units = np.asarray(units, dtype=np.int64).reshape(-1)
    pool = data.arm(forest.arm)
    if pool.size == 0:
        raise ForestError(f"opposite arm {forest.arm} is empty")
    col_of = np.full(data.n, -1, dtype=np.int64)
    col_of[pool] = np.arange(pool.size)
    W_sum, n_used = forest.accumulate(data.X[units], col_of, pool.size, n_jobs=n_jobs)
    fallback = n_used == 0
    W = np.zeros_like(W_sum)
    ok = ~fallback
    W[ok] = W_sum[ok] / n_used[ok, None]
    for r in np.flatnonzero(fallback):
        j = nearest_index(data.X[pool], pool, data.X[units[r]])
        W[r, col_of[j]] = 1.0
    mat = sparse.csr_matrix(W)
    mat = sparse.csr_matrix((mat.data, pool[mat.indices], mat.indptr), shape=(units.size, data.n))
    mat.sort_indices()
    return WeightRows(units, mat, n_used, forest.B - n_used, fallback)


def forest_weights(forest_opposite: Forest, data: Dataset, i: int) -> WeightRow:
    return forest_weight_rows(forest_opposite, data, [i]).row(0)


@dataclass
class DiameterCheck:
    max_diameter: float
    bound: float
    passed: bool


def leaf_diameter_check(forest: Forest, h: float, config: Optional[ForestConfig] = None,
                        trees=None) -> DiameterCheck:
    """Compare the widest populated leaf with ``c_leaf * h ** (1/2 + epsilon)``."""
    cfg = config if config is not None and config.epsilon is not None else forest.config
    bound = cfg.leaf_bound(h)
    trees = trees if trees is not None else [forest.tree(b) for b in range(forest.B)]
    worst = max(t.max_leaf_diameter() for t in trees)
    return DiameterCheck(worst, bound, worst <= bound)


def leaf_size_summary(forest: Forest, trees=None) -> dict:
    """Distribution of estimation points per stored leaf, pooled over trees.

    The leaf-size conditions behind the weights are population statements;
    this is the sample-side view of them that gets reported alongside the
    diameter check.
    """
    trees = trees if trees is not None else [forest.tree(b) for b in range(forest.B)]
    sizes = np.array([lf.indices.size for t in trees for lf in t.leaves()], dtype=np.int64)
    if sizes.size == 0:
        return {"leaves": 0}
    q = np.quantile(sizes, [0.1, 0.5, 0.9])
    return {
        "leaves": int(sizes.size),
        "min": int(sizes.min()),
        "q10": float(q[0]),
        "median": float(q[1]),
        "q90": float(q[2]),
        "max": int(sizes.max()),
        "below_min_leaf": float(np.mean(sizes < max(1, forest.config.min_leaf))),
    }
