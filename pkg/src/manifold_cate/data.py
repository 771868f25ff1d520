"""Datasets, exact-manifold synthetic generators and CSV round-tripping."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit
from scipy.stats import norm

MANIFOLD_KINDS = ("circle", "sphere2", "swiss_roll", "flat_subspace")
NOISE_KINDS = ("uniform_bounded", "truncated_gaussian")
TRUNCATION = 3.0

_CANONICAL_DIM = {"circle": 2, "sphere2": 3, "swiss_roll": 3}
_INTRINSIC_DIM = {"circle": 1, "sphere2": 2, "swiss_roll": 2}

# swiss roll parameter ranges before scaling into the unit cube
_ROLL_T = (1.5 * math.pi, 4.5 * math.pi)
_ROLL_V = (0.0, 10.0)
_ROLL_SCALE = 1.0 / (4.5 * math.pi)


class DatasetFormatError(ValueError):
    """Malformed dataset CSV; the message names the offending line."""


@dataclass
class Dataset:
    """Observed data ``(X, D, Y)``: covariates, binary treatment, outcome."""

    X: np.ndarray
    D: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        self.D = np.asarray(self.D).astype(np.int64, copy=False) if _is_integral(self.D) \
            else np.asarray(self.D, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        n = self.X.shape[0]
        if self.X.ndim != 2 or self.D.shape != (n,) or self.Y.shape != (n,):
            raise ValueError(
                f"inconsistent shapes: X {self.X.shape}, D {self.D.shape}, Y {self.Y.shape}"
            )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def arm(self, omega: int) -> np.ndarray:
        """Indices of units with ``D == omega`` in increasing order."""
        return np.flatnonzero(self.D == omega)

    def permuted(self, perm) -> "Dataset":
        """Dataset whose unit ``perm[i]`` is this dataset's unit ``i``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        return Dataset(self.X[inv], self.D[inv], self.Y[inv])

    def swapped(self) -> "Dataset":
        """Treatment labels flipped, ``D -> 1 - D``."""
        return Dataset(self.X, 1 - self.D, self.Y)

    def shifted(self, c: float) -> "Dataset":
        return Dataset(self.X, self.D, self.Y + c)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.X, other.X)
            and np.array_equal(self.D, other.D)
            and np.array_equal(self.Y, other.Y)
        )


def _is_integral(a) -> bool:
    a = np.asarray(a)
    if a.dtype.kind in "biu":
        return True
    if a.dtype.kind == "f":
        return bool(np.all(np.isfinite(a)) and np.all(a == np.round(a)))
    return False


@dataclass
class ManifoldSpec:
    """Which exact manifold the covariates live on and how it is embedded.

    ``kind`` selects the canonical manifold (circle in R^2, sphere in R^3,
    swiss roll in R^3, or the cube ``[-1, 1]^m``); an orthonormal frame drawn
    from ``embedding_seed`` maps it isometrically into ``R^d``.
    """

    kind: str = "circle"
    d: int = 10
    m: Optional[int] = None
    embedding_seed: int = 0
    density: str = "tilted"
    radius: float = 1.0
    margin: float = 0.15

    def __post_init__(self):
        if self.kind not in MANIFOLD_KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.density not in ("uniform", "tilted"):
            raise ValueError(f"unknown density {self.density!r}")
        if self.kind == "flat_subspace":
            if self.m is None:
                raise ValueError("flat_subspace needs an explicit m")
        else:
            if self.m is not None and self.m != _INTRINSIC_DIM[self.kind]:
                raise ValueError(
                    f"{self.kind} has intrinsic dimension {_INTRINSIC_DIM[self.kind]}, got m={self.m}"
                )
            self.m = _INTRINSIC_DIM[self.kind]
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.m > self.d:
            raise ValueError(f"m={self.m} exceeds ambient dimension d={self.d}")
        if self.canonical_dim > self.d:
            raise ValueError(
                f"{self.kind} needs ambient dimension >= {self.canonical_dim}, got d={self.d}"
            )
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def canonical_dim(self) -> int:
        return _CANONICAL_DIM.get(self.kind, self.m)

    def embedding(self) -> np.ndarray:
        """``d x canonical_dim`` matrix with orthonormal columns."""
        rng = np.random.default_rng(self.embedding_seed)
        G = rng.standard_normal((self.d, self.canonical_dim))
        Q, R = np.linalg.qr(G)
        return Q * np.sign(np.diag(R))

    def sample_canonical(self, rng: np.random.Generator, n: int, interior: bool = False):
        """Draw ``n`` canonical coordinates from the manifold density."""
        k = self.kind
        if k == "circle":
            theta = _rejection(rng, n, lambda: rng.uniform(0.0, 2 * np.pi, n),
                               self._circle_weight, 1.5)
            return self.radius * np.column_stack([np.cos(theta), np.sin(theta)])
        if k == "sphere2":
            def propose():
                g = rng.standard_normal((n, 3))
                return g / np.linalg.norm(g, axis=1, keepdims=True)
            pts = _rejection(rng, n, propose, self._sphere_weight, 1.5)
            return self.radius * pts
        if k == "swiss_roll":
            t_lo, t_hi = _ROLL_T
            v_lo, v_hi = _ROLL_V
            if interior:
                dt = self.margin * (t_hi - t_lo)
                dv = self.margin * (v_hi - v_lo)
                t_lo, t_hi, v_lo, v_hi = t_lo + dt, t_hi - dt, v_lo + dv, v_hi - dv
            t = rng.uniform(t_lo, t_hi, n)
            v = rng.uniform(v_lo, v_hi, n)
            return _ROLL_SCALE * np.column_stack([t * np.cos(t), v, t * np.sin(t)])
        half = 1.0 - self.margin if interior else 1.0
        if self.density == "uniform":
            return rng.uniform(-half, half, (n, self.m))

        def propose():
            return rng.uniform(-half, half, (n, self.m))
        return _rejection(rng, n, propose, lambda c: 1.0 + 0.5 * c[:, 0], 1.5)

    def _circle_weight(self, theta):
        if self.density == "uniform":
            return np.ones_like(theta)
        return 1.0 + 0.5 * np.sin(theta)

    def _sphere_weight(self, pts):
        if self.density == "uniform":
            return np.ones(pts.shape[0])
        return 1.0 + 0.5 * pts[:, 2]

    def density_at(self, C: np.ndarray) -> Optional[np.ndarray]:
        """Hausdorff density at canonical coordinates, or None (swiss roll)."""
        C = np.atleast_2d(C)
        if self.kind == "circle":
            base = 1.0 / (2 * np.pi * self.radius)
            if self.density == "uniform":
                return np.full(C.shape[0], base)
            return base * (1.0 + 0.5 * C[:, 1] / self.radius)
        if self.kind == "sphere2":
            base = 1.0 / (4 * np.pi * self.radius ** 2)
            if self.density == "uniform":
                return np.full(C.shape[0], base)
            return base * (1.0 + 0.5 * C[:, 2] / self.radius)
        if self.kind == "flat_subspace":
            base = 0.5 ** self.m
            if self.density == "uniform":
                return np.full(C.shape[0], base)
            return base * (1.0 + 0.5 * C[:, 0])
        return None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ManifoldSpec":
        return cls(**d)


def _rejection(rng, n, propose, weight, wmax):
    out = []
    have = 0
    while have < n:
        cand = propose()
        keep = rng.uniform(0.0, wmax, len(cand)) < weight(cand)
        cand = cand[keep]
        out.append(cand)
        have += len(cand)
    return np.concatenate(out)[:n]


@dataclass
class OutcomeModel:
    """Regression surfaces, noise law and propensity of a synthetic design.

    With ``mu_kind="sincos"`` the surfaces are ``mu0 = sin(<w0, c>)`` and
    ``mu1 = mu0 + cos(<w1, c>)`` in canonical coordinates ``c``; with
    ``"constant"`` they are ``mu0_value`` and ``mu1_value``.  The propensity
    is ``eta + (1 - 2 eta) * logistic(<a, c>)`` or the constant
    ``propensity_value``.  All coefficient vectors come from ``coef_seed``,
    never from the data seed, so the truth is fixed across replications.
    """

    mu_kind: str = "sincos"
    mu0_value: float = 0.0
    mu1_value: float = 1.0
    freq: float = 1.0
    noise_kind: str = "uniform_bounded"
    noise_scale: float = 0.5
    eta: float = 0.1
    propensity_kind: str = "logistic"
    propensity_value: float = 0.5
    propensity_slope: float = 1.0
    coef_seed: int = 0

    def __post_init__(self):
        if self.mu_kind not in ("sincos", "constant"):
            raise ValueError(f"unknown mu_kind {self.mu_kind!r}")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise_kind {self.noise_kind!r}")
        if self.propensity_kind not in ("logistic", "constant"):
            raise ValueError(f"unknown propensity_kind {self.propensity_kind!r}")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if not 0.0 < self.eta < 0.5:
            raise ValueError("eta must lie in (0, 1/2)")

    @property
    def noise_bound(self) -> float:
        if self.noise_kind == "uniform_bounded":
            return self.noise_scale
        return TRUNCATION * self.noise_scale

    @property
    def noise_variance(self) -> float:
        s2 = self.noise_scale ** 2
        if self.noise_kind == "uniform_bounded":
            return s2 / 3.0
        t = TRUNCATION
        return s2 * (1.0 - 2.0 * t * norm.pdf(t) / (2.0 * norm.cdf(t) - 1.0))

    def draw_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.noise_kind == "uniform_bounded":
            return self.noise_scale * rng.uniform(-1.0, 1.0, n)
        z = _rejection(rng, n, lambda: rng.standard_normal(n),
                       lambda v: (np.abs(v) <= TRUNCATION).astype(float), 1.0)
        return self.noise_scale * z

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OutcomeModel":
        return cls(**d)


@dataclass
class GeneratedTruth:
    """Closed-form ground truth of a synthetic design, evaluated on ambient points."""

    spec: ManifoldSpec
    model: OutcomeModel
    Q: np.ndarray = field(repr=False)
    canonical: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.model.coef_seed)
        k = self.spec.canonical_dim
        self.w0 = _random_direction(rng, k) * self.model.freq
        self.w1 = _random_direction(rng, k) * self.model.freq
        self.a = _random_direction(rng, k) * self.model.propensity_slope

    @property
    def m(self) -> int:
        return self.spec.m

    def to_canonical(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.Q

    def embed(self, C) -> np.ndarray:
        return np.ascontiguousarray(np.atleast_2d(C) @ self.Q.T)

    def mu0(self, X) -> np.ndarray:
        C = self.to_canonical(X)
        if self.model.mu_kind == "constant":
            return np.full(C.shape[0], float(self.model.mu0_value))
        return np.sin(C @ self.w0)

    def mu1(self, X) -> np.ndarray:
        C = self.to_canonical(X)
        if self.model.mu_kind == "constant":
            return np.full(C.shape[0], float(self.model.mu1_value))
        return np.sin(C @ self.w0) + np.cos(C @ self.w1)

    def mu(self, omega: int, X) -> np.ndarray:
        return self.mu1(X) if omega == 1 else self.mu0(X)

    def tau(self, X) -> np.ndarray:
        return self.mu1(X) - self.mu0(X)

    def e(self, X) -> np.ndarray:
        C = self.to_canonical(X)
        if self.model.propensity_kind == "constant":
            return np.full(C.shape[0], float(self.model.propensity_value))
        eta = self.model.eta
        return eta + (1.0 - 2.0 * eta) * expit(C @ self.a)

    def sigma0_sq(self, X) -> np.ndarray:
        return np.full(self.to_canonical(X).shape[0], self.model.noise_variance)

    def sigma1_sq(self, X) -> np.ndarray:
        return self.sigma0_sq(X)

    def sigma_sq(self, omega: int, X) -> np.ndarray:
        return self.sigma1_sq(X) if omega == 1 else self.sigma0_sq(X)

    @property
    def has_density(self) -> bool:
        return self.spec.kind != "swiss_roll"

    def f(self, X) -> Optional[np.ndarray]:
        return self.spec.density_at(self.to_canonical(X))


def _random_direction(rng, k):
    v = rng.standard_normal(k)
    return v / np.linalg.norm(v)


def make_truth(spec: ManifoldSpec, model: OutcomeModel) -> GeneratedTruth:
    return GeneratedTruth(spec, model, spec.embedding())


def _check_overlap(truth: GeneratedTruth, n_probe: int = 2000):
    eta = truth.model.eta
    probe = truth.embed(truth.spec.sample_canonical(np.random.default_rng(20240917), n_probe))
    e = truth.e(probe)
    if np.any(e < eta) or np.any(e > 1.0 - eta):
        raise ValueError(
            f"propensity leaves [{eta}, {1 - eta}] on the probe grid "
            f"(range {e.min():.4g}..{e.max():.4g})"
        )


def generate_dataset(spec: ManifoldSpec, model: OutcomeModel, n: int, seed: int):
    """Draw ``n`` units on the manifold with their treatment and outcome.

    The intrinsic draws (canonical points, treatment uniforms, noise) depend
    on ``seed`` only, so re-embedding into a different ambient dimension
    reuses the same intrinsic sample.
    """
    if n < 10:
        raise ValueError("n must be at least 10")
    truth = make_truth(spec, model)
    _check_overlap(truth)
    rng = np.random.default_rng(seed)
    C = spec.sample_canonical(rng, n)
    V = rng.uniform(0.0, 1.0, n)
    U = model.draw_noise(rng, n)
    X = truth.embed(C)
    D = (V < truth.e(X)).astype(np.int64)
    mu = np.where(D == 1, truth.mu1(X), truth.mu0(X))
    Y = mu + U if model.noise_scale > 0 else mu
    truth.canonical = C
    return Dataset(X, D, Y), truth


def sample_test_points(spec: ManifoldSpec, count: int, seed: int) -> np.ndarray:
    """Fixed evaluation points, kept away from the edges of bounded manifolds."""
    truth_q = spec.embedding()
    C = spec.sample_canonical(np.random.default_rng(seed), count, interior=True)
    return np.ascontiguousarray(C @ truth_q.T)


@dataclass
class ValidationReport:
    ok: bool
    n: int
    n_treated: int
    n_control: int
    problems: list

    def __str__(self):
        head = "pass" if self.ok else "fail"
        lines = [f"{head}: n={self.n} treated={self.n_treated} control={self.n_control}"]
        lines += [f"  - {p}" for p in self.problems]
        return "\n".join(lines)


def validate_dataset(data: Dataset) -> ValidationReport:
    problems = []
    D = np.asarray(data.D)
    bad_d = np.flatnonzero(~np.isin(D, (0, 1)))
    if bad_d.size:
        problems.append(f"non-binary treatment at rows {bad_d[:10].tolist()}")
    bad_x = np.flatnonzero(~np.all(np.isfinite(data.X), axis=1))
    if bad_x.size:
        problems.append(f"non-finite covariates at rows {bad_x[:10].tolist()}")
    bad_y = np.flatnonzero(~np.isfinite(data.Y))
    if bad_y.size:
        problems.append(f"non-finite outcome at rows {bad_y[:10].tolist()}")
    n1 = int(np.sum(D == 1))
    n0 = int(np.sum(D == 0))
    if data.n < 2:
        problems.append("fewer than 2 observations")
    if n1 == 0:
        problems.append("treated arm empty")
    if n0 == 0:
        problems.append("control arm empty")
    return ValidationReport(not problems, data.n, n1, n0, problems)


def save_dataset_csv(data: Dataset, path) -> None:
    header = [f"x{k + 1}" for k in range(data.d)] + ["d", "y"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, dv, y in zip(data.X, data.D, data.Y):
            w.writerow([f"{v:.17g}" for v in x] + [str(int(dv)), f"{y:.17g}"])


def load_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    if len(header) < 3 or header[-2:] != ["d", "y"]:
        raise DatasetFormatError(f"{path}:1: header must be x1..xd,d,y")
    dim = len(header) - 2
    if header[:dim] != [f"x{k + 1}" for k in range(dim)]:
        raise DatasetFormatError(f"{path}:1: covariate columns must be named x1..x{dim}")
    X, D, Y = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != dim + 2:
            raise DatasetFormatError(
                f"{path}:{lineno}: expected {dim + 2} fields, found {len(row)}"
            )
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
        if vals[dim] not in (0.0, 1.0):
            raise DatasetFormatError(f"{path}:{lineno}: d must be 0 or 1, got {row[dim]!r}")
        X.append(vals[:dim])
        D.append(int(vals[dim]))
        Y.append(vals[dim + 1])
    if not X:
        raise DatasetFormatError(f"{path}: no data rows")
    return Dataset(np.array(X), np.array(D, dtype=np.int64), np.array(Y))
