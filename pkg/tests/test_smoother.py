import math

import numpy as np
import pytest

import oracle
from manifold_cate.data import Dataset, ManifoldSpec, OutcomeModel, generate_dataset
from manifold_cate.forest import ForestConfig, build_forest
from manifold_cate.smoother import (
    EmptyNeighborhoodError,
    ExplicitScheme,
    ForestScheme,
    KernelSpec,
    KnnScheme,
    OracleAdjustment,
    ZeroAdjustment,
    cate_at,
    cate_batch,
    default_bandwidth,
    fit_adjustment,
    impute_potential_outcomes,
    kernel_value,
    knn_weights,
)

BOX = KernelSpec()
GAUSS = KernelSpec("truncated_gaussian")


def test_box_kernel_at_zero_distance():
    assert kernel_value(BOX, 0.04, [0.3, 0.1], [0.3, 0.1]) == pytest.approx(25.0, rel=1e-14)


def test_box_kernel_outside_support():
    assert kernel_value(BOX, 0.04, [0.3, 0.0], [0.0, 0.0]) == 0.0


def test_truncated_gaussian_value():
    # exp(-1/2)
    assert kernel_value(GAUSS, 1.0, [1.0], [0.0]) == pytest.approx(0.6065306597126334, abs=1e-15)


def test_truncated_gaussian_support_edge():
    assert GAUSS.K(3.0) == pytest.approx(math.exp(-4.5))
    assert GAUSS.K(3.0000001) == 0.0
    assert BOX.K(1.0) == 1.0 and BOX.K(1.0 + 1e-12) == 0.0


def test_nonpositive_bandwidth_rejected():
    with pytest.raises(ValueError):
        kernel_value(BOX, 0.0, [0.0], [0.0])
    with pytest.raises(ValueError):
        KernelSpec("epanechnikov")


@pytest.mark.parametrize("n,m,regime,expected", [(1000, 1, "mse", 0.01), (1000, 1, "clt", 0.001),
                                                  (4000, 1, "clt", 1 / 4000), (64, 2, "mse", 0.125)])
def test_default_bandwidth(n, m, regime, expected):
    assert default_bandwidth(n, m, regime) == pytest.approx(expected, rel=1e-12)


def test_clt_exponent_is_strictly_undersmoothing():
    for m in range(1, 8):
        e = 2 / (m + 1)
        assert 2 / (m + 2) < e < 2 / m
    assert 2 / 3 > 1 / 2 and 2 / 3 < 1


def _design(n=400, d=4, seed=0, **kw):
    return generate_dataset(ManifoldSpec("circle", d=d), OutcomeModel(**kw), n, seed)


def _forest_scheme(data, h=0.05, B=20, seed=0):
    cfg = ForestConfig(B=B, seed=seed)
    return ForestScheme(build_forest(data, 0, cfg, h, m=1), build_forest(data, 1, cfg, h, m=1))


def test_zero_control_outcomes_impute_zero():
    data, _ = _design()
    Y = np.where(data.D == 0, 0.0, data.Y)
    data = Dataset(data.X, data.D, Y)
    imp = impute_potential_outcomes(data, _forest_scheme(data), ZeroAdjustment())
    assert np.all(imp.Y0[data.D == 1] == 0.0)


def test_observed_arm_passes_through():
    data, _ = _design()
    imp = impute_potential_outcomes(data, KnnScheme(3))
    assert np.array_equal(imp.Y1[data.D == 1], data.Y[data.D == 1])
    assert np.array_equal(imp.Y0[data.D == 0], data.Y[data.D == 0])
    assert np.array_equal(imp.observed, data.D == 1)


@pytest.mark.parametrize("scheme", ["forest", "knn"])
def test_oracle_adjustment_without_noise_is_exact(scheme):
    data, truth = _design(noise_scale=0.0)
    sch = _forest_scheme(data) if scheme == "forest" else KnnScheme(4)
    imp = impute_potential_outcomes(data, sch, OracleAdjustment(truth))
    t, c = data.D == 1, data.D == 0
    assert np.max(np.abs(imp.Y0[t] - truth.mu0(data.X[t]))) <= 1e-12
    assert np.max(np.abs(imp.Y1[c] - truth.mu1(data.X[c]))) <= 1e-12


def _explicit_six():
    rng = np.random.default_rng(2024)
    X = rng.uniform(0, 1, (6, 2))
    D = np.array([1, 0, 1, 0, 0, 1])
    Y = rng.normal(size=6)
    W = np.zeros((6, 6))
    for i in range(6):
        opp = np.flatnonzero(D != D[i])
        w = rng.uniform(0.1, 1.0, opp.size)
        W[i, opp] = w / w.sum()
    return X, D, Y, W


def test_explicit_weights_match_the_brute_force_display():
    X, D, Y, W = _explicit_six()
    data = Dataset(X, D, Y)
    imp = impute_potential_outcomes(data, ExplicitScheme(W))
    rows = [{j: W[i][j] for j in range(6) if W[i][j]} for i in range(6)]
    Y0, Y1 = oracle.impute(X.tolist(), D.tolist(), Y.tolist(), rows)
    assert np.max(np.abs(imp.Y0 - Y0)) <= 1e-12
    assert np.max(np.abs(imp.Y1 - Y1)) <= 1e-12


@pytest.mark.parametrize("spec,h", [(BOX, 0.2), (GAUSS, 0.05)])
def test_explicit_cate_matches_the_brute_force_value(spec, h):
    X, D, Y, W = _explicit_six()
    data = Dataset(X, D, Y)
    x = np.array([0.5, 0.5])
    got = cate_at(data, impute_potential_outcomes(data, ExplicitScheme(W)), spec, h, x)
    prof = oracle.box_profile if spec.profile == "box" else oracle.gauss_profile
    want = oracle.explicit_cate(X.tolist(), D.tolist(), Y.tolist(), W.tolist(), x.tolist(), h, prof)
    assert got == pytest.approx(want, abs=1e-12)


def test_explicit_scheme_rejects_same_arm_weight():
    X, D, Y, W = _explicit_six()
    W = W.copy()
    W[0, 2] = 0.1
    with pytest.raises(ValueError, match="same arm"):
        impute_potential_outcomes(Dataset(X, D, Y), ExplicitScheme(W))


def test_constant_surfaces_give_tau_one():
    model = dict(mu_kind="constant", mu0_value=0.0, mu1_value=1.0, noise_scale=0.0)
    data, _ = _design(**model)
    assert np.array_equal(data.Y, data.D.astype(float))
    imp = impute_potential_outcomes(data, _forest_scheme(data))
    x = data.X[0]
    assert cate_at(data, imp, BOX, 0.05, x) == pytest.approx(1.0, abs=1e-15)


def test_shift_invariance_with_zero_adjustment():
    data, _ = _design()
    sch = _forest_scheme(data)
    xs = data.X[:5]
    a = cate_batch(data, impute_potential_outcomes(data, sch), BOX, 0.05, xs)
    shifted = data.shifted(5.0)
    b = cate_batch(shifted, impute_potential_outcomes(shifted, sch), BOX, 0.05, xs)
    assert np.max(np.abs(a - b)) <= 1e-12


def test_empty_neighborhood_raises_and_batch_marks_nan():
    data, _ = _design()
    imp = impute_potential_outcomes(data, KnnScheme(2))
    far = np.full(data.d, 10.0)
    with pytest.raises(EmptyNeighborhoodError, match="increase h"):
        cate_at(data, imp, BOX, 0.01, far)
    out = cate_batch(data, imp, BOX, 0.01, np.vstack([data.X[0], far, data.X[1]]))
    assert np.isnan(out[1]) and np.isfinite(out[0]) and np.isfinite(out[2])
    assert out[0] == cate_at(data, imp, BOX, 0.01, data.X[0])


def test_cate_refuses_missing_imputations():
    data, _ = _design()
    imp = impute_potential_outcomes(data, KnnScheme(2), units=[0])
    with pytest.raises(ValueError, match="missing"):
        cate_at(data, imp, BOX, 4.0, data.X[0])


def test_knn_whole_arm_is_uniform():
    data, _ = _design(60)
    i = int(data.arm(1)[0])
    pool = data.arm(0)
    row = knn_weights(data, i, pool.size)
    assert set(row.indices.tolist()) == set(pool.tolist())
    assert np.allclose(row.weights, 1.0 / pool.size, rtol=0, atol=0)


def test_knn_one_neighbor():
    data, _ = _design(60)
    i = int(data.arm(1)[0])
    pool = data.arm(0)
    j = pool[np.argmin(np.linalg.norm(data.X[pool] - data.X[i], axis=1))]
    assert knn_weights(data, i, 1).as_dict() == {int(j): 1.0}


def test_knn_tie_goes_to_lower_index():
    X = np.array([[0.0], [1.0], [-1.0], [5.0]])
    data = Dataset(X, [1, 0, 0, 0], np.zeros(4))
    assert knn_weights(data, 0, 1).as_dict() == {1: 1.0}
    assert knn_weights(data, 0, 2).as_dict() == {1: 0.5, 2: 0.5}


def test_knn_k_too_large():
    data, _ = _design(30)
    with pytest.raises(ValueError, match="outside"):
        knn_weights(data, 0, 1000)


def test_fitted_adjustment_reproduces_constants():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(50, 2))
    D = np.arange(50) % 2
    Y = np.where(D == 1, 3.5, -1.25)
    adj = fit_adjustment(Dataset(X, D, Y), BOX, 0.05)
    q = rng.uniform(size=(20, 2))
    assert np.allclose(adj.predict(1, q), 3.5, rtol=0, atol=1e-14)
    assert np.allclose(adj.predict(0, q), -1.25, rtol=0, atol=1e-14)


def test_fitted_adjustment_far_query_is_arm_mean():
    data, _ = _design(100)
    adj = fit_adjustment(data, BOX, 0.01)
    far = np.full((1, data.d), 50.0)
    assert adj.predict(1, far)[0] == pytest.approx(data.Y[data.D == 1].mean(), abs=1e-14)


def test_fitted_adjustment_tracks_smooth_truth():
    data, truth = _design(20000, noise_scale=0.0)
    h_mu = 1e-4
    adj = fit_adjustment(data, BOX, h_mu)
    idx = data.arm(0)[:200]
    err = np.abs(adj.predict(0, data.X[idx]) - truth.mu0(data.X[idx]))
    # Lipschitz constant of sin(<w0, c>) is at most 1; kernel radius sqrt(h_mu)
    assert err.max() <= 10 * math.sqrt(h_mu)


def test_fitted_residuals_are_leave_one_out():
    X = np.array([[0.0], [0.01], [0.02], [5.0]])
    data = Dataset(X, [0, 0, 0, 1], [1.0, 2.0, 6.0, 0.0])
    adj = fit_adjustment(data, BOX, 1.0)
    # unit 2 is fitted from units 0 and 1 only
    assert adj.residuals(data, 0, [2])[0] == pytest.approx(6.0 - 1.5)
    assert np.allclose(adj.residuals(data, 0), [1 - 4, 2 - 3.5, 6 - 1.5])


def test_kernel_locality():
    X, D, Y, W = _explicit_six()
    X = X.copy()
    X[5] = [40.0, 40.0]
    W = W.copy()
    # nobody draws on unit 5, and it is far outside the kernel at x
    for i in range(5):
        if W[i, 5]:
            W[i, 5] = 0.0
            W[i] /= W[i].sum()
    x = np.array([0.5, 0.5])
    full = cate_at(Dataset(X, D, Y), impute_potential_outcomes(Dataset(X, D, Y), ExplicitScheme(W)),
                   BOX, 0.5, x)
    sub = Dataset(X[:5], D[:5], Y[:5])
    cut = cate_at(sub, impute_potential_outcomes(sub, ExplicitScheme(W[:5, :5])), BOX, 0.5, x)
    assert full == cut


def test_oracle_zero_noise_matches_the_kernel_average_of_tau():
    data, truth = _design(800, noise_scale=0.0)
    imp = impute_potential_outcomes(data, KnnScheme(5), OracleAdjustment(truth))
    x = data.X[3]
    h = 0.02
    k = BOX.K_h(h, data.X, x)
    tau_bar = np.sum(k * truth.tau(data.X)) / np.sum(k)
    assert abs(cate_at(data, imp, BOX, h, x) - tau_bar) <= 1e-12
