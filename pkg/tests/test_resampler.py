import numpy as np
import pytest

from ddgda.drift import AbruptDriftSpec, GradualDriftSpec, generate_abrupt, generate_gradual
from ddgda.resampler import (
    ResamplerModel,
    SimilarityFeatures,
    UnderdeterminedPeriodError,
    compute_weights,
    extract_features,
    logits,
    period_ids,
    weight_jacobian,
    weight_vjp,
)
from ddgda.stream import TimeIndexedStream, generate_tasks


def random_feats(rng, n=12, lags=2):
    return SimilarityFeatures(rng.standard_normal((n, lags + 1)), np.zeros(n, dtype=int))


def task_at(stream, k, tau, interval, t):
    return next(task for task in generate_tasks(stream, k, tau, interval) if task.task_time == t)


def test_zero_theta_gives_uniform():
    rng = np.random.default_rng(0)
    q = compute_weights(ResamplerModel.zeros(2), random_feats(rng)).q
    np.testing.assert_allclose(q, 1 / 12, atol=1e-15)


def test_high_temperature_approaches_uniform():
    rng = np.random.default_rng(1)
    feats = random_feats(rng, n=30)
    model = ResamplerModel(rng.standard_normal(3) * 5, 1.0, temperature=1e6)
    q = compute_weights(model, feats).q
    assert np.max(np.abs(q - 1 / 30)) < 1e-3


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(2)
    for _ in range(20):
        feats = random_feats(rng, n=int(rng.integers(1, 40)))
        q = compute_weights(ResamplerModel(rng.standard_normal(3) * 10, rng.standard_normal()), feats).q
        assert abs(q.sum() - 1) <= 1e-12 and np.all(q >= 0)


def test_permutation_equivariance():
    rng = np.random.default_rng(3)
    feats = random_feats(rng)
    model = ResamplerModel(rng.standard_normal(3))
    perm = rng.permutation(feats.n)
    q = compute_weights(model, feats).q
    qp = compute_weights(model, SimilarityFeatures(feats.matrix[perm], feats.period_index[perm])).q
    np.testing.assert_allclose(qp, q[perm], rtol=1e-14)


def test_non_finite_logits_rejected():
    feats = SimilarityFeatures(np.array([[1e308], [-1e308]]), np.zeros(2, dtype=int))
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError, match="non-finite"):
        logits(ResamplerModel([10.0]), feats)


def test_feature_width_mismatch():
    with pytest.raises(ValueError, match="columns"):
        compute_weights(ResamplerModel.zeros(3), random_feats(np.random.default_rng(0), lags=1))


def test_jacobian_columns_sum_to_zero():
    rng = np.random.default_rng(4)
    J = weight_jacobian(ResamplerModel(rng.standard_normal(3), 0.3, 0.7), random_feats(rng))
    np.testing.assert_allclose(J.sum(axis=0), 0.0, atol=1e-15)
    # the bias shifts every logit equally, so it cannot move q
    np.testing.assert_allclose(J[:, -1], 0.0, atol=1e-15)


def test_jacobian_identical_rows_for_identical_features():
    rng = np.random.default_rng(5)
    m = rng.standard_normal((8, 3))
    m[5] = m[2]
    J = weight_jacobian(ResamplerModel.zeros(2), SimilarityFeatures(m, np.zeros(8, dtype=int)))
    np.testing.assert_array_equal(J[2], J[5])


def test_jacobian_matches_finite_differences():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        feats = random_feats(rng, n=int(rng.integers(3, 25)))
        model = ResamplerModel(rng.standard_normal(3), rng.standard_normal(), rng.uniform(0.5, 2))
        J = weight_jacobian(model, feats)
        p = model.params
        fd = np.zeros_like(J)
        h = 1e-6
        for j in range(p.size):
            e = np.zeros_like(p)
            e[j] = h
            fd[:, j] = (compute_weights(model.with_params(p + e), feats).q
                        - compute_weights(model.with_params(p - e), feats).q) / (2 * h)
        assert np.linalg.norm(J - fd) / np.linalg.norm(J) <= 1e-6


def test_vjp_matches_explicit_jacobian():
    rng = np.random.default_rng(6)
    feats = random_feats(rng)
    model = ResamplerModel(rng.standard_normal(3), 0.2, 1.5)
    g = rng.standard_normal(feats.n)
    np.testing.assert_allclose(weight_vjp(model, feats, g), weight_jacobian(model, feats).T @ g, atol=1e-14)


# -- feature extraction ----------------------------------------------------

def test_period_ids_count_back_from_window_end():
    ts = np.arange(3, 20)  # 17 ticks, period 5: 3 complete periods plus 2 leftover ticks
    pid = period_ids(ts, 20, 5, 3)
    np.testing.assert_array_equal(pid[-5:], 0)
    np.testing.assert_array_equal(pid[-10:-5], 1)
    np.testing.assert_array_equal(pid[:7], 2)  # leftover merged into the oldest period


def test_stationary_noiseless_features_are_zero():
    stream, _ = generate_gradual(GradualDriftSpec(feature_dim=3, total_length=300, rotation_rate=0.0,
                                                  noise_std=0.0, period_length=20))
    task = task_at(stream, 100, 20, 20, 200)
    # without ridge shrinkage every period is fit exactly
    feats = extract_features(task, 20, lags=2, ridge_lambda=0.0)
    assert feats.matrix.shape == (100, 3)
    np.testing.assert_allclose(feats.matrix, 0.0, atol=1e-12)


def test_abrupt_boundary_lowers_similarity():
    stream, _ = generate_abrupt(AbruptDriftSpec(feature_dim=3, segment_lengths=(120, 120), noise_std=0.1,
                                                seed=2, period_length=20))
    task = task_at(stream, 120, 20, 60, 180)
    feats = extract_features(task, 20, lags=1)
    sim = feats.matrix
    pid = feats.period_index
    # references 0 and 1 lie in the second segment, which starts at period 2
    within = sim[pid <= 2]
    across = sim[pid >= 3]
    assert across.max() < within.min()


def test_rows_in_same_period_identical():
    stream, _ = generate_gradual(GradualDriftSpec(feature_dim=3, total_length=400, rotation_rate=0.01,
                                                  period_length=20))
    task = task_at(stream, 120, 20, 20, 200)
    feats = extract_features(task, 20, lags=2)
    for p in np.unique(feats.period_index):
        rows = feats.matrix[feats.period_index == p]
        assert np.all(rows == rows[0])


def test_features_deterministic():
    stream, _ = generate_gradual(GradualDriftSpec(feature_dim=3, total_length=400, period_length=20))
    task = task_at(stream, 120, 20, 20, 200)
    a, b = extract_features(task, 20, 2), extract_features(task, 20, 2)
    assert a.matrix.tobytes() == b.matrix.tobytes()


def test_underdetermined_period():
    rng = np.random.default_rng(0)
    stream = TimeIndexedStream(np.arange(60), rng.standard_normal((60, 5)), rng.standard_normal(60), 4)
    task = task_at(stream, 20, 5, 5, 20)
    with pytest.raises(UnderdeterminedPeriodError, match="underdetermined period fit"):
        extract_features(task, 4, lags=1)


def test_too_few_periods():
    stream, _ = generate_gradual(GradualDriftSpec(feature_dim=2, total_length=200, period_length=20))
    task = task_at(stream, 40, 20, 20, 40)
    with pytest.raises(ValueError, match="need lags"):
        extract_features(task, 20, lags=2)
