import math

import numpy as np
import pytest

from ddgda.baselines import ForgettingSpec, baseline_weights
from ddgda.drift import GradualDriftSpec, generate_gradual
from ddgda.kl import kl_normal
from ddgda.resampler import ResamplerModel
from ddgda.stream import TimeIndexedStream, generate_tasks, split_tasks
from ddgda.trainer import (
    TrainConfig,
    TrainedResampler,
    TrainingDivergedError,
    forecast,
    forecast_with_weights,
    task_features,
    task_loss,
    train,
)


def small_task(seed, m=2, k=30, tau=5, period=10):
    """A drifting random task with n = k <= 30 training samples and m <= 4 features."""
    rng = np.random.default_rng(seed)
    T = k + tau
    X = rng.standard_normal((T, m))
    w = rng.standard_normal(m) + np.outer(np.arange(T) / T, rng.standard_normal(m))
    y = np.einsum("ij,ij->i", X, w) + 0.3 * rng.standard_normal(T)
    stream = TimeIndexedStream(np.arange(T), X, y, period)
    return generate_tasks(stream, k, tau, 1)[0]


def gradual_split(seed=0, length=600, rate=0.005):
    stream, _ = generate_gradual(GradualDriftSpec(feature_dim=4, total_length=length, rotation_rate=rate,
                                                  noise_std=0.1, seed=seed, period_length=20))
    return split_tasks(generate_tasks(stream, 100, 20, 20), 400)


def fd_theta(model, task, cfg, h=1e-5):
    p = model.params
    g = np.zeros_like(p)
    for j in range(p.size):
        e = np.zeros_like(p)
        e[j] = h
        g[j] = (task_loss(model.with_params(p + e), task, cfg)[0]
                - task_loss(model.with_params(p - e), task, cfg)[0]) / (2 * h)
    return g


# -- task_loss ---------------------------------------------------------------

def test_stationary_noiseless_loss_is_zero():
    stream, _ = generate_gradual(GradualDriftSpec(feature_dim=3, total_length=200, rotation_rate=0.0,
                                                  noise_std=0.0, period_length=20))
    task = generate_tasks(stream, 100, 20, 20)[0]
    cfg = TrainConfig(lags=2, ridge_lambda=0.0)
    loss, _ = task_loss(ResamplerModel.zeros(2), task, cfg)
    assert loss <= 1e-10


@pytest.mark.parametrize("path", ["closed_form", "gho"])
def test_grad_theta_matches_finite_differences(path):
    for seed in range(15):
        task = small_task(seed, m=int(np.random.default_rng(seed).integers(1, 4)))
        cfg = TrainConfig(lags=1, optimizer_path=path, gho_steps=20, ridge_lambda=1e-6)
        rng = np.random.default_rng(100 + seed)
        model = ResamplerModel(rng.standard_normal(2), rng.standard_normal(), rng.uniform(0.5, 2))
        _, g = task_loss(model, task, cfg)
        fd = fd_theta(model, task, cfg)
        assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)


def test_sigma_scales_loss_and_gradient():
    task = small_task(3)
    model = ResamplerModel([0.4, -0.2])
    l1, g1 = task_loss(model, task, TrainConfig(lags=1))
    l2, g2 = task_loss(model, task, TrainConfig(lags=1, sigma=2.0))
    assert l2 == pytest.approx(l1 / 4, rel=1e-12)
    np.testing.assert_allclose(g2, g1 / 4, rtol=1e-12)


def test_gho_converges_to_closed_form():
    task = small_task(7, m=3)
    model = ResamplerModel([0.8, -0.5], 0.0)
    closed, _ = task_loss(model, task, TrainConfig(lags=1))
    gaps = []
    for steps in (1, 10, 100, 10_000):
        loss, _ = task_loss(model, task, TrainConfig(lags=1, optimizer_path="gho", gho_steps=steps, gho_inner_lr=0.1))
        gaps.append(abs(loss - closed))
    assert gaps[-1] <= 1e-4
    assert all(a >= b for a, b in zip(gaps, gaps[1:]))


# -- kl_normal ---------------------------------------------------------------

def test_kl_examples():
    assert kl_normal(0, 1, 0, 1) == 0.0
    assert kl_normal(1, 1, 0, 1) == 0.5


def test_kl_equal_sigma_is_scaled_squared_difference():
    for sigma in (0.5, 1.0, 2.0):
        for mu1 in np.linspace(-3, 3, 13):
            for mu2 in np.linspace(-3, 3, 13):
                assert kl_normal(mu1, sigma, mu2, sigma) * 2 * sigma**2 == pytest.approx((mu1 - mu2) ** 2, abs=1e-15)


def test_kl_general_case_closed_form():
    # log(s2/s1) + (s1^2 + d^2) / (2 s2^2) - 1/2
    assert kl_normal(0.5, 2.0, -1.0, 0.5) == pytest.approx(math.log(0.25) + (4 + 2.25) / 0.5 - 0.5, rel=1e-14)


@pytest.mark.parametrize("args", [(0.0, 1.0, 1.0, 1.0), (1.0, 0.5, -0.5, 2.0), (-2.0, 1.5, 0.0, 0.7)])
def test_kl_monte_carlo(args):
    mu1, s1, mu2, s2 = args
    z = np.random.default_rng(0).normal(mu1, s1, 1_000_000)
    log_ratio = (np.log(s2 / s1) - 0.5 * ((z - mu1) / s1) ** 2 + 0.5 * ((z - mu2) / s2) ** 2)
    est, se = log_ratio.mean(), log_ratio.std(ddof=1) / math.sqrt(z.size)
    assert abs(est - kl_normal(*args)) <= 3 * se


def test_kl_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        kl_normal(0, 0, 0, 1)
    with pytest.raises(ValueError):
        kl_normal(0, 1, 0, -1)


# -- train -------------------------------------------------------------------

def test_zero_learning_rate_is_noop():
    split = gradual_split()
    init = ResamplerModel([0.3, -0.1, 0.2], 0.5)
    out = train(split.train_tasks, TrainConfig(lags=2, learning_rate=0.0, epochs=1), init=init)
    np.testing.assert_array_equal(out.model.params, init.params)
    assert len(out.loss_history) == 1


def test_training_reduces_loss():
    split = gradual_split()
    out = train(split.train_tasks, TrainConfig(lags=2, learning_rate=5.0, epochs=30))
    assert len(out.loss_history) == 30
    assert out.loss_history[-1] < out.loss_history[0]


def test_training_is_deterministic():
    split = gradual_split()
    cfg = TrainConfig(lags=2, learning_rate=1.0, epochs=5, batch=3, seed=4)
    a, b = train(split.train_tasks, cfg), train(split.train_tasks, cfg)
    assert a.model.params.tobytes() == b.model.params.tobytes()
    assert a.loss_history == b.loss_history


def test_divergence_names_epoch_and_task():
    split = gradual_split()
    with pytest.raises(TrainingDivergedError, match=r"epoch 0, task \d+"):
        with np.errstate(all="ignore"):
            train(split.train_tasks, TrainConfig(lags=2, learning_rate=1e308, epochs=2))


def test_empty_task_list():
    with pytest.raises(ValueError, match="no training tasks"):
        train([], TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(optimizer_path="newton")
    with pytest.raises(ValueError):
        TrainConfig(temperature=0)


def test_json_round_trip(tmp_path):
    split = gradual_split()
    out = train(split.train_tasks, TrainConfig(lags=2, learning_rate=1.0, epochs=2))
    out.save(tmp_path / "m.json")
    back = TrainedResampler.from_json((tmp_path / "m.json").read_text())
    np.testing.assert_array_equal(back.model.params, out.model.params)
    assert back.config_echo == out.config_echo
    assert back.loss_history == out.loss_history
    assert back.period_length == 20


# -- forecast ----------------------------------------------------------------

def test_zero_theta_forecast_equals_rolling_retrain():
    split = gradual_split()
    cfg = TrainConfig(lags=2)
    model = ResamplerModel.zeros(2)
    for task in split.test_tasks:
        a = forecast(model, task, "linear", cfg)
        b = forecast_with_weights(task, baseline_weights(ForgettingSpec("rr"), task), "linear", cfg)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)


def test_noiseless_static_forecast_is_exact():
    stream, _ = generate_gradual(GradualDriftSpec(feature_dim=4, total_length=300, rotation_rate=0.0,
                                                  noise_std=0.0, period_length=20))
    cfg = TrainConfig(lags=2)
    model = ResamplerModel([1.0, -2.0, 0.5])
    for task in generate_tasks(stream, 100, 20, 40):
        pred = forecast(model, task, "linear", cfg)
        assert pred.shape == (20,)
        assert np.mean((pred - task.test_window.y) ** 2) <= 1e-10


def test_mlp_downstream_runs():
    split = gradual_split()
    cfg = TrainConfig(lags=2)
    task = split.test_tasks[0]
    pred = forecast(ResamplerModel.zeros(2), task, "mlp_small", cfg)
    assert pred.shape == task.test_window.y.shape and np.all(np.isfinite(pred))
    # far better than predicting the label mean
    y = task.test_window.y
    assert np.mean((pred - y) ** 2) < 0.5 * np.var(y)


def test_unknown_downstream():
    split = gradual_split()
    with pytest.raises(ValueError, match="unknown downstream"):
        forecast(ResamplerModel.zeros(2), split.test_tasks[0], "xgboost", TrainConfig(lags=2))


def test_features_independent_of_theta():
    split = gradual_split()
    cfg = TrainConfig(lags=2)
    task = split.train_tasks[0]
    a = task_features(task, cfg).matrix
    task_loss(ResamplerModel([5.0, 1.0, -3.0]), task, cfg)
    assert a.tobytes() == task_features(task, cfg).matrix.tobytes()
