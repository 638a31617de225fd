"""Bi-level training of the resampler and forecasting with it.

Upper level: squared error of the proxy on each task's test window.  Lower
level: the proxy is a weighted linear regression fit on the training window
with the resampler's probabilities as weights.  Two ways to get ``d loss /
d q``:

``closed_form``
    exact implicit gradient through the normal equations.
``gho``
    ``gho_steps`` of gradient descent on the weighted loss from ``phi = 0``,
    differentiated by reverse-mode through the unrolled iterations.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .downstream import DownstreamError, fit_downstream
from .kl import kl_normal  # noqa: F401  re-exported
from .proxy import DesignMatrix, SampleWeights, hypergradient_q, solve_wls
from .resampler import (
    ResamplerModel,
    SimilarityFeatures,
    compute_weights,
    extract_features,
    weight_vjp,
)
from .stream import AdaptationTask

log = logging.getLogger(__name__)

OPTIMIZER_PATHS = ("closed_form", "gho")


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 30
    batch: int = 8
    sigma: float = 1.0
    ridge_lambda: float = 1e-6
    seed: int = 0
    optimizer_path: str = "closed_form"
    gho_steps: int = 100
    gho_inner_lr: float = 0.5
    lags: int = 4
    temperature: float = 1.0
    bias: bool = True
    mlp_hidden: int = 16

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.epochs < 1 or self.batch < 1 or self.gho_steps < 1 or self.lags < 0:
            raise ValueError("epochs, batch and gho_steps must be >= 1; lags >= 0")
        for name in ("sigma", "gho_inner_lr", "temperature"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be >= 0")
        if self.optimizer_path not in OPTIMIZER_PATHS:
            raise ValueError(f"optimizer_path must be one of {OPTIMIZER_PATHS}")


@dataclass
class TrainedResampler:
    model: ResamplerModel
    loss_history: list[float]
    config_echo: TrainConfig
    period_length: int = 1

    def to_json(self) -> str:
        return json.dumps(
            {
                "params": self.model.params.tolist(),
                "temperature": self.model.temperature,
                "lags": self.model.lags,
                "period_length": self.period_length,
                "loss_history": self.loss_history,
                "config_echo": asdict(self.config_echo),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "TrainedResampler":
        d = json.loads(text)
        params = np.asarray(d["params"], dtype=float)
        if params.shape != (d["lags"] + 2,):
            raise ValueError("parameter vector length does not match lags")
        model = ResamplerModel(params[:-1], float(params[-1]), d["temperature"])
        return cls(model, list(d.get("loss_history", [])), TrainConfig(**d["config_echo"]), d["period_length"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def task_features(task: AdaptationTask, cfg: TrainConfig) -> SimilarityFeatures:
    return extract_features(task, task.stream.period_length, cfg.lags, cfg.ridge_lambda, cfg.bias)


def _designs(task: AdaptationTask, cfg: TrainConfig) -> tuple[DesignMatrix, DesignMatrix]:
    tr, te = task.train_window, task.test_window
    if len(tr) == 0 or len(te) == 0:
        raise ValueError(f"task {task.task_time}: empty window")
    return DesignMatrix.with_bias(tr.X, tr.y, cfg.bias), DesignMatrix.with_bias(te.X, te.y, cfg.bias)


def gho_unrolled(train: DesignMatrix, q: np.ndarray, steps: int, lr: float, ridge_lambda: float) -> np.ndarray:
    """Iterates ``phi_0 = 0, ..., phi_steps`` of GD on the weighted ridge loss."""
    X, y = train.X, train.y
    Xq = X * q[:, None]
    A = Xq.T @ X + ridge_lambda * np.eye(train.m)
    b = Xq.T @ y
    phis = np.zeros((steps + 1, train.m))
    phi = phis[0]
    for s in range(steps):
        phi = phi - lr * (A @ phi - b)
        phis[s + 1] = phi
    return phis


def gho_grad_q(train: DesignMatrix, q: np.ndarray, phis: np.ndarray, lr: float, ridge_lambda: float, g: np.ndarray):
    """Reverse pass through :func:`gho_unrolled` for an upper gradient ``g`` on the last iterate."""
    X, y = train.X, train.y
    Xq = X * q[:, None]
    A = Xq.T @ X + ridge_lambda * np.eye(train.m)
    steps = phis.shape[0] - 1
    # phi_{s+1} = phi_s - lr * (X^T Q (X phi_s - y) + lam phi_s)
    # d phi_{s+1} / d q_i = lr * x_i (y_i - x_i phi_s)
    # so grad_q accumulates lr * (X a_{s+1}) * (y - X phi_s) over s
    a = g.copy()
    Xa = np.empty((steps, train.n))
    for s in range(steps - 1, -1, -1):
        Xa[s] = X @ a
        a = a - lr * (A @ a)
    resid = y[None, :] - phis[:-1] @ X.T
    return lr * np.einsum("si,si->i", Xa, resid)


def task_loss(
    model: ResamplerModel,
    task: AdaptationTask,
    cfg: TrainConfig,
    feats: SimilarityFeatures | None = None,
    designs: tuple[DesignMatrix, DesignMatrix] | None = None,
) -> tuple[float, np.ndarray]:
    """Upper-level loss ``0.5/sigma^2 * sum_test (x phi - y)^2`` and its gradient in the resampler parameters."""
    if feats is None:
        feats = task_features(task, cfg)
    train, test = designs if designs is not None else _designs(task, cfg)
    weights = compute_weights(model, feats)
    inv_var = 1.0 / cfg.sigma**2

    if cfg.optimizer_path == "closed_form":
        sol = solve_wls(train, weights, cfg.ridge_lambda)
        phi = sol.phi
    else:
        phis = gho_unrolled(train, weights.q, cfg.gho_steps, cfg.gho_inner_lr, cfg.ridge_lambda)
        phi = phis[-1]

    r = test.X @ phi - test.y
    loss = 0.5 * inv_var * float(r @ r)
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss on task {task.task_time}")
    g_phi = inv_var * (test.X.T @ r)

    if cfg.optimizer_path == "closed_form":
        g_q = hypergradient_q(train, weights, sol, g_phi)
    else:
        g_q = gho_grad_q(train, weights.q, phis, cfg.gho_inner_lr, cfg.ridge_lambda, g_phi)
    return loss, weight_vjp(model, feats, g_q, weights.q)


def train(
    tasks: list[AdaptationTask],
    cfg: TrainConfig,
    feats: list[SimilarityFeatures] | None = None,
    init: ResamplerModel | None = None,
) -> TrainedResampler:
    """Minibatch SGD on the summed task losses, starting from uniform weights."""
    if not tasks:
        raise ValueError("no training tasks")
    if feats is None:
        feats = [task_features(t, cfg) for t in tasks]
    designs = [_designs(t, cfg) for t in tasks]
    model = init if init is not None else ResamplerModel.zeros(cfg.lags, cfg.temperature)
    rng = np.random.default_rng(cfg.seed)
    params = model.params
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(tasks))
        losses = []
        for start in range(0, len(order), cfg.batch):
            batch = order[start:start + cfg.batch]
            grad = np.zeros_like(params)
            current = model.with_params(params)
            for i in batch:
                try:
                    loss, g = task_loss(current, tasks[i], cfg, feats[i], designs[i])
                except (FloatingPointError, ValueError) as exc:
                    raise TrainingDivergedError(
                        f"epoch {epoch}, task {tasks[i].task_time}: {exc}"
                    ) from exc
                losses.append(loss)
                grad += g
            params = params - cfg.learning_rate * grad / len(batch)
            if not np.all(np.isfinite(params)):
                raise TrainingDivergedError(
                    f"epoch {epoch}, task {tasks[batch[-1]].task_time}: parameters became non-finite"
                )
        history.append(float(np.mean(losses)))
        log.debug("epoch %d mean task loss %.6g", epoch, history[-1])
    return TrainedResampler(model.with_params(params), history, cfg, tasks[0].stream.period_length)


def fit_weights(model: ResamplerModel | TrainedResampler, task: AdaptationTask, cfg: TrainConfig,
                feats: SimilarityFeatures | None = None) -> SampleWeights:
    if isinstance(model, TrainedResampler):
        model = model.model
    if feats is None:
        feats = task_features(task, cfg)
    return compute_weights(model, feats)


def forecast_with_weights(task: AdaptationTask, weights: SampleWeights, downstream: str, cfg: TrainConfig) -> np.ndarray:
    tr, te = task.train_window, task.test_window
    try:
        f = fit_downstream(
            downstream, tr.X, tr.y, weights,
            ridge_lambda=cfg.ridge_lambda, bias=cfg.bias, hidden=cfg.mlp_hidden, seed=cfg.seed,
        )
    except (np.linalg.LinAlgError, DownstreamError) as exc:
        raise DownstreamError(f"task {task.task_time}: downstream {downstream} failed: {exc}") from exc
    return f.predict(te.X)


def forecast(
    model: ResamplerModel | TrainedResampler,
    task: AdaptationTask,
    downstream: str,
    cfg: TrainConfig,
    feats: SimilarityFeatures | None = None,
) -> np.ndarray:
    """Train the downstream model under the resampler's weights and predict the test window."""
    return forecast_with_weights(task, fit_weights(model, task, cfg, feats), downstream, cfg)
