"""Distribution-similarity features and the softmax resampling head.

Feature extraction splits a task's training window into periods counted back
from the window end (period 0 is the most recent).  Each period gets a linear
fit; period ``P`` is compared to reference period ``R`` (lags ``0..lags``) by
the KL divergence between Gaussian fits of

* the residuals of ``P`` under ``R``'s model, and
* the leave-one-out residuals of ``R`` under its own model.

The feature is ``-KL``, so 0 means "indistinguishable from the reference".
Every sample inherits its period's feature row.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import softmax

from .proxy import DesignMatrix, SampleWeights, solve_wls
from .stream import AdaptationTask

VAR_FLOOR = 1e-12


class UnderdeterminedPeriodError(ValueError):
    pass


@dataclass(frozen=True)
class SimilarityFeatures:
    matrix: np.ndarray
    period_index: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class ResamplerModel:
    weights: np.ndarray
    bias: float = 0.0
    temperature: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ValueError("resampler parameters must be finite")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, lags: int, temperature: float = 1.0) -> "ResamplerModel":
        return cls(np.zeros(lags + 1), 0.0, temperature)

    @property
    def lags(self) -> int:
        return self.weights.shape[0] - 1

    @property
    def params(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def with_params(self, params) -> "ResamplerModel":
        params = np.asarray(params, dtype=float)
        if params.shape != (self.lags + 2,):
            raise ValueError(f"expected {self.lags + 2} parameters, got {params.shape}")
        return replace(self, weights=params[:-1].copy(), bias=float(params[-1]))


def _gauss_kl(mu1, var1, mu2, var2):
    return 0.5 * (np.log(var2 / var1) + (var1 + (mu1 - mu2) ** 2) / var2 - 1.0)


def period_ids(timestamps: np.ndarray, window_end: int, period_length: int, n_periods: int) -> np.ndarray:
    """Period number of each timestamp, 0 = most recent.

    A partial period left over at the window start is merged into the oldest
    complete one.
    """
    p = (window_end - 1 - np.asarray(timestamps)) // period_length
    return np.minimum(p, n_periods - 1)


def extract_features(
    task: AdaptationTask,
    period_length: int,
    lags: int,
    ridge_lambda: float = 1e-6,
    bias: bool = True,
) -> SimilarityFeatures:
    win = task.train_window
    ts = win.timestamps
    n_periods = int((task.task_time - ts[0]) // period_length) if len(win) else 0
    if n_periods < lags + 1:
        raise ValueError(
            f"task {task.task_time}: train window has {n_periods} complete periods, need lags+1 = {lags + 1}"
        )
    pid = period_ids(ts, task.task_time, period_length, n_periods)
    data = DesignMatrix.with_bias(win.X, win.y, bias)
    members = [np.flatnonzero(pid == p) for p in range(n_periods)]
    for p, idx in enumerate(members):
        if idx.size < data.m:
            raise UnderdeterminedPeriodError(
                f"underdetermined period fit: period {p} of task {task.task_time} has "
                f"{idx.size} samples for {data.m} coefficients"
            )
    # fits are only needed for the reference periods
    coefs = []
    loo = []
    for j in range(lags + 1):
        idx = members[j]
        sub = DesignMatrix(data.X[idx], data.y[idx])
        sol = solve_wls(sub, SampleWeights.uniform(idx.size), ridge_lambda)
        coefs.append(sol.phi)
        # leave-one-out residuals e_i / (1 - h_ii) keep the reference's own
        # residual spread on the same out-of-sample footing as other periods
        h = np.einsum("ij,ji->i", sub.X, cho_solve(sol.gram_factor, sub.X.T)) / idx.size
        loo.append((sub.y - sub.X @ sol.phi) / (1.0 - h))
    coefs = np.stack(coefs, axis=1)  # m x (lags+1)
    resid = data.y[:, None] - data.X @ coefs  # n x (lags+1)
    for j in range(lags + 1):
        resid[members[j], j] = loo[j]

    counts = np.bincount(pid, minlength=n_periods).astype(float)
    mu = np.stack([np.bincount(pid, weights=resid[:, j], minlength=n_periods) for j in range(lags + 1)], axis=1)
    mu /= counts[:, None]
    sq = np.stack([np.bincount(pid, weights=resid[:, j] ** 2, minlength=n_periods) for j in range(lags + 1)], axis=1)
    var = np.maximum(sq / counts[:, None] - mu**2, 0.0) + VAR_FLOOR

    ref = np.arange(lags + 1)
    sim = -_gauss_kl(mu, var, mu[ref, ref][None, :], var[ref, ref][None, :])
    return SimilarityFeatures(sim[pid], pid)


def logits(model: ResamplerModel, feats: SimilarityFeatures) -> np.ndarray:
    if feats.matrix.shape[1] != model.lags + 1:
        raise ValueError(f"features have {feats.matrix.shape[1]} columns, model expects {model.lags + 1}")
    z = (feats.matrix @ model.weights + model.bias) / model.temperature
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite resampling logits")
    return z


def compute_weights(model: ResamplerModel, feats: SimilarityFeatures) -> SampleWeights:
    # softmax already sums to 1 within rounding; renormalizing would break
    # bitwise agreement with uniform weights at theta = 0
    return SampleWeights(softmax(logits(model, feats)))


def weight_jacobian(model: ResamplerModel, feats: SimilarityFeatures) -> np.ndarray:
    """``dq / d(weights, bias)``, shape ``n x (lags + 2)``."""
    q = compute_weights(model, feats).q
    design = np.hstack([feats.matrix, np.ones((feats.n, 1))]) / model.temperature
    return q[:, None] * (design - q @ design)


def weight_vjp(model: ResamplerModel, feats: SimilarityFeatures, grad_q: np.ndarray, q=None) -> np.ndarray:
    """``J^T grad_q`` without forming the Jacobian; pass ``q`` to skip the forward pass."""
    if q is None:
        q = compute_weights(model, feats).q
    s = q * (grad_q - q @ grad_q)
    return np.append(feats.matrix.T @ s, s.sum()) / model.temperature
