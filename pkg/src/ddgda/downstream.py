"""Forecasting models trained on a weighted training window."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .proxy import DesignMatrix, SampleWeights, solve_wls

DOWNSTREAM_KINDS = ("linear", "mlp_small")


class DownstreamError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearForecaster:
    phi: np.ndarray
    bias: bool

    def predict(self, X) -> np.ndarray:
        return DesignMatrix.with_bias(X, np.zeros(len(X)), self.bias).X @ self.phi


@dataclass(frozen=True)
class MLPForecaster:
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    def predict(self, X) -> np.ndarray:
        return np.tanh(np.asarray(X) @ self.W1 + self.b1) @ self.w2 + self.b2


def fit_linear(X, y, weights: SampleWeights, ridge_lambda: float = 1e-6, bias: bool = True) -> LinearForecaster:
    sol = solve_wls(DesignMatrix.with_bias(X, y, bias), weights, ridge_lambda)
    return LinearForecaster(sol.phi, bias)


def fit_mlp(
    X,
    y,
    weights: SampleWeights,
    hidden: int = 16,
    steps: int = 500,
    lr: float = 0.05,
    seed: int = 0,
) -> MLPForecaster:
    """One tanh hidden layer, full-batch gradient descent on the weighted squared loss."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    q = weights.q / weights.q.sum()
    rng = np.random.default_rng(seed)
    n, m = X.shape
    W1 = rng.standard_normal((m, hidden)) / np.sqrt(m)
    b1 = np.zeros(hidden)
    w2 = rng.standard_normal(hidden) / np.sqrt(hidden)
    b2 = float(q @ y)
    for _ in range(steps):
        H = np.tanh(X @ W1 + b1)
        r = q * (H @ w2 + b2 - y)
        gw2 = H.T @ r
        gb2 = r.sum()
        dH = np.outer(r, w2) * (1.0 - H * H)
        gW1 = X.T @ dH
        gb1 = dH.sum(axis=0)
        W1 -= lr * gW1
        b1 -= lr * gb1
        w2 -= lr * gw2
        b2 -= lr * gb2
    model = MLPForecaster(W1, b1, w2, b2)
    if not all(np.all(np.isfinite(a)) for a in (W1, b1, w2)) or not np.isfinite(b2):
        raise DownstreamError("mlp_small training diverged")
    return model


def fit_downstream(kind: str, X, y, weights: SampleWeights, *, ridge_lambda=1e-6, bias=True, hidden=16, seed=0):
    if kind == "linear":
        return fit_linear(X, y, weights, ridge_lambda, bias)
    if kind == "mlp_small":
        return fit_mlp(X, y, weights, hidden=hidden, seed=seed)
    raise ValueError(f"unknown downstream model {kind!r}; choose from {DOWNSTREAM_KINDS}")
