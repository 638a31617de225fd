"""Closed-form weighted ridge regression and its gradient w.r.t. sample weights.

Solves ``phi = (X^T Q X + lam I)^{-1} X^T Q y`` with ``Q = diag(q)``.  Because
``phi`` is an explicit function of ``q``, an outer loss that depends on ``phi``
can be differentiated w.r.t. every ``q_i`` by one extra triangular solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

RESIDUAL_TOL = 1e-8
MAX_PIVOT_RATIO = 1e-6


class SingularSystemError(np.linalg.LinAlgError):
    pass


class StaleSolutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.array(self.X, dtype=float))
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
            raise ValueError(f"design has {X.shape[0]} rows but {y.shape[0]} labels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("design matrix and labels must be finite")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def with_bias(cls, X, y, bias: bool = True) -> "DesignMatrix":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if bias:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        return cls(X, y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SampleWeights:
    q: np.ndarray
    normalization: str = "probability"

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        if self.normalization not in ("probability", "raw"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if not np.all(np.isfinite(q)) or np.any(q < 0):
            raise ValueError("sample weights must be finite and non-negative")
        if self.normalization == "probability" and abs(q.sum() - 1.0) > 1e-9:
            raise ValueError(f"probability weights sum to {q.sum()!r}, not 1")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def uniform(cls, n: int) -> "SampleWeights":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def normalized(cls, raw) -> "SampleWeights":
        raw = np.asarray(raw, dtype=float)
        s = raw.sum()
        if not s > 0:
            raise ValueError("raw weights sum to zero")
        return cls(raw / s)


@dataclass(frozen=True)
class ProxySolution:
    phi: np.ndarray
    gram_factor: tuple = field(repr=False)
    ridge_lambda: float
    data: DesignMatrix = field(repr=False)
    weights: SampleWeights = field(repr=False)

    def check_current(self, data: DesignMatrix, weights: SampleWeights) -> None:
        # inputs are read-only arrays, so identity or equality means nothing moved
        same_data = data is self.data or (
            np.array_equal(data.X, self.data.X) and np.array_equal(data.y, self.data.y)
        )
        same_q = weights is self.weights or np.array_equal(weights.q, self.weights.q)
        if not (same_data and same_q):
            raise StaleSolutionError("stale factorization: data or weights changed since solve_wls")


def gram(data: DesignMatrix, weights: SampleWeights, ridge_lambda: float) -> np.ndarray:
    X, q = data.X, weights.q
    return (X * q[:, None]).T @ X + ridge_lambda * np.eye(data.m)


def solve_wls(data: DesignMatrix, weights: SampleWeights, ridge_lambda: float = 1e-6) -> ProxySolution:
    """Minimize ``0.5 * sum q_i (x_i phi - y_i)^2 + 0.5 * lam * |phi|^2``."""
    if weights.q.shape[0] != data.n:
        raise ValueError(f"{weights.q.shape[0]} weights for {data.n} samples")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    A = gram(data, weights, ridge_lambda)
    b = data.X.T @ (weights.q * data.y)
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=False)
        phi = linalg.cho_solve(factor, b, check_finite=False)
    except linalg.LinAlgError:
        factor = None
    if factor is not None:
        # squared ratio of Cholesky pivots bounds cond(A) from below;
        # beyond 1e12 the solve is noise
        d = np.abs(np.diag(factor[0]))
        if d.min() <= d.max() * MAX_PIVOT_RATIO:
            factor = None
    if factor is None or not np.all(np.isfinite(phi)):
        rank = np.linalg.matrix_rank(A)
        raise SingularSystemError(
            f"singular normal equations: X^T Q X + lam I has rank {rank} < {data.m}"
        )
    res = np.linalg.norm(A @ phi - b) / max(1.0, np.linalg.norm(b))
    if res > RESIDUAL_TOL:
        rank = np.linalg.matrix_rank(A)
        raise SingularSystemError(
            f"singular normal equations: relative residual {res:.3g} (rank {rank} of {data.m})"
        )
    return ProxySolution(phi, factor, float(ridge_lambda), data, weights)


def wls_loss(data: DesignMatrix, weights: SampleWeights, phi) -> float:
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if phi.shape[0] != data.m or weights.q.shape[0] != data.n:
        raise ValueError(
            f"dimension mismatch: X is {data.n}x{data.m}, phi has {phi.shape[0]}, q has {weights.q.shape[0]}"
        )
    r = data.X @ phi - data.y
    return 0.5 * float(weights.q @ (r * r))


def hypergradient_q(
    data: DesignMatrix,
    weights: SampleWeights,
    solution: ProxySolution,
    upper_grad_phi,
) -> np.ndarray:
    """Gradient of an outer loss w.r.t. ``q`` given its gradient w.r.t. ``phi``.

    Differentiating ``A phi = X^T Q y`` in ``q_i`` gives
    ``d phi / d q_i = A^{-1} x_i (y_i - x_i phi)``, so with ``v = A^{-1} g``
    the result is ``(X v) * residual``.
    """
    g = np.asarray(upper_grad_phi, dtype=float).reshape(-1)
    if g.shape[0] != data.m:
        raise ValueError(f"upper gradient has {g.shape[0]} entries, expected {data.m}")
    solution.check_current(data, weights)
    v = linalg.cho_solve(solution.gram_factor, g, check_finite=False)
    return (data.X @ v) * (data.y - data.X @ solution.phi)
