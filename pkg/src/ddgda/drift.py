"""Synthetic linear-regression streams with known concept trajectories.

Both generators return ``(stream, weights)`` where ``weights[i]`` is the true
coefficient vector that produced sample ``i``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .stream import TimeIndexedStream


@dataclass(frozen=True)
class GradualDriftSpec:
    """Unit-norm concept rotating at ``rotation_rate`` radians per tick.

    The rotation happens in a random 2-D plane of R^m fixed by ``seed``.
    """

    feature_dim: int = 10
    total_length: int = 2000
    rotation_rate: float = 0.005
    noise_std: float = 0.1
    seed: int = 0
    period_length: int = 20

    def __post_init__(self):
        if self.feature_dim < 1 or self.total_length < 1:
            raise ValueError("feature_dim and total_length must be >= 1")
        if not np.isfinite(self.rotation_rate):
            raise ValueError("rotation_rate must be finite")
        if not self.noise_std >= 0:
            raise ValueError("noise_std must be >= 0")
        if self.feature_dim < 2 and self.rotation_rate != 0:
            raise ValueError("rotation undefined for feature_dim < 2")


@dataclass(frozen=True)
class AbruptDriftSpec:
    feature_dim: int = 10
    segment_lengths: tuple[int, ...] = field(default=(200,) * 10)
    noise_std: float = 1.0
    seed: int = 0
    period_length: int = 20

    def __post_init__(self):
        if len(self.segment_lengths) == 0:
            raise ValueError("no segments")
        if any(n < 1 for n in self.segment_lengths):
            raise ValueError("segment lengths must be >= 1")
        if not self.noise_std >= 0:
            raise ValueError("noise_std must be >= 0")


class GradualPath:
    """W(t) = cos(r t) u + sin(r t) v for orthonormal u, v."""

    def __init__(self, u: np.ndarray, v: np.ndarray, rate: float):
        self.u, self.v, self.rate = u, v, rate

    def __call__(self, t) -> np.ndarray:
        a = self.rate * np.asarray(t, dtype=float)
        return np.cos(a)[..., None] * self.u + np.sin(a)[..., None] * self.v


def _unit(rng: np.random.Generator, m: int) -> np.ndarray:
    w = rng.standard_normal(m)
    return w / np.linalg.norm(w)


def gradual_path(spec: GradualDriftSpec) -> GradualPath:
    rng = np.random.default_rng([spec.seed, 0])
    m = spec.feature_dim
    u = _unit(rng, m)
    if m == 1:
        return GradualPath(u, np.zeros(1), 0.0)
    v = rng.standard_normal(m)
    v -= (v @ u) * u
    v /= np.linalg.norm(v)
    return GradualPath(u, v, spec.rotation_rate)


def generate_gradual(spec: GradualDriftSpec) -> tuple[TimeIndexedStream, np.ndarray]:
    path = gradual_path(spec)
    rng = np.random.default_rng([spec.seed, 1])
    T, m = spec.total_length, spec.feature_dim
    t = np.arange(T)
    W = path(t)
    X = rng.standard_normal((T, m))
    eps = rng.standard_normal(T) * spec.noise_std
    y = np.einsum("ij,ij->i", X, W) + eps
    return TimeIndexedStream(t, X, y, period_length=spec.period_length), W


def generate_abrupt(spec: AbruptDriftSpec) -> tuple[TimeIndexedStream, np.ndarray]:
    """Piecewise-constant concept: an independent unit-norm W per segment."""
    rng_w = np.random.default_rng([spec.seed, 0])
    rng = np.random.default_rng([spec.seed, 1])
    m = spec.feature_dim
    seg_w = np.stack([_unit(rng_w, m) for _ in spec.segment_lengths])
    W = np.repeat(seg_w, spec.segment_lengths, axis=0)
    T = W.shape[0]
    X = rng.standard_normal((T, m))
    eps = rng.standard_normal(T) * spec.noise_std
    y = np.einsum("ij,ij->i", X, W) + eps
    return TimeIndexedStream(np.arange(T), X, y, period_length=spec.period_length), W


def write_oracle_csv(timestamps: np.ndarray, W: np.ndarray, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"] + [f"w{j}" for j in range(W.shape[1])])
        for t, row in zip(timestamps, W):
            w.writerow([int(t)] + [repr(float(v)) for v in row])
