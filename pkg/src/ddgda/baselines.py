"""Forgetting baselines: rolling retrain (rr) and gradual forgetting (gf_lin, gf_exp)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .proxy import SampleWeights
from .stream import AdaptationTask

SCHEMES = ("rr", "gf_lin", "gf_exp")


@dataclass(frozen=True)
class ForgettingSpec:
    scheme: str = "rr"
    lin_slope: float = 0.0
    exp_rate: float = 0.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown forgetting scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.lin_slope < 0 or self.exp_rate < 0:
            raise ValueError("decay rates must be >= 0")

    def check_window(self, memory_k: int) -> None:
        if self.scheme == "gf_lin" and self.lin_slope * (memory_k - 1) > 1:
            raise ValueError(
                f"lin_slope {self.lin_slope} gives negative weights over a {memory_k}-tick memory"
            )


def raw_weights(spec: ForgettingSpec, ages: np.ndarray) -> np.ndarray:
    ages = np.asarray(ages, dtype=float)
    if spec.scheme == "rr":
        return np.ones_like(ages)
    if spec.scheme == "gf_lin":
        w = 1.0 - spec.lin_slope * ages
        if np.any(w < 0):
            raise ValueError(f"negative linear weight: lin_slope {spec.lin_slope} at age {ages.max():g}")
        return w
    return np.exp(-spec.exp_rate * ages)


def baseline_weights(spec: ForgettingSpec, task: AdaptationTask) -> SampleWeights:
    ts = task.train_window.timestamps
    if ts.size == 0:
        raise ValueError(f"task {task.task_time}: empty training window")
    if spec.scheme == "rr":
        return SampleWeights.uniform(ts.size)
    return SampleWeights.normalized(raw_weights(spec, ts[-1] - ts))
