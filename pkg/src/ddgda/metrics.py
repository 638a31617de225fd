"""Regression and rank-correlation metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float).reshape(-1)
    yhat = np.asarray(yhat, dtype=float).reshape(-1)
    if y.shape != yhat.shape:
        raise MetricError(f"length mismatch: {y.shape[0]} labels vs {yhat.shape[0]} predictions")
    if y.size == 0:
        raise MetricError("empty input")
    return y, yhat


def mse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean((y - yhat) ** 2))


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def rmse(y, yhat) -> float:
    return math.sqrt(mse(y, yhat))


def nmae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    denom = np.sum(np.abs(y))
    if denom == 0:
        raise MetricError("zero normalizer: sum |y| = 0")
    return float(np.sum(np.abs(y - yhat)) / denom)


def nrmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    denom = np.mean(np.abs(y))
    if denom == 0:
        raise MetricError("zero normalizer: mean |y| = 0")
    return rmse(y, yhat) / float(denom)


def persistence_rmse(y, y_prev=None) -> float:
    """RMSE of the lag-1 persistence forecast ``yhat_t = y_{t-1}``.

    Without ``y_prev`` the first sample has no forecast and is dropped.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y_prev is None:
        return rmse(y[1:], y[:-1])
    return rmse(y, y_prev)


def skill(rmse_model: float, rmse_persistence: float) -> float:
    if not rmse_persistence > 0:
        raise MetricError("persistence RMSE must be > 0")
    return 1.0 - rmse_model / rmse_persistence


def ic(yhat, y) -> float:
    """Rank correlation between predictions and outcomes (average ranks for ties)."""
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise MetricError("undefined rank correlation: need at least 2 samples")
    ra, rb = rankdata(yhat), rankdata(y)
    if np.all(ra == ra[0]) or np.all(rb == rb[0]):
        raise MetricError("undefined rank correlation: constant input")
    return float(np.corrcoef(ra, rb)[0, 1])


def icir(ic_sequence) -> float:
    s = np.asarray(ic_sequence, dtype=float)
    if s.size < 2:
        raise MetricError("undefined ICIR: need at least 2 periods")
    # a constant sequence can still give a rounding-level std from the mean
    sd = s.std(ddof=1)
    if np.all(s == s[0]) or sd == 0:
        raise MetricError("undefined ICIR: zero standard deviation")
    return float(s.mean() / sd)


METRICS = ("mse", "mae", "rmse", "nmae", "nrmse", "skill", "ic", "icir")


def evaluate(groups, metric_names) -> dict[str, float]:
    """Metrics over evaluation groups ``(y, yhat, y_prev)``, one group per test task.

    Pointwise metrics pool all samples; ``ic`` is the mean per-group IC and
    ``icir`` its mean/std ratio.
    """
    unknown = [m for m in metric_names if m not in METRICS]
    if unknown:
        raise MetricError(f"unknown metrics {unknown}; choose from {METRICS}")
    y = np.concatenate([g[0] for g in groups])
    yhat = np.concatenate([g[1] for g in groups])
    out = {}
    for name in metric_names:
        if name == "skill":
            y_prev = np.concatenate([g[2] for g in groups])
            out[name] = skill(rmse(y, yhat), persistence_rmse(y, y_prev))
        elif name in ("ic", "icir"):
            seq = [ic(g[1], g[0]) for g in groups]
            out[name] = float(np.mean(seq)) if name == "ic" else icir(seq)
        else:
            out[name] = globals()[name](y, yhat)
    return out


@dataclass
class MetricReport:
    values: dict[str, float]
    sample_count: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sample_count < 1:
            raise MetricError("sample_count must be >= 1")
        bad = [k for k, v in self.values.items() if not math.isfinite(v)]
        if bad:
            raise MetricError(f"non-finite metric values: {bad}")

    def to_dict(self) -> dict:
        return {"values": dict(self.values), "sample_count": self.sample_count, "metadata": dict(self.metadata)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self, metric_names) -> dict:
        row = {k: self.metadata.get(k, "") for k in ("scenario", "method", "seed")}
        row["sample_count"] = self.sample_count
        for m in metric_names:
            row[m] = repr(self.values[m]) if m in self.values else ""
        return row

    def to_csv(self, metric_names) -> str:
        buf = io.StringIO()
        row = self.csv_row(metric_names)
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()
