"""Time-indexed sample streams and rolling construction of adaptation tasks.

A stream is stored column-wise (timestamps, feature matrix, labels).  Tasks are
cheap views: they keep a reference to the stream plus the index ranges of their
training and test windows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np


class InsufficientStreamError(ValueError):
    pass


class DegenerateSplitError(ValueError):
    pass


class StreamFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    timestamp: int
    features: np.ndarray
    label: float


@dataclass(frozen=True)
class TimeIndexedStream:
    timestamps: np.ndarray
    X: np.ndarray
    y: np.ndarray
    period_length: int = 1

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"features must be a 2-D array, got shape {X.shape}")
        if ts.shape != (X.shape[0],) or y.shape != (X.shape[0],):
            raise ValueError(
                f"length mismatch: {ts.shape[0]} timestamps, {X.shape[0]} feature rows, {y.shape[0]} labels"
            )
        if ts.size and np.any(np.diff(ts) < 0):
            bad = int(np.argmax(np.diff(ts) < 0)) + 1
            raise StreamFormatError(f"timestamps must be non-decreasing (row {bad})")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("features and labels must be finite")
        if self.period_length < 1:
            raise ValueError("period_length must be >= 1")
        for arr in (ts, X, y):
            arr.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.timestamps.shape[0]

    def __iter__(self) -> Iterator[Sample]:
        for t, x, y in zip(self.timestamps, self.X, self.y):
            yield Sample(int(t), x, float(y))

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    @property
    def start(self) -> int:
        return int(self.timestamps[0])

    @property
    def n_ticks(self) -> int:
        """Number of ticks covered, first to last timestamp inclusive."""
        if len(self) == 0:
            return 0
        return int(self.timestamps[-1] - self.timestamps[0]) + 1

    def index_range(self, t_from: int, t_to: int) -> tuple[int, int]:
        """Row positions ``[lo, hi)`` of samples with ``t_from <= timestamp < t_to``."""
        lo = int(np.searchsorted(self.timestamps, t_from, side="left"))
        hi = int(np.searchsorted(self.timestamps, t_to, side="left"))
        return lo, hi


@dataclass(frozen=True)
class Window:
    stream: TimeIndexedStream = field(repr=False)
    lo: int
    hi: int

    def __len__(self) -> int:
        return self.hi - self.lo

    @property
    def timestamps(self) -> np.ndarray:
        return self.stream.timestamps[self.lo:self.hi]

    @property
    def X(self) -> np.ndarray:
        return self.stream.X[self.lo:self.hi]

    @property
    def y(self) -> np.ndarray:
        return self.stream.y[self.lo:self.hi]


@dataclass(frozen=True)
class AdaptationTask:
    """Retraining opportunity at ``task_time``.

    The training window holds the ``memory_k`` ticks before ``task_time``; the
    test window holds the ``horizon_tau`` ticks starting at it.
    """

    task_time: int
    train_window: Window
    test_window: Window
    memory_k: int
    horizon_tau: int

    @property
    def stream(self) -> TimeIndexedStream:
        return self.train_window.stream

    @property
    def test_end(self) -> int:
        """First tick after the test window."""
        return self.task_time + self.horizon_tau


@dataclass(frozen=True)
class TaskSplit:
    train_tasks: list[AdaptationTask]
    test_tasks: list[AdaptationTask]
    split_time: int


def generate_tasks(
    stream: TimeIndexedStream,
    memory_k: int,
    horizon_tau: int,
    interval: int,
    allow_partial: bool = False,
) -> list[AdaptationTask]:
    """Roll a (train, test) window pair over ``stream`` every ``interval`` ticks.

    Task times are offsets from the first timestamp.  With ``allow_partial`` the
    rolling starts one interval into the stream and early tasks see a shorter
    memory; by default every task has a full ``memory_k`` window.
    """
    for name, v in (("memory_k", memory_k), ("horizon_tau", horizon_tau), ("interval", interval)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    T = stream.n_ticks
    if T < memory_k + horizon_tau:
        raise InsufficientStreamError(
            f"insufficient stream: {T} ticks < memory_k + horizon_tau = {memory_k + horizon_tau}"
        )
    t0 = stream.start
    first = interval if allow_partial else memory_k
    tasks = []
    for offset in range(first, T - horizon_tau + 1, interval):
        t = t0 + offset
        tr = stream.index_range(t - memory_k, t)
        te = stream.index_range(t, t + horizon_tau)
        if tr[1] == tr[0] or te[1] == te[0]:
            continue
        tasks.append(
            AdaptationTask(
                task_time=t,
                train_window=Window(stream, *tr),
                test_window=Window(stream, *te),
                memory_k=memory_k,
                horizon_tau=horizon_tau,
            )
        )
    if not tasks:
        raise InsufficientStreamError("insufficient stream: no task has samples in both windows")
    return tasks


def split_tasks(tasks: list[AdaptationTask], split_time: int) -> TaskSplit:
    """Partition tasks into those evaluated wholly before ``split_time`` and the rest.

    A task whose test window straddles ``split_time`` goes to the test side.
    """
    times = [task.task_time for task in tasks]
    if times != sorted(times):
        raise ValueError("tasks must be in chronological order")
    train = [task for task in tasks if task.test_end <= split_time]
    test = [task for task in tasks if task.test_end > split_time]
    if not train or not test:
        raise DegenerateSplitError(
            f"degenerate split at {split_time}: {len(train)} train tasks, {len(test)} test tasks"
        )
    return TaskSplit(train, test, split_time)


def read_stream_csv(path: str | Path, period_length: int = 1) -> TimeIndexedStream:
    """Load a stream from ``timestamp,f0,...,f{m-1},label`` CSV."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise StreamFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        m = len(header) - 2
        expected = ["timestamp"] + [f"f{j}" for j in range(m)] + ["label"]
        if m < 1 or header != expected:
            raise StreamFormatError(f"{path}: header must be {','.join(expected) if m >= 1 else 'timestamp,f0,...,label'}")
        ts, rows, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != m + 2:
                raise StreamFormatError(f"{path}:{lineno}: expected {m + 2} fields, got {len(row)}")
            try:
                t = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise StreamFormatError(f"{path}:{lineno}: {exc}") from None
            if ts and t < ts[-1]:
                raise StreamFormatError(f"{path}:{lineno}: rows are not time-sorted ({t} after {ts[-1]})")
            ts.append(t)
            rows.append(vals[:-1])
            labels.append(vals[-1])
    if not ts:
        raise StreamFormatError(f"{path}: no samples")
    return TimeIndexedStream(np.array(ts), np.array(rows), np.array(labels), period_length=period_length)


def write_stream_csv(stream: TimeIndexedStream, path: str | Path) -> None:
    path = Path(path)
    m = stream.feature_dim
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"] + [f"f{j}" for j in range(m)] + ["label"])
        for t, x, y in zip(stream.timestamps, stream.X, stream.y):
            w.writerow([int(t)] + [repr(float(v)) for v in x] + [repr(float(y))])
