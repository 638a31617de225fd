"""Config-driven experiments: build tasks, fit each method, evaluate on test tasks.

A config is a key-value tree (YAML or JSON)::

    scenario:
      kind: gradual          # gradual | abrupt | csv
      feature_dim: 10
      total_length: 2000
      rotation_rate: 0.002
      noise_std: 0.1
      period_length: 40
    tasks:
      memory_k: 200
      horizon_tau: 20        # null -> same as interval
      interval: 20
      split_time: 1000
    methods:
      - name: ddgda_closed
        learning_rate: 2.0
      - name: rr
      - name: gf_exp
        grid: [0.01, 0.03, 0.1]
    downstream: linear
    metrics: [mse, nrmse]
    seeds: [0, 1, 2]

Each seed generates its own synthetic stream (CSV scenarios reuse the file) and
seeds the resampler training.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .baselines import ForgettingSpec, baseline_weights
from .downstream import DOWNSTREAM_KINDS
from .drift import AbruptDriftSpec, GradualDriftSpec, generate_abrupt, generate_gradual
from .metrics import METRICS, MetricReport, evaluate
from .stream import AdaptationTask, TimeIndexedStream, generate_tasks, read_stream_csv, split_tasks
from .trainer import TrainConfig, TrainedResampler, fit_weights, forecast_with_weights, task_features, train

log = logging.getLogger(__name__)

METHODS = ("ddgda_closed", "ddgda_gho", "rr", "gf_lin", "gf_exp")
DEFAULT_EXP_GRID = (0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5)
# fractions of the steepest admissible slope 1/(k-1)
DEFAULT_LIN_GRID_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    kind: str = "gradual"
    feature_dim: int = 10
    total_length: int = 2000
    rotation_rate: float = 0.002
    noise_std: float = 0.1
    segment_lengths: list = field(default_factory=lambda: [200] * 10)
    period_length: int = 40
    path: str | None = None

    @property
    def name(self) -> str:
        if self.kind == "csv":
            return Path(self.path).stem
        return self.kind


@dataclass
class TaskConfig:
    memory_k: int = 200
    horizon_tau: int | None = 20
    interval: int = 20
    split_time: int = 1000
    allow_partial: bool = False

    @property
    def horizon(self) -> int:
        return self.interval if self.horizon_tau is None else self.horizon_tau


@dataclass
class MethodConfig:
    name: str
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig
    tasks: TaskConfig
    methods: list[MethodConfig]
    downstream: str = "linear"
    metrics: list[str] = field(default_factory=lambda: ["mse", "nrmse"])
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str | None = None
    validation_fraction: float = 0.25
    dump_weights: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config root must be a mapping")
        known = {"scenario", "tasks", "methods", "downstream", "metrics", "seeds", "output_dir",
                 "validation_fraction", "dump_weights"}
        _no_extra(d, known, "")
        scenario = _section(ScenarioConfig, d.get("scenario", {}), "scenario")
        tasks = _section(TaskConfig, d.get("tasks", {}), "tasks")
        if scenario.kind not in ("gradual", "abrupt", "csv"):
            raise ConfigError(f"scenario.kind: expected gradual, abrupt or csv, got {scenario.kind!r}")
        if scenario.kind == "csv" and not scenario.path:
            raise ConfigError("scenario.path: required when scenario.kind is csv")
        for name in ("memory_k", "interval"):
            if not isinstance(getattr(tasks, name), int) or getattr(tasks, name) < 1:
                raise ConfigError(f"tasks.{name}: expected a positive integer")
        if tasks.horizon_tau is not None and (not isinstance(tasks.horizon_tau, int) or tasks.horizon_tau < 1):
            raise ConfigError("tasks.horizon_tau: expected a positive integer or null")

        raw_methods = d.get("methods")
        if not isinstance(raw_methods, list) or not raw_methods:
            raise ConfigError("methods: expected a non-empty list")
        methods = []
        for i, m in enumerate(raw_methods):
            if isinstance(m, str):
                m = {"name": m}
            if not isinstance(m, dict) or "name" not in m:
                raise ConfigError(f"methods[{i}]: expected a mapping with a name")
            if m["name"] not in METHODS:
                raise ConfigError(f"methods[{i}].name: unknown method {m['name']!r}; choose from {METHODS}")
            params = {k: v for k, v in m.items() if k != "name"}
            _check_method_params(m["name"], params, f"methods[{i}]")
            methods.append(MethodConfig(m["name"], params))
        names = [m.name for m in methods]
        if len(set(names)) != len(names):
            raise ConfigError("methods: duplicate method names")

        downstream = d.get("downstream", "linear")
        if downstream not in DOWNSTREAM_KINDS:
            raise ConfigError(f"downstream: expected one of {DOWNSTREAM_KINDS}, got {downstream!r}")
        metrics = d.get("metrics", ["mse", "nrmse"])
        if not isinstance(metrics, list) or not metrics or any(m not in METRICS for m in metrics):
            raise ConfigError(f"metrics: expected a non-empty list drawn from {METRICS}")
        seeds = d.get("seeds", [0])
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds: expected a non-empty list of integers")
        vf = d.get("validation_fraction", 0.25)
        if not (isinstance(vf, (int, float)) and 0 < vf < 1):
            raise ConfigError("validation_fraction: expected a number in (0, 1)")
        return cls(scenario, tasks, methods, downstream, list(metrics), list(seeds), d.get("output_dir"),
                   float(vf), bool(d.get("dump_weights", False)), copy.deepcopy(d))

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            d = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = cls.from_dict(d or {})
        if cfg.scenario.kind == "csv":
            p = Path(cfg.scenario.path)
            if not p.is_absolute():
                p = path.parent / p
            cfg.scenario.path = str(p)
        return cfg

    def to_dict(self) -> dict:
        return {
            "scenario": asdict(self.scenario),
            "tasks": asdict(self.tasks),
            "methods": [{"name": m.name, **m.params} for m in self.methods],
            "downstream": self.downstream,
            "metrics": list(self.metrics),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "validation_fraction": self.validation_fraction,
            "dump_weights": self.dump_weights,
        }


def _no_extra(d: dict, allowed, where: str) -> None:
    extra = sorted(set(d) - set(allowed))
    if extra:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"{prefix}{extra[0]}: unknown key (allowed: {', '.join(sorted(allowed))})")


def _section(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping")
    _no_extra(d, {f.name for f in fields(cls)}, where)
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def _check_method_params(name: str, params: dict, where: str) -> None:
    if name.startswith("ddgda"):
        _no_extra(params, _TRAIN_KEYS - {"seed", "optimizer_path"}, where)
        try:
            _train_config(name, params, 0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    elif name == "rr":
        _no_extra(params, {"ridge_lambda", "bias"}, where)
    else:
        key = "lin_slope" if name == "gf_lin" else "exp_rate"
        _no_extra(params, {key, "grid", "ridge_lambda", "bias"}, where)
        grid = params.get("grid")
        if grid is not None and (not isinstance(grid, list) or not grid or any(not isinstance(g, (int, float)) or g < 0 for g in grid)):
            raise ConfigError(f"{where}.grid: expected a non-empty list of non-negative numbers")


def _train_config(method: str, params: dict, seed: int) -> TrainConfig:
    path = "closed_form" if method == "ddgda_closed" else "gho"
    return TrainConfig(**{**params, "seed": seed, "optimizer_path": path})


def _eval_config(params: dict) -> TrainConfig:
    return TrainConfig(ridge_lambda=params.get("ridge_lambda", 1e-6), bias=params.get("bias", True))


# -- running -----------------------------------------------------------------

def build_stream(scenario: ScenarioConfig, seed: int) -> tuple[TimeIndexedStream, np.ndarray | None]:
    if scenario.kind == "gradual":
        spec = GradualDriftSpec(scenario.feature_dim, scenario.total_length, scenario.rotation_rate,
                                scenario.noise_std, seed, scenario.period_length)
        return generate_gradual(spec)
    if scenario.kind == "abrupt":
        spec = AbruptDriftSpec(scenario.feature_dim, tuple(scenario.segment_lengths), scenario.noise_std,
                               seed, scenario.period_length)
        return generate_abrupt(spec)
    return read_stream_csv(scenario.path, scenario.period_length), None


@dataclass
class CellResult:
    method: str
    seed: int
    report: MetricReport | None = None
    error: str | None = None
    weights: list = field(default_factory=list, repr=False)
    model: TrainedResampler | None = field(default=None, repr=False)


@dataclass
class RunManifest:
    config: dict
    cells: list[CellResult]
    artifacts: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def reports(self) -> list[MetricReport]:
        return [c.report for c in self.cells if c.report is not None]

    @property
    def failures(self) -> list[CellResult]:
        return [c for c in self.cells if c.error is not None]

    def report(self, method: str, seed: int) -> MetricReport:
        for c in self.cells:
            if c.method == method and c.seed == seed:
                if c.report is None:
                    raise KeyError(f"cell ({method}, {seed}) failed: {c.error}")
                return c.report
        raise KeyError((method, seed))

    def mean(self, method: str, metric: str) -> float:
        vals = [c.report.values[metric] for c in self.cells if c.method == method and c.report is not None]
        return float(np.mean(vals))

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "cells": [
                {"method": c.method, "seed": c.seed,
                 "report": c.report.to_dict() if c.report else None, "error": c.error}
                for c in self.cells
            ],
            "artifacts": self.artifacts,
            "wall_time": self.wall_time,
        }


METRIC_CSV_EXTRA = ("train_loss", "selected", "status", "error")


def metric_rows(manifest: RunManifest, metric_names) -> list[dict]:
    rows = []
    for c in manifest.cells:
        if c.report is not None:
            row = c.report.csv_row(metric_names)
            md = c.report.metadata
            row["train_loss"] = repr(md["train_loss"]) if "train_loss" in md else ""
            row["selected"] = repr(md["selected"]) if "selected" in md else ""
            row["status"] = "ok"
            row["error"] = ""
        else:
            row = {"scenario": manifest.config["scenario"]["kind"], "method": c.method, "seed": c.seed,
                   "sample_count": "", **{m: "" for m in metric_names},
                   "train_loss": "", "selected": "", "status": "failed", "error": c.error}
        rows.append(row)
    return rows


def _write_csv(path: Path, rows: list[dict], fieldnames) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _groups(tasks: list[AdaptationTask], preds: list[np.ndarray]):
    out = []
    for task, p in zip(tasks, preds):
        te = task.test_window
        y_all = task.stream.y
        prev = y_all[max(te.lo - 1, 0):te.hi - 1]
        if te.lo == 0:
            prev = np.concatenate([[y_all[0]], prev])
        out.append((te.y, p, prev))
    return out


class _SeedContext:
    """Stream, task split and cached similarity features for one seed."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.seed = seed
        self.stream, self.oracle = build_stream(cfg.scenario, seed)
        t = cfg.tasks
        tasks = generate_tasks(self.stream, t.memory_k, t.horizon, t.interval, t.allow_partial)
        self.split = split_tasks(tasks, t.split_time)
        self._feats = {}

    def features(self, tasks, tcfg: TrainConfig):
        key = (tcfg.lags, tcfg.ridge_lambda, tcfg.bias)
        cache = self._feats.setdefault(key, {})
        out = []
        for task in tasks:
            if task.task_time not in cache:
                cache[task.task_time] = task_features(task, tcfg)
            out.append(cache[task.task_time])
        return out


def _validation_tasks(train_tasks, fraction):
    n_val = max(1, int(round(len(train_tasks) * fraction)))
    return train_tasks[-n_val:]


def _mean_mse(tasks, weight_fn, downstream, ecfg) -> float:
    errs = []
    for task in tasks:
        p = forecast_with_weights(task, weight_fn(task), downstream, ecfg)
        errs.append(np.mean((p - task.test_window.y) ** 2))
    return float(np.mean(errs))


def tune_forgetting(scheme: str, grid, tasks, downstream: str, ecfg: TrainConfig) -> ForgettingSpec:
    """Pick the decay rate with the lowest mean validation MSE (first wins on ties)."""
    key = "lin_slope" if scheme == "gf_lin" else "exp_rate"
    best, best_err = None, np.inf
    for v in grid:
        spec = ForgettingSpec(scheme, **{key: float(v)})
        err = _mean_mse(tasks, lambda t: baseline_weights(spec, t), downstream, ecfg)
        if err < best_err:
            best, best_err = spec, err
    return best


def _run_cell(cfg: ExperimentConfig, ctx: _SeedContext, method: MethodConfig) -> CellResult:
    res = CellResult(method.name, ctx.seed)
    split = ctx.split
    meta = {"scenario": cfg.scenario.name, "method": method.name, "seed": ctx.seed}
    try:
        if method.name.startswith("ddgda"):
            tcfg = _train_config(method.name, method.params, ctx.seed)
            trained = train(split.train_tasks, tcfg, ctx.features(split.train_tasks, tcfg))
            res.model = trained
            meta["train_loss"] = trained.loss_history[-1]
            feats = ctx.features(split.test_tasks, tcfg)
            weights = [fit_weights(trained, t, tcfg, f) for t, f in zip(split.test_tasks, feats)]
            ecfg = tcfg
        else:
            ecfg = _eval_config(method.params)
            if method.name == "rr":
                spec = ForgettingSpec("rr")
            else:
                key = "lin_slope" if method.name == "gf_lin" else "exp_rate"
                if key in method.params:
                    spec = ForgettingSpec(method.name, **{key: float(method.params[key])})
                else:
                    grid = method.params.get("grid")
                    if grid is None:
                        if method.name == "gf_exp":
                            grid = DEFAULT_EXP_GRID
                        else:
                            grid = [f / (cfg.tasks.memory_k - 1) for f in DEFAULT_LIN_GRID_FRACTIONS]
                    val = _validation_tasks(split.train_tasks, cfg.validation_fraction)
                    spec = tune_forgetting(method.name, grid, val, cfg.downstream, ecfg)
                    meta["grid"] = [float(g) for g in grid]
                spec.check_window(cfg.tasks.memory_k)
                meta["selected"] = spec.lin_slope if method.name == "gf_lin" else spec.exp_rate
            weights = [baseline_weights(spec, t) for t in split.test_tasks]
        preds = [forecast_with_weights(t, w, cfg.downstream, ecfg) for t, w in zip(split.test_tasks, weights)]
        groups = _groups(split.test_tasks, preds)
        values = evaluate(groups, cfg.metrics)
        res.report = MetricReport(values, int(sum(len(g[0]) for g in groups)), meta)
        res.weights = [(t, w.q) for t, w in zip(split.test_tasks, weights)]
    except Exception as exc:  # noqa: BLE001  one failing cell must not stop the others
        log.warning("cell (%s, seed %d) failed: %s", method.name, ctx.seed, exc)
        res.error = f"{type(exc).__name__}: {exc}"
        res.report = None
    return res


def _run_seed(cfg: ExperimentConfig, seed: int) -> list[CellResult]:
    try:
        ctx = _SeedContext(cfg, seed)
    except Exception as exc:  # noqa: BLE001
        msg = f"{type(exc).__name__}: {exc}"
        return [CellResult(m.name, seed, error=msg) for m in cfg.methods]
    return [_run_cell(cfg, ctx, m) for m in cfg.methods]


def run(cfg: ExperimentConfig, threads: int = 1, out_dir: str | Path | None = None) -> RunManifest:
    """Evaluate every (method, seed) cell; writes reports when an output directory is set."""
    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_seed = list(pool.map(lambda s: _run_seed(cfg, s), cfg.seeds))
    else:
        per_seed = [_run_seed(cfg, s) for s in cfg.seeds]
    by_key = {(c.method, c.seed): c for cells in per_seed for c in cells}
    cells = [by_key[(m.name, s)] for m in cfg.methods for s in cfg.seeds]
    manifest = RunManifest(cfg.to_dict(), cells)
    out_dir = out_dir if out_dir is not None else cfg.output_dir
    if out_dir is not None:
        write_outputs(manifest, cfg, Path(out_dir))
    manifest.wall_time = time.perf_counter() - t0
    if out_dir is not None:
        (Path(out_dir) / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2), encoding="utf-8")
    return manifest


def write_outputs(manifest: RunManifest, cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    fieldnames = ["scenario", "method", "seed", "sample_count", *cfg.metrics, *METRIC_CSV_EXTRA]
    _write_csv(out / "metrics.csv", metric_rows(manifest, cfg.metrics), fieldnames)
    manifest.artifacts["metrics_csv"] = str(out / "metrics.csv")
    for c in manifest.cells:
        if c.model is not None:
            p = out / f"model_{c.method}_seed{c.seed}.json"
            c.model.save(p)
            manifest.artifacts[f"model:{c.method}:{c.seed}"] = str(p)
        if cfg.dump_weights and c.weights:
            p = out / f"weights_{c.method}_seed{c.seed}.csv"
            write_weight_dump(c.weights, p)
            manifest.artifacts[f"weights:{c.method}:{c.seed}"] = str(p)


def write_weight_dump(weights, path: Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_time", "sample_timestamp", "q"])
        for task, q in weights:
            for ts, qi in zip(task.train_window.timestamps, q):
                w.writerow([task.task_time, int(ts), repr(float(qi))])


# -- sweeps ------------------------------------------------------------------

def _resolve(d: dict, param_path: str):
    """Return (container, key) addressed by a dotted path; methods are addressed by name."""
    parts = param_path.split(".")
    node = d
    for i, part in enumerate(parts[:-1]):
        if i == 0 and part == "methods":
            continue
        if i == 1 and parts[0] == "methods":
            match = [m for m in node.get("methods", []) if (m.get("name") if isinstance(m, dict) else m) == part]
            if not match:
                raise ConfigError(f"{param_path}: no method named {part!r}")
            idx = node["methods"].index(match[0])
            if isinstance(match[0], str):
                node["methods"][idx] = {"name": part}
            node = node["methods"][idx]
            continue
        if not isinstance(node, dict):
            raise ConfigError(f"{param_path}: {'.'.join(parts[:i])} is not a mapping")
        node = node.setdefault(part, {})
    return node, parts[-1]


def sweep(cfg: ExperimentConfig, param_path: str, values: list, threads: int = 1,
          out_dir: str | Path | None = None) -> list[RunManifest]:
    """One run per value of the scalar at ``param_path``; all configs are validated first."""
    if not values:
        raise ConfigError("sweep: no values given")
    configs = []
    for v in values:
        d = copy.deepcopy(cfg.raw or cfg.to_dict())
        container, key = _resolve(d, param_path)
        current = container.get(key)
        if isinstance(current, (dict, list)):
            raise ConfigError(f"{param_path}: addresses a {type(current).__name__}, not a scalar")
        container[key] = v
        sub = ExperimentConfig.from_dict(d)
        if cfg.scenario.kind == "csv":
            sub.scenario.path = cfg.scenario.path
        configs.append(sub)
    manifests = [run(c, threads=threads) for c in configs]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fieldnames = ["value", "scenario", "method", "seed", "sample_count", *cfg.metrics, *METRIC_CSV_EXTRA]
        rows = []
        for v, man in zip(values, manifests):
            for row in metric_rows(man, cfg.metrics):
                rows.append({"value": v, **row})
        _write_csv(out / "sweep.csv", rows, fieldnames)
        (out / "sweep_manifest.json").write_text(
            json.dumps({"param_path": param_path, "values": values,
                        "runs": [m.to_dict() for m in manifests]}, indent=2),
            encoding="utf-8",
        )
    return manifests
