"""Command-line entry point: ``ddgda {generate,run,sweep,inspect-weights}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .drift import write_oracle_csv
from .experiment import ConfigError, ExperimentConfig, build_stream, run, sweep
from .stream import write_stream_csv


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed_override is not None:
        cfg.seeds = [args.seed_override]
        cfg.raw["seeds"] = [args.seed_override]
    return cfg


def _out(args, cfg) -> Path:
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set output_dir in the config")
    return Path(out)


def cmd_generate(args) -> int:
    cfg = _load(args)
    if cfg.scenario.kind == "csv":
        raise ConfigError("scenario.kind: generate needs a synthetic scenario (gradual or abrupt)")
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    for seed in cfg.seeds:
        stream, W = build_stream(cfg.scenario, seed)
        write_stream_csv(stream, out / f"stream_seed{seed}.csv")
        write_oracle_csv(stream.timestamps, W, out / f"oracle_seed{seed}.csv")
        print(out / f"stream_seed{seed}.csv")
    return 0


def _summarize(manifest) -> int:
    for c in manifest.cells:
        if c.report is not None:
            vals = " ".join(f"{k}={v:.6g}" for k, v in c.report.values.items())
            print(f"{c.method:14s} seed={c.seed:<4d} {vals}")
        else:
            print(f"{c.method:14s} seed={c.seed:<4d} FAILED {c.error}")
    return 1 if manifest.failures else 0


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.dump_weights:
        cfg.dump_weights = True
    manifest = run(cfg, threads=args.threads, out_dir=_out(args, cfg))
    return _summarize(manifest)


def cmd_inspect_weights(args) -> int:
    cfg = _load(args)
    cfg.dump_weights = True
    out = _out(args, cfg)
    manifest = run(cfg, threads=args.threads, out_dir=out)
    for key, path in sorted(manifest.artifacts.items()):
        if key.startswith("weights:"):
            print(path)
    return 1 if manifest.failures else 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = [yaml.safe_load(v) for v in args.values.split(",")]
    manifests = sweep(cfg, args.param, values, threads=args.threads, out_dir=_out(args, cfg))
    failed = 0
    for v, m in zip(values, manifests):
        print(f"# {args.param} = {v}")
        failed |= _summarize(m)
    return failed


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddgda", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment config (YAML or JSON)")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seed-override", type=int, help="run a single seed instead of the config's list")
        sp.add_argument("--threads", type=int, default=1, help="seeds evaluated concurrently")

    sp = sub.add_parser("generate", help="write synthetic stream and oracle-weight CSVs")
    common(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("run", help="train and evaluate every (method, seed) cell")
    common(sp)
    sp.add_argument("--dump-weights", action="store_true", help="also write per-task weight CSVs")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="repeat run over values of one scalar config field")
    common(sp)
    sp.add_argument("--param", required=True, help="dotted path, e.g. tasks.interval or methods.ddgda_gho.gho_steps")
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("inspect-weights", help="run and dump per-task resampling probabilities")
    common(sp)
    sp.set_defaults(func=cmd_inspect_weights)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
