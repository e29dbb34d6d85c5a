"""Command-line entry points: run experiments, fetch or synthesize image
data, validate configs, and solve max-margin oracles from CSV files."""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import cifar, harness, metrics
from .errors import ConfigError, FormatError


def _cmd_run(args) -> int:
    config = harness.load_config(args.config)
    if args.scale:
        config.scale = args.scale
    if args.seeds:
        config.seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if args.workers:
        config.workers = args.workers
    config.validate()
    manifest = harness.run_experiment(config, out_dir=args.out,
                                      data_dir=args.data_dir)
    print(f"wrote {manifest.out_dir / 'manifest.txt'}")
    for p in manifest.run_paths:
        print(f"  {p}")
    return 0


def _cmd_validate(args) -> int:
    config = harness.load_config(args.config)
    print(f"ok: scenario={config.scenario} model={config.model} "
          f"scale={config.scale} seeds={config.seeds} "
          f"sweep={config.weight_sweep}")
    return 0


def _cmd_fetch(args) -> int:
    if args.synthetic:
        out = cifar.write_synthetic_corpus(
            args.dir, per_class_train=args.per_class,
            per_class_test=max(1, args.per_class // 5), seed=args.seed,
            shared_modes=not args.heterogeneous)
        print(f"wrote synthetic corpus under {out}")
        return 0
    out = cifar.fetch_archive(args.dir, sha256=args.sha256)
    print(f"fetched and verified archive under {out}")
    return 0


def _cmd_oracle(args) -> int:
    points, labels = [], []
    with open(args.csv, newline="") as fh:
        for row in csv.DictReader(fh):
            points.append((float(row["x1"]), float(row["x2"])))
            labels.append(int(row["label"]))
    line = metrics.max_margin_2d(np.asarray(points), np.asarray(labels))
    if line is None:
        print(json.dumps({"feasible": False}))
        return 1
    print(json.dumps({
        "feasible": True,
        "normal": [float(line.normal[0]), float(line.normal[1])],
        "offset": line.offset,
        "margin": line.margin,
        "support_indices": list(line.support_indices),
    }))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="iwlab",
        description="importance-weighted training experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--scale", choices=("desk", "full"), default=None)
    p_run.add_argument("--seeds", default=None, help="comma-separated seed list")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--data-dir", default=None, help="image data directory")
    p_run.add_argument("--workers", type=int, default=0)
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a config file")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_fetch = sub.add_parser("fetch-cifar", help="download or synthesize image data")
    p_fetch.add_argument("dir")
    p_fetch.add_argument("--sha256", default=None,
                         help="pin the downloaded archive digest")
    p_fetch.add_argument("--synthetic", action="store_true",
                         help="write a synthetic corpus instead of downloading")
    p_fetch.add_argument("--per-class", type=int, default=1000)
    p_fetch.add_argument("--seed", type=int, default=7)
    p_fetch.add_argument("--heterogeneous", action="store_true",
                         help="disjoint train/test template pools")
    p_fetch.set_defaults(func=_cmd_fetch)

    p_oracle = sub.add_parser("oracle", help="geometry oracles")
    oracle_sub = p_oracle.add_subparsers(dest="oracle_command", required=True)
    p_mm = oracle_sub.add_parser("max-margin",
                                 help="exact separator from an x1,x2,label CSV")
    p_mm.add_argument("csv")
    p_mm.set_defaults(func=_cmd_oracle)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
