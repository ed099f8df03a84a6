"""Command-line front end: ``run``, ``sweep`` and ``compare``.

Every flag can also come from an environment variable with the ``COCASIM_``
prefix (``COCASIM_CONFIG``, ``COCASIM_OUT``, ``COCASIM_SEED``,
``COCASIM_POLICIES``, ``COCASIM_SWEEP``, ``COCASIM_REPLICATES``,
``COCASIM_WORKERS``). Flags win over the environment.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Tuple

from . import engine
from .config import Scenario, load_scenario, normalize_keys, scenario_from, validate
from .errors import ConfigError, ValidationError
from .server import POLICIES

ENV_PREFIX = "COCASIM_"
MAX_SWEEP_PARAMS = 3


def _env(name, default=None):
    return os.environ.get(ENV_PREFIX + name, default)


def parse_sweep(items: List[str]) -> List[Tuple[str, List[str]]]:
    """``name=v1,v2,...`` items to (name, values); at most three names."""
    spec = []
    for item in items:
        if "=" not in item:
            raise ConfigError(f"sweep item must look like name=v1,v2: {item!r}", [item])
        name, values = item.split("=", 1)
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"sweep parameter {name.strip()} has no values", [name.strip()])
        spec.append((name.strip(), vals))
    if len(spec) > MAX_SWEEP_PARAMS:
        raise ConfigError(f"at most {MAX_SWEEP_PARAMS} swept parameters, got {len(spec)}",
                          [n for n, _ in spec])
    names = [n for n, _ in spec]
    normalize_keys({n: v[0] for n, v in spec})     # rejects unknown names early
    # "theta" and "thresholds.theta" are the same key
    resolved = [next(iter(normalize_keys({n: v[0]}))) for n, v in spec]
    if len(set(resolved)) != len(resolved):
        raise ConfigError("a parameter is swept twice", names)
    return spec


def parse_policies(text: str) -> List[str]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    bad = [p for p in names if p not in POLICIES]
    if not names or bad:
        raise ConfigError(f"unknown policies: {', '.join(bad) or '(empty)'}", bad or ["policies"])
    return names


def _base_scenario(args) -> Scenario:
    overrides = dict(kv.split("=", 1) for kv in args.set) if args.set else {}
    bad = [kv for kv in (args.set or []) if "=" not in kv]
    if bad:
        raise ConfigError("--set expects key=value", bad)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.config:
        return load_scenario(args.config, **overrides)
    return scenario_from(**overrides)


def _summary_row(result: engine.ScenarioResult):
    t = result.total
    return engine.metric_values(t) + list(t.per_layer_hit_ratio)


def _summary_header(n_layers):
    return engine.METRIC_COLUMNS + [f"exit_ratio_{j + 1}" for j in range(n_layers + 1)]


def cmd_run(args) -> int:
    scenario = _base_scenario(args)
    engine.run_scenario(scenario, args.out)
    print(f"wrote {Path(args.out) / 'metrics.csv'} and summary.json")
    return 0


def cmd_sweep(args) -> int:
    base = _base_scenario(args)
    spec = parse_sweep(args.sweep)
    if not spec:
        raise ConfigError("no --sweep parameters given", ["sweep"])
    names = [n for n, _ in spec]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = names + ["seed"] + _summary_header(base.layers)
    rows = []
    for cell in itertools.product(*[v for _, v in spec]):
        cell_scenario = base.with_updates(**dict(zip(names, cell)))
        for r in range(args.replicates):
            s = validate(cell_scenario.with_updates(seed=base.seed + r))
            result = engine.run_scenario(s)
            rows.append(list(cell) + [s.seed] + _summary_row(result))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([engine.fmt(v) for v in row])
    with open(out / "sweep.json", "w") as fh:
        json.dump({"schema_version": engine.SUMMARY_SCHEMA_VERSION, "base": base.to_dict(),
                   "sweep": {n: v for n, v in spec}, "replicates": args.replicates,
                   "cells": len(rows) // max(args.replicates, 1)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return 0


def cmd_compare(args) -> int:
    base = _base_scenario(args)
    policies = parse_policies(args.policies)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, prefix, totals = [], [], []
    for pol in policies:
        result = engine.run_scenario(base.with_updates(policy=pol))
        records += result.records
        prefix += [[pol]] * len(result.records)
        totals.append([pol] + _summary_row(result))
    # per-round rows; the label_digest column shows the workload is the same under every policy
    engine.write_metrics_csv(records, base.layers, out / "compare.csv", ["compared_policy"], prefix)
    with open(out / "compare_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy"] + _summary_header(base.layers))
        for row in totals:
            w.writerow([engine.fmt(v) for v in row])
    print(f"wrote {out / 'compare.csv'} and compare_summary.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cocasim", description="Collaborative semantic-cache inference simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", default=_env("CONFIG"), help="key = value or JSON scenario file")
        p.add_argument("--out", default=_env("OUT", out_default), help="output directory")
        p.add_argument("--seed", type=int, default=_env("SEED"), help="master seed")
        p.add_argument("--workers", type=int, default=_env("WORKERS"), help="client worker threads")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a scenario key (repeatable)")

    p = sub.add_parser("run", help="run one scenario")
    common(p, "out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep up to three parameters over seeded replicates")
    common(p, "sweep_out")
    env_sweep = _env("SWEEP")
    p.add_argument("--sweep", action="append", metavar="NAME=V1,V2,...",
                   default=env_sweep.split(";") if env_sweep else [])
    p.add_argument("--replicates", type=int, default=int(_env("REPLICATES", "1")))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="replay one workload under several policies")
    common(p, "compare_out")
    p.add_argument("--policies", default=_env("POLICIES", "ACA,LRU,FIFO,RAND"))
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "replicates", 1) < 1:
        print("error: --replicates must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.keys:
            print("offending keys: " + ", ".join(str(k) for k in exc.keys), file=sys.stderr)
        return 2
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
