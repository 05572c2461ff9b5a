"""Command line entry point: ``faithful-defense <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .attacker import STRATEGIES
from .defense import METHODS
from .models import GamModel, gam_to_decision_set, load_model, save_model
from .synthetic import SyntheticSpec, write_synthetic


def _config(args) -> harness.ExperimentConfig:
    if args.config:
        cfg = harness.ExperimentConfig.load(args.config)
    else:
        cfg = harness.ExperimentConfig(synthetic={})
    cfg = harness.apply_overrides(cfg, args.set or [])
    changes = {}
    for name in ("defense", "strategy", "max_q", "cadence", "l", "replay"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    cfg = replace(cfg, **changes)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _common(p):
    p.add_argument("--config", help="experiment config (TOML or JSON)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config entry; repeatable")
    p.add_argument("--max-q", dest="max_q", type=int)
    p.add_argument("--cadence", type=int)
    p.add_argument("-l", "--max-length", dest="l", type=int)


def cmd_run(args) -> int:
    cfg = _config(args)
    out = args.output or cfg.output or "results"
    run = harness.run_extraction(cfg)
    for p in harness.emit_results(run, out):
        print(p)
    s = run.summary
    print(f"explanations={s['explanations']} coverage_train={s['coverage_train']} "
          f"agreement={s['agreement']:.4f} fpr={s['explanation_fpr']}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    defenses = args.defenses.split(",")
    strategies = args.strategies.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    out = args.output or cfg.output or "sweep"
    for d, summary in harness.sweep(cfg, defenses, strategies, seeds, out, args.workers):
        print(d, json.dumps({k: summary[k] for k in ("coverage_train", "agreement")}))
    return 0


def cmd_convert(args) -> int:
    model = load_model(args.model)
    if not isinstance(model, GamModel):
        print(f"{args.model}: not a GAM model file", file=sys.stderr)
        return 2
    ds = gam_to_decision_set(model, args.tau, early_stop=not args.no_early_stop,
                             leaf_cap=args.leaf_cap)
    save_model(ds, args.output)
    print(f"{len(ds.rules)} rules over {len(ds.conditions)} conditions -> {args.output}")
    return 0


def cmd_synth(args) -> int:
    doc = {}
    if args.spec:
        doc = json.loads(Path(args.spec).read_text())
    for k in ("n", "p", "rules"):
        if getattr(args, k) is not None:
            doc[k] = getattr(args, k)
    paths = write_synthetic(SyntheticSpec.from_dict(doc), args.seed, args.output)
    for p in paths.values():
        print(p)
    return 0


def cmd_metrics(args) -> int:
    curves, final = harness.recompute_metrics(args.run_dir)
    if args.output:
        harness.write_curves(args.output, curves)
    print(json.dumps(final, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="faithful-defense",
                                 description="Faithful explanations under model extraction.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="play one extraction game and write its results")
    _common(p)
    p.add_argument("--defense", choices=METHODS)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--seed", type=int, help="seed for both defender and attacker")
    p.add_argument("--replay", help="queries.jsonl to replay instead of querying adaptively")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="defenses x strategies x seeds")
    _common(p)
    p.add_argument("--defenses", default=",".join(METHODS))
    p.add_argument("--strategies", default=",".join(STRATEGIES))
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--workers", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("convert-gam", help="turn a GAM model file into a decision set")
    p.add_argument("model")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--leaf-cap", type=int, default=10**6)
    p.add_argument("--no-early-stop", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="write a synthetic dataset and its planted model")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", help="JSON file with generator settings")
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--rules", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="recompute curves from a saved run directory")
    p.add_argument("run_dir")
    p.add_argument("-o", "--output", help="write recomputed curves CSV here")
    p.set_defaults(func=cmd_metrics)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, harness.ExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
