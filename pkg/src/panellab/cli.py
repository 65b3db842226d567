"""Command-line entry points for sweeps, canned studies, and CSV analysis."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .harness import (
    ExperimentConfig,
    analyze_csv,
    config_hash,
    run_appendix_c,
    run_appendix_d,
    run_sweep,
    run_table1,
)


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file; flags override its fields")
    parser.add_argument("--seed", type=int, default=None, help="base seed override")
    parser.add_argument("--reps", type=int, default=None, help="replication count override")
    parser.add_argument("--workers", type=int, default=None, help="parallel workers")
    parser.add_argument("--out", default=None, help="output directory")


def _load_config(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _archive(ns_dict: dict, out: str | None) -> None:
    if not out:
        return
    os.makedirs(out, exist_ok=True)
    doc = dict(ns_dict)
    doc["config_hash"] = config_hash(doc)
    with open(os.path.join(out, "config.resolved"), "w") as fh:
        json.dump(doc, fh, indent=1, default=str)


def cmd_sweep(args) -> int:
    doc = _load_config(args.config)
    if not doc:
        print("sweep requires --config with a dgp and estimator list", file=sys.stderr)
        return 2
    if args.reps is not None:
        doc["replications"] = args.reps
    if args.workers is not None:
        doc["workers"] = args.workers
    if args.seed is not None:
        doc["base_seed"] = args.seed
    if args.out is not None:
        doc["output_dir"] = args.out
    config = ExperimentConfig.from_dict(doc)
    report = run_sweep(config)
    _archive(config.to_dict(), config.output_dir)
    print(report.text())
    return 0


def cmd_table1(args) -> int:
    doc = _load_config(args.config)
    scale = args.scale or doc.get("scale", "desk")
    report = run_table1(
        scale=scale,
        reps=args.reps if args.reps is not None else doc.get("replications"),
        workers=args.workers or doc.get("workers", 1),
        output_dir=args.out,
        structural_seed=args.seed if args.seed is not None else doc.get("structural_seed", 7),
    )
    _archive({"command": "table1", "scale": scale}, args.out)
    print(report.text())
    return 0


def cmd_appendix_c(args) -> int:
    doc = _load_config(args.config)
    report, artifact = run_appendix_c(
        k_alpha=args.k_alpha if args.k_alpha is not None else doc.get("k_alpha", 2),
        reps=args.reps if args.reps is not None else doc.get("replications", 1000),
        workers=args.workers or doc.get("workers", 1),
        output_dir=args.out,
        structural_seed=args.seed if args.seed is not None else doc.get("structural_seed", 7),
    )
    _archive({"command": "appendix-c"}, args.out)
    print(report.text())
    print(f"reference ATT: {artifact['reference_att']}")
    print("estimate SD by d_of_F quartile:", [f"{v:.4f}" for v in artifact["quartile_sd"]])
    return 0


def cmd_appendix_d(args) -> int:
    doc = _load_config(args.config)
    rows = doc.get("rows")
    kwargs = {}
    if rows:
        kwargs["rows"] = tuple(tuple(r) for r in rows)
    report = run_appendix_d(
        reps=args.reps if args.reps is not None else doc.get("replications", 200),
        workers=args.workers or doc.get("workers", 1),
        output_dir=args.out,
        structural_seed=args.seed if args.seed is not None else doc.get("structural_seed", 7),
        **kwargs,
    )
    _archive({"command": "appendix-d"}, args.out)
    print(report.rows.to_string(index=False))
    return 0


def cmd_analyze(args) -> int:
    doc = _load_config(args.config)
    estimators = None
    if args.estimators:
        estimators = [(kind.strip(), {}) for kind in args.estimators.split(",")]
    elif doc.get("estimators"):
        estimators = [(k, dict(p)) for k, p in doc["estimators"]]
    frame = analyze_csv(
        args.path,
        estimators=estimators,
        inference=args.inference,
        reps=args.reps if args.reps is not None else doc.get("replications", 500),
        seed=args.seed if args.seed is not None else doc.get("seed", 0),
        k=args.k if args.k is not None else doc.get("k", 2),
        output_dir=args.out,
    )
    _archive({"command": "analyze", "path": str(args.path)}, args.out)
    print(frame.to_string(index=False))
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = argparse.ArgumentParser(
        prog="panellab",
        description="Panel causal-inference lab: sweeps, canned studies, CSV analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run a sweep from a JSON config")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("table1", help="benchmark grid over HOM/HET designs")
    _add_common(p)
    p.add_argument("--scale", choices=("desk", "full"), default=None)
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("appendix-c", help="invariant-heterogeneity multimodality study")
    _add_common(p)
    p.add_argument("--k-alpha", type=int, default=None, dest="k_alpha")
    p.set_defaults(func=cmd_appendix_c)

    p = sub.add_parser("appendix-d", help="dynamic vs static specification grid")
    _add_common(p)
    p.set_defaults(func=cmd_appendix_d)

    p = sub.add_parser("analyze", help="estimate ATT on a long-format CSV")
    _add_common(p)
    p.add_argument("path", help="CSV file with unit, period, y, d columns")
    p.add_argument("--estimators", help="comma list: ife,gsc,sc,dsc,sdid")
    p.add_argument("--inference", action="store_true", help="add placebo p-values")
    p.add_argument("--k", type=int, default=None, help="factor count for ife/gsc")
    p.set_defaults(func=cmd_analyze)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
