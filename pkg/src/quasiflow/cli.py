"""Command-line entry point: ``quasiflow <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import DEFAULT_CONFIG, load_config
from .errors import ConfigError, DataError, QuasiflowError, StageError
from .features import GROUPS
from .ingest import save_cache

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_STAGE = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser, sub: bool) -> None:
    # subcommand copies default to SUPPRESS so they don't clobber values given earlier
    d = argparse.SUPPRESS if sub else None
    p.add_argument("--config", default=d, help="INI config file")
    p.add_argument("--data", default=d, help="transaction file (overrides [data] path)")
    p.add_argument("--schema", default=d, choices=("ibm_aml", "eth_phishing", "generic"))
    p.add_argument("--workers", type=int, default=d, help="worker processes (0 = all cores)")
    p.add_argument("--seed", type=int, default=d,
                   help="base seed for leiden, anomaly and model seeds")
    p.add_argument("--cache-dir", default=d)
    p.add_argument("--out-dir", default=d)
    p.add_argument("--no-cache", action="store_true", default=d,
                   help="recompute every stage and check it against any cached copy")
    p.add_argument("--report", default=d, help="write the run report JSON here")
    p.add_argument("--memory-budget", type=int, default=d,
                   help="bytes; caps concurrent spill-store readers")
    p.add_argument("-v", "--verbose", action="store_true", default=d)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quasiflow", description=__doc__.splitlines()[0])
    _common(parser, sub=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _common(p, sub=True)
        return p

    p = add("ingest", "parse a dataset and print its statistics")
    p.add_argument("--cache-out", help="also write a binary columnar copy here")
    add("features", "run every feature stage up to the assembled matrices")
    add("train", "train and evaluate over all seeds; writes models and predictions")
    p = add("evaluate", "score the test split with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", default="tuned", help="'tuned' or a probability cut")
    p = add("ablation", "cumulative feature-group ablation")
    p.add_argument("--groups", default=",".join(GROUPS))
    p = add("bench", "worker scaling of the flow and subgraph stages")
    p.add_argument("--workers-list", default="1,3")
    p.add_argument("--stages", default="subgraph_features,flow,temporal_flow")
    p = add("run-all", "all nine stages plus outputs")
    p.add_argument("--audit", action="store_true", help="also run the label-leakage audit")
    add("config-template", "print the default config with documentation")
    return parser


def _config(args):
    over = {
        "data_path": getattr(args, "data", None),
        "schema": getattr(args, "schema", None),
        "workers": getattr(args, "workers", None),
        "cache_dir": getattr(args, "cache_dir", None),
        "out_dir": getattr(args, "out_dir", None),
        "memory_budget": getattr(args, "memory_budget", None),
    }
    cfg = load_config(getattr(args, "config", None), over)
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg = replace(cfg, leiden_seed=seed, anomaly_seed=seed,
                      seeds=tuple(seed + i for i in range(len(cfg.seeds))))
    return cfg.validate()


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, default=str, ensure_ascii=False)
    sys.stdout.write("\n")


def _run(args) -> int:
    from . import pipeline as pl

    if args.command == "config-template":
        sys.stdout.write(DEFAULT_CONFIG)
        return EXIT_OK
    cfg = _config(args)
    use_cache = not getattr(args, "no_cache", False)
    verify = not use_cache
    report = None

    if args.command == "ingest":
        report, out = pl.run_pipeline(cfg, "ingest", use_cache, verify)
        if args.cache_out:
            save_cache(out["ingest"], args.cache_out)
        _emit(report.result["dataset"])
    elif args.command == "features":
        report, out = pl.run_pipeline(cfg, "assemble", use_cache, verify)
        paths = pl.write_outputs(cfg, out)
        _emit({"stages": report.executed, "columns": len(out["assemble"]["train"].names), **paths})
    elif args.command in ("train", "run-all"):
        report, out = pl.run_pipeline(cfg, "train_evaluate", use_cache, verify)
        paths = pl.write_outputs(cfg, out)
        if args.command == "run-all" and args.audit:
            report.result["leakage_audit"] = pl.leakage_audit(cfg, out["ingest"])
        ev = report.result["evaluation"]
        _emit({"f1": ev["f1"], "recall": ev["recall"], **paths})
    elif args.command == "evaluate":
        from .model import Classifier, evaluate

        report, out = pl.run_pipeline(cfg, "assemble", use_cache, verify)
        try:
            clf = Classifier.load(args.model)
        except OSError as exc:
            raise DataError(f"cannot read model {args.model}: {exc}") from exc
        a = out["assemble"]
        test = a["test"].select(cfg.groups)
        thr = args.threshold if args.threshold == "tuned" else float(args.threshold)
        sizes = {k: len(a[k]) for k in ("train", "valid", "test")}
        rep = evaluate(clf, test, thr, sizes)
        report.result["evaluation"] = rep.to_dict()
        _emit(rep.to_dict())
    elif args.command == "ablation":
        groups = [g.strip() for g in args.groups.split(",") if g.strip()]
        unknown = [g for g in groups if g not in GROUPS]
        if unknown:
            raise ConfigError(f"unknown feature group(s): {', '.join(unknown)}")
        rows = pl.ablation_run(cfg, groups, use_cache)
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        pl._write_rows(Path(cfg.out_dir) / "ablation.csv", list(rows[0]), rows)
        for r in rows:
            print(f"{r['groups']:<55} F1 {r['f1']:>16}   recall {r['recall']:>16}")
    elif args.command == "bench":
        try:
            workers = [int(w) for w in args.workers_list.split(",")]
        except ValueError as exc:
            raise ConfigError(f"--workers-list: {exc}") from exc
        stages = tuple(s.strip() for s in args.stages.split(","))
        bad = [s for s in stages if s not in pl.STAGES]
        if bad or not workers or min(workers) < 1:
            raise ConfigError("bench needs positive worker counts and known stage names")
        reports = pl.scaling_run(cfg, workers, stages)
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = pl.timing_report(reports, out_dir / "timing.csv")
        paths = pl.emit_plots_data(reports, out_dir)
        for r in rows:
            print(f"{r['stage']:<18} workers={r['workers']:<3} {r['seconds']:8.3f}s  "
                  f"{r['cardinality_kind']}={r['cardinality']}")
        report = pl.RunReport([r for rep in reports for r in rep.records], {"plots": paths})

    if report is not None and getattr(args, "report", None):
        report.save(args.report)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc.cause, DataError) else EXIT_STAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except QuasiflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
