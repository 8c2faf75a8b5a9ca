"""Nine-stage batch pipeline with content-addressed stage caching.

Stages run in a fixed order. Each stage key hashes the stage's own
parameters together with the keys of its inputs, so changing a parameter
invalidates exactly the stages downstream of it. Worker counts and the
memory budget never enter a key: outputs do not depend on them.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import pickle
import time
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np

from .anomaly import fit_isolation_forest
from .communities import community_membership_table, ego_communities, leiden_partition
from .config import PipelineConfig
from .errors import DataError, QuasiflowError, StageError
from .features import GROUPS, assemble_features, build_node_features
from .flow import classify_totals, flow_table, temporal_flow_table
from .graph import aggregate, build_multigraph
from .ingest import Dataset, SplitSpec, account_temporal_split, dataset_stats, parse_transactions, \
    split_rows
from .model import Classifier, ModelParams, ablation_grid, train_and_evaluate
from .subgraph import parallel_feature_map

log = logging.getLogger(__name__)

STAGES = ("ingest", "graphs", "communities", "flow", "temporal_flow", "subgraph_features",
          "anomaly", "assemble", "train_evaluate")
# input cardinality used on the x axis of the scaling plots
CARDINALITY = {
    "ingest": "edges", "graphs": "edges", "communities": "nodes", "flow": "aggregated_edges",
    "temporal_flow": "edges", "subgraph_features": "nodes", "anomaly": "nodes",
    "assemble": "edges", "train_evaluate": "edges",
}
_DEPS = {
    "ingest": (), "graphs": ("ingest",), "communities": ("graphs",), "flow": ("graphs",),
    "temporal_flow": ("graphs",), "subgraph_features": ("graphs", "communities"),
    "anomaly": ("graphs", "communities", "flow", "temporal_flow", "subgraph_features"),
    "assemble": ("ingest", "anomaly"), "train_evaluate": ("assemble",),
}
_PARAMS = {
    "ingest": ("schema",),
    "graphs": ("theta_pass", "theta_ratio"),
    "communities": ("resolution", "leiden_seed", "leiden_iterations", "n_hops", "restart", "top_k",
                    "max_size"),
    "flow": ("hops", "top_n"),
    "temporal_flow": ("hops", "top_n", "strict_chronology"),
    "subgraph_features": ("diameter_cap",),
    "anomaly": ("trees", "sample_size", "anomaly_seed"),
    "assemble": ("split_mode", "split_fractions"),
    "train_evaluate": ("rounds", "max_depth", "learning_rate", "early_stopping", "subsample",
                       "colsample_bytree", "class_weight", "groups", "seeds"),
}


# -- stage bodies -----------------------------------------------------------------

def stage_ingest(cfg: PipelineConfig, _) -> Dataset:
    if not cfg.data_path:
        raise DataError("no dataset path configured")
    return parse_transactions(cfg.data_path, cfg.schema)


def stage_graphs(cfg: PipelineConfig, up) -> dict:
    g = build_multigraph(up["ingest"])
    ag = aggregate(g)
    return {"g": g, "ag": ag, "node_type": classify_totals(ag.S, ag.R, cfg.theta_pass, cfg.theta_ratio)}


def stage_communities(cfg: PipelineConfig, up) -> dict:
    ag = up["graphs"]["ag"]
    partition = leiden_partition(ag, cfg.resolution, cfg.leiden_seed, cfg.leiden_iterations)
    egos = ego_communities(ag, None, cfg.n_hops, cfg.restart, cfg.top_k, cfg.max_size,
                           workers=cfg.n_workers)
    return {"partition": partition, "table": community_membership_table(partition, egos)}


def stage_flow(cfg: PipelineConfig, up):
    return flow_table(up["graphs"]["ag"], None, cfg.hops, cfg.top_n or None, workers=cfg.n_workers)


def stage_temporal_flow(cfg: PipelineConfig, up):
    return temporal_flow_table(up["graphs"]["g"], None, cfg.hops, cfg.top_n or None,
                               strict_chronology=cfg.strict_chronology, workers=cfg.n_workers)


def stage_subgraph_features(cfg: PipelineConfig, up):
    gr = up["graphs"]
    spill = Path(cfg.cache_dir) / "spill" if cfg.memory_budget is not None else None
    return parallel_feature_map(up["communities"]["table"], gr["g"], cfg.n_workers, gr["node_type"],
                                gr["ag"].S, gr["ag"].R, None, cfg.diameter_cap, cfg.memory_budget,
                                spill)


def stage_anomaly(cfg: PipelineConfig, up) -> dict:
    gr = up["graphs"]
    nf = build_node_features(gr["ag"], gr["g"], gr["node_type"], up["flow"], up["temporal_flow"],
                             up["subgraph_features"], up["communities"]["partition"])
    if nf.X.shape[0] < 2:
        raise DataError("need at least 2 nodes for anomaly scoring")
    model = fit_isolation_forest(nf.X, cfg.trees, cfg.sample_size, cfg.anomaly_seed)
    return {"node_features": nf, "scores": model.score(nf.X), "model": model}


def stage_assemble(cfg: PipelineConfig, up) -> dict:
    d = up["ingest"]
    rows = split_rows(d, SplitSpec(cfg.split_mode, cfg.split_fractions))
    an = up["anomaly"]
    t0 = int(d.timestamp.min())
    mats = [assemble_features(d, r, an["node_features"], an["scores"], t0) for r in rows]
    return {"rows": rows, "train": mats[0], "valid": mats[1], "test": mats[2]}


def _model_params(cfg: PipelineConfig) -> ModelParams:
    return ModelParams(cfg.rounds, cfg.max_depth, cfg.learning_rate, cfg.early_stopping,
                       cfg.subsample, cfg.colsample_bytree, cfg.class_weight, cfg.n_workers)


def stage_train_evaluate(cfg: PipelineConfig, up) -> dict:
    a = up["assemble"]
    train, valid, test = (a[k].select(cfg.groups) for k in ("train", "valid", "test"))
    summary, models = train_and_evaluate(train, valid, test, cfg.seeds, _model_params(cfg))
    first = models[0]
    score = first.predict_proba(test)
    return {
        "summary": summary.to_dict(),
        "models": models,
        "predictions": {"tx_id": test.tx_id, "score": score,
                        "prediction": (score >= first.threshold).astype(np.int64), "label": test.y},
    }


BODIES = {s: globals()[f"stage_{s}"] for s in STAGES}


# -- cache ------------------------------------------------------------------------

def _feed(h, obj) -> None:
    """Stable content hash for stage outputs (arrays, dataclasses, containers)."""
    if isinstance(obj, np.ndarray):
        h.update(f"nd{obj.dtype.str}{obj.shape}".encode())
        h.update(np.ascontiguousarray(obj).tobytes())
    elif isinstance(obj, Classifier):
        h.update(bytes(obj.booster.save_raw("ubj")))
        _feed(h, [obj.names, obj.threshold, obj.best_iteration, obj.seed])
    elif is_dataclass(obj):
        h.update(type(obj).__name__.encode())
        for f in fields(obj):
            _feed(h, getattr(obj, f.name))
    elif isinstance(obj, dict):
        h.update(b"{")
        for k in sorted(obj, key=str):
            _feed(h, k)
            _feed(h, obj[k])
    elif isinstance(obj, (list, tuple)):
        h.update(b"[")
        for x in obj:
            _feed(h, x)
    elif isinstance(obj, (set, frozenset)):
        _feed(h, sorted(obj))
    elif hasattr(obj, "columns") and isinstance(getattr(obj, "columns"), dict):
        _feed(h, obj.columns)
    elif hasattr(obj, "_trees"):
        _feed(h, [obj.trees, obj.sample_size, obj.seed, obj._trees])
    else:
        h.update(repr(obj).encode())


def digest(obj) -> str:
    h = hashlib.sha256()
    _feed(h, obj)
    return h.hexdigest()


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    return h.hexdigest()


def stage_keys(cfg: PipelineConfig) -> dict[str, str]:
    keys: dict[str, str] = {}
    for s in STAGES:
        upstream = [keys[d] for d in _DEPS[s]]
        if s == "ingest":
            upstream.append(_file_digest(cfg.data_path) if cfg.data_path else "")
        keys[s] = cfg.section_hash(_PARAMS[s], s, *upstream)
    return keys


class StageCache:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, stage: str, key: str) -> Path:
        return self.root / f"{stage}-{key}.pkl"

    def load(self, stage: str, key: str):
        p = self.path(stage, key)
        if not p.is_file():
            return None
        try:
            with open(p, "rb") as fh:
                payload = pickle.load(fh)
        except Exception as exc:  # corrupt or truncated entry
            log.warning("ignoring unreadable cache entry %s: %s", p, exc)
            return None
        if payload.get("stage") != stage or payload.get("key") != key:
            log.warning("stale cache entry %s (hash mismatch), recomputing", p)
            return None
        return payload

    def store(self, stage: str, key: str, output) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.path(stage, key)
        tmp = p.with_suffix(f".tmp{os.getpid()}")
        with open(tmp, "wb") as fh:
            pickle.dump({"stage": stage, "key": key, "digest": digest(output), "output": output}, fh,
                        protocol=pickle.HIGHEST_PROTOCOL)
        os.replace(tmp, p)


# -- runner -----------------------------------------------------------------------

@dataclass
class StageRecord:
    stage: str
    key: str
    executed: bool
    seconds: float
    workers: int
    cardinality: int
    cardinality_kind: str
    verified: bool | None = None


@dataclass
class RunReport:
    records: list[StageRecord] = field(default_factory=list)
    result: dict = field(default_factory=dict)

    @property
    def executed(self) -> list[str]:
        return [r.stage for r in self.records if r.executed]

    def record(self, stage: str) -> StageRecord:
        for r in self.records:
            if r.stage == stage:
                return r
        raise KeyError(stage)

    def to_dict(self) -> dict:
        return {"stages": [asdict(r) for r in self.records], "result": self.result}

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _cardinality(stage: str, out: dict) -> int:
    kind = CARDINALITY[stage]
    if "graphs" in out:
        g, ag = out["graphs"]["g"], out["graphs"]["ag"]
        return {"nodes": ag.node_count, "aggregated_edges": ag.edge_count, "edges": g.edge_count}[kind]
    return len(out["ingest"]) if "ingest" in out and kind == "edges" else 0


def run_pipeline(cfg: PipelineConfig, until: str = "train_evaluate", use_cache: bool = True,
                 verify: bool = False, only: tuple[str, ...] | None = None) -> tuple[RunReport, dict]:
    """Run stages up to ``until``; returns the report and every stage output.

    ``use_cache=False`` recomputes every stage; with ``verify`` each
    recomputed output is compared with the cached copy when one exists.
    ``only`` forces re-execution of the named stages (used by benchmarks).
    """
    if until not in STAGES:
        raise QuasiflowError(f"unknown stage {until!r}")
    keys = stage_keys(cfg)
    cache = StageCache(cfg.cache_dir)
    report = RunReport()
    out: dict = {}
    for stage in STAGES[: STAGES.index(until) + 1]:
        key = keys[stage]
        forced = only is not None and stage in only
        hit = cache.load(stage, key) if use_cache and not forced else None
        t = time.perf_counter()
        if hit is not None:
            out[stage] = hit["output"]
            executed, verified = False, None
        else:
            try:
                out[stage] = BODIES[stage](cfg, out)
            except DataError as exc:
                raise StageError(stage, exc) from exc
            except QuasiflowError:
                raise
            except Exception as exc:
                raise StageError(stage, exc) from exc
            executed, verified = True, None
            if verify:
                old = cache.load(stage, key)
                if old is not None:
                    verified = old["digest"] == digest(out[stage])
                    if not verified:
                        raise StageError(stage, QuasiflowError("cached output differs from recomputation"))
            if use_cache or verify:
                cache.store(stage, key, out[stage])
        seconds = time.perf_counter() - t
        report.records.append(StageRecord(stage, key, executed, seconds, cfg.n_workers,
                                          _cardinality(stage, out), CARDINALITY[stage], verified))
        log.info("%-18s %s %.3fs", stage, "run" if executed else "cached", seconds)
    if "ingest" in out:
        report.result["dataset"] = dataset_stats(out["ingest"]).to_dict()
    if "train_evaluate" in out:
        report.result["evaluation"] = out["train_evaluate"]["summary"]
    return report, out


def write_predictions(pred: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tx_id", "score", "prediction", "label"])
        for row in zip(pred["tx_id"].tolist(), pred["score"].tolist(), pred["prediction"].tolist(),
                       pred["label"].tolist()):
            w.writerow([row[0], repr(float(row[1])), row[2], row[3]])


def write_scores(scores: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "score"])
        for i, s in enumerate(scores.tolist()):
            w.writerow([i, repr(s)])


def write_outputs(cfg: PipelineConfig, out: dict, out_dir=None) -> dict[str, str]:
    """Predictions CSV, evaluation JSON, model files and node scores."""
    root = Path(out_dir or cfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    paths = {}
    te = out.get("train_evaluate")
    if te is not None:
        paths["predictions"] = str(root / "predictions.csv")
        write_predictions(te["predictions"], paths["predictions"])
        paths["evaluation"] = str(root / "evaluation.json")
        with open(paths["evaluation"], "w") as fh:
            json.dump(te["summary"], fh, indent=2, default=_json_default)
        for clf in te["models"]:
            clf.save(root / f"model-seed{clf.seed}.qfgb")
        paths["models"] = str(root)
    if "anomaly" in out:
        paths["scores"] = str(root / "anomaly_scores.csv")
        write_scores(out["anomaly"]["scores"], paths["scores"])
    return paths


# -- ablation, leakage audit --------------------------------------------------------

def ablation_run(cfg: PipelineConfig, groups=GROUPS, use_cache: bool = True) -> list[dict]:
    """Cumulative feature-group prefixes plus transaction + anomaly on its own."""
    _, out = run_pipeline(cfg, until="assemble", use_cache=use_cache)
    a = out["assemble"]
    return ablation_grid(a["train"], a["valid"], a["test"], groups, cfg.seeds, _model_params(cfg))


def feature_outputs(cfg: PipelineConfig, d: Dataset) -> dict:
    """Run the feature stages in memory on ``d`` (no cache)."""
    out = {"ingest": d}
    for stage in STAGES[1:STAGES.index("assemble") + 1]:
        out[stage] = BODIES[stage](cfg, out)
    return out


def leakage_audit(cfg: PipelineConfig, d: Dataset | None = None) -> dict:
    """Flip every label outside the training split and rebuild all features.

    Training rows must come out bit-identical: no feature attached to a
    training transaction may depend on a validation or test label. Runs in
    account_temporal mode regardless of the configured split.
    """
    from dataclasses import replace

    acfg = replace(cfg, split_mode="account_temporal",
                   split_fractions=cfg.split_fractions if cfg.split_mode == "account_temporal"
                   else (0.65, 0.15))
    d = d if d is not None else stage_ingest(acfg, None)
    tr_acc, va_acc, te_acc = account_temporal_split(d, SplitSpec(acfg.split_mode, acfg.split_fractions))
    base = feature_outputs(acfg, d)
    rows = base["assemble"]["rows"]
    flipped = d.label.copy()
    hidden = np.concatenate([rows[1], rows[2]])
    flipped[hidden] = 1 - flipped[hidden]
    other = feature_outputs(acfg, d.with_labels(flipped))
    a, b = base["assemble"]["train"], other["assemble"]["train"]
    same = (np.array_equal(a.tx_id, b.tx_id) and a.names == b.names
            and np.array_equal(a.X, b.X, equal_nan=True) and np.array_equal(a.y, b.y))
    return {"passed": bool(same), "train_rows": len(a), "flipped_labels": int(len(hidden)),
            "test_accounts": int(len(te_acc))}


# -- timing -----------------------------------------------------------------------

SCALING_STAGES = ("subgraph_features", "flow", "temporal_flow")


def scaling_run(cfg: PipelineConfig, workers_list, stages=SCALING_STAGES) -> list[RunReport]:
    """Re-run ``stages`` at each worker count; upstream stages come from cache."""
    from dataclasses import replace

    until = max(stages, key=STAGES.index)
    run_pipeline(cfg, until=until)
    reports = []
    for w in workers_list:
        wcfg = replace(cfg, workers=int(w))
        rep, _ = run_pipeline(wcfg, until=until, only=tuple(stages))
        rep.records = [r for r in rep.records if r.stage in stages]
        reports.append(rep)
    return reports


TIMING_COLUMNS = ("stage", "workers", "seconds", "cardinality", "cardinality_kind", "executed")
PLOT_COLUMNS = ("stage", "x_metric", "x_value", "workers", "seconds")


def timing_report(reports, path=None) -> list[dict]:
    """Flatten run reports into one row per (stage, run)."""
    if isinstance(reports, RunReport):
        reports = [reports]
    rows = [{k: getattr(r, k) for k in TIMING_COLUMNS} for rep in reports for r in rep.records]
    if path is not None:
        _write_rows(path, TIMING_COLUMNS, rows)
    return rows


def emit_plots_data(reports, out_dir) -> dict[str, str]:
    """One CSV per scaling stage, one row per run, columns PLOT_COLUMNS."""
    reports = list(reports)
    if not reports:
        raise QuasiflowError("no run reports to plot")
    by_stage: dict[str, list[dict]] = {}
    for rep in reports:
        for r in rep.records:
            if r.stage in SCALING_STAGES:
                by_stage.setdefault(r.stage, []).append({
                    "stage": r.stage, "x_metric": r.cardinality_kind, "x_value": r.cardinality,
                    "workers": r.workers, "seconds": r.seconds,
                })
    paths = {}
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    for stage, rows in by_stage.items():
        paths[stage] = str(Path(out_dir) / f"scaling_{stage}.csv")
        _write_rows(paths[stage], PLOT_COLUMNS, rows)
    return paths


def _write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in columns})
