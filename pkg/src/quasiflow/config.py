"""Pipeline configuration: a flat INI file with one section per stage.

Every key is optional; defaults are listed in :data:`DEFAULT_CONFIG`,
which doubles as the documented template written by ``quasiflow
config-template``.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .features import GROUPS
from .parallel import available_workers

DEFAULT_CONFIG = """\
[data]
# transaction file and its schema: ibm_aml | eth_phishing | generic
path =
schema = generic

[split]
# transaction_temporal cuts rows; account_temporal cuts accounts by first timestamp
mode = transaction_temporal
train = 0.6
valid = 0.2

[communities]
# leiden resolution (> 0) and seed
resolution = 1.0
leiden_seed = 0
# passes over all nodes; -1 repeats until the partition stops changing
leiden_iterations = -1
# ego expansion: hops in each direction, restart in (0, 1), per-hop and total caps
n_hops = 2
restart = 0.15
top_k = 50
max_size = 500

[flow]
# hops H >= 1; top_n = 0 keeps every path edge
hops = 5
top_n = 50
# account typing thresholds in (0, 1)
theta_pass = 0.8
theta_ratio = 0.1
# temporal join uses > instead of >= when true
strict_chronology = false

[subgraph]
# exact diameter up to this many nodes, double-sweep estimate above
diameter_cap = 10000

[anomaly]
trees = 100
sample_size = 256
seed = 0

[model]
rounds = 500
max_depth = 8
learning_rate = 0.1
early_stopping = 50
subsample = 0.8
colsample_bytree = 0.8
# weight positives by N_neg / N_pos
class_weight = true
# comma-separated feature groups used for training
groups = transaction, random_walk, modularity, flows, anomaly
seeds = 0, 1, 2, 3, 4

[run]
# 0 = all available cores
workers = 0
cache_dir = .quasiflow-cache
out_dir = quasiflow-out
# bytes; empty = unlimited (no spill store)
memory_budget =
"""


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(",", " ").split())


@dataclass
class PipelineConfig:
    data_path: str = ""
    schema: str = "generic"
    split_mode: str = "transaction_temporal"
    split_fractions: tuple[float, float] = (0.6, 0.2)
    resolution: float = 1.0
    leiden_seed: int = 0
    leiden_iterations: int = -1
    n_hops: int = 2
    restart: float = 0.15
    top_k: int = 50
    max_size: int = 500
    hops: int = 5
    top_n: int = 50
    theta_pass: float = 0.8
    theta_ratio: float = 0.1
    strict_chronology: bool = False
    diameter_cap: int = 10000
    trees: int = 100
    sample_size: int = 256
    anomaly_seed: int = 0
    rounds: int = 500
    max_depth: int = 8
    learning_rate: float = 0.1
    early_stopping: int = 50
    subsample: float = 0.8
    colsample_bytree: float = 0.8
    class_weight: bool = True
    groups: tuple[str, ...] = GROUPS
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    workers: int = 0
    cache_dir: str = ".quasiflow-cache"
    out_dir: str = "quasiflow-out"
    memory_budget: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_workers(self) -> int:
        return self.workers if self.workers > 0 else available_workers()

    def validate(self) -> "PipelineConfig":
        from .ingest import SCHEMAS

        checks = [
            (self.schema in SCHEMAS, f"unknown schema {self.schema!r}"),
            (self.split_mode in ("transaction_temporal", "account_temporal"),
             f"unknown split mode {self.split_mode!r}"),
            (0 < self.split_fractions[0] < 1 and 0 < self.split_fractions[1] < 1
             and sum(self.split_fractions) < 1, "split fractions must be in (0,1) with sum < 1"),
            (self.resolution > 0, "resolution must be > 0"),
            (self.leiden_iterations == -1 or self.leiden_iterations >= 1,
             "leiden_iterations must be -1 or >= 1"),
            (self.n_hops >= 1, "n_hops must be >= 1"),
            (0 < self.restart < 1, "restart must be in (0, 1)"),
            (self.top_k >= 1 and self.max_size >= 1, "top_k and max_size must be >= 1"),
            (self.hops >= 1, "hops must be >= 1"),
            (self.top_n >= 0, "top_n must be >= 0"),
            (0 < self.theta_pass < 1 and 0 < self.theta_ratio < 1, "thresholds must be in (0, 1)"),
            (self.diameter_cap >= 2, "diameter_cap must be >= 2"),
            (self.trees >= 1 and self.sample_size >= 2, "trees >= 1 and sample_size >= 2 required"),
            (self.rounds >= 1 and self.max_depth >= 1, "rounds and max_depth must be >= 1"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (0 < self.subsample <= 1 and 0 < self.colsample_bytree <= 1, "sampling rates must be in (0, 1]"),
            (len(self.seeds) >= 1, "at least one seed is required"),
            (self.workers >= 0, "workers must be >= 0"),
            (self.memory_budget is None or self.memory_budget > 0, "memory_budget must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        unknown = [g for g in self.groups if g not in GROUPS]
        if unknown:
            raise ConfigError(f"unknown feature group(s): {', '.join(unknown)}")
        return self

    def section_hash(self, keys, *upstream: str) -> str:
        payload = {k: getattr(self, k) for k in keys}
        blob = json.dumps([payload, list(upstream)], sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_KEYS = {
    ("data", "path"): ("data_path", str),
    ("data", "schema"): ("schema", str),
    ("split", "mode"): ("split_mode", str),
    ("communities", "resolution"): ("resolution", float),
    ("communities", "leiden_seed"): ("leiden_seed", int),
    ("communities", "leiden_iterations"): ("leiden_iterations", int),
    ("communities", "n_hops"): ("n_hops", int),
    ("communities", "restart"): ("restart", float),
    ("communities", "top_k"): ("top_k", int),
    ("communities", "max_size"): ("max_size", int),
    ("flow", "hops"): ("hops", int),
    ("flow", "top_n"): ("top_n", int),
    ("flow", "theta_pass"): ("theta_pass", float),
    ("flow", "theta_ratio"): ("theta_ratio", float),
    ("flow", "strict_chronology"): ("strict_chronology", "bool"),
    ("subgraph", "diameter_cap"): ("diameter_cap", int),
    ("anomaly", "trees"): ("trees", int),
    ("anomaly", "sample_size"): ("sample_size", int),
    ("anomaly", "seed"): ("anomaly_seed", int),
    ("model", "rounds"): ("rounds", int),
    ("model", "max_depth"): ("max_depth", int),
    ("model", "learning_rate"): ("learning_rate", float),
    ("model", "early_stopping"): ("early_stopping", int),
    ("model", "subsample"): ("subsample", float),
    ("model", "colsample_bytree"): ("colsample_bytree", float),
    ("model", "class_weight"): ("class_weight", "bool"),
    ("model", "groups"): ("groups", "groups"),
    ("model", "seeds"): ("seeds", "ints"),
    ("run", "workers"): ("workers", int),
    ("run", "cache_dir"): ("cache_dir", str),
    ("run", "out_dir"): ("out_dir", str),
    ("run", "memory_budget"): ("memory_budget", "optint"),
}


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read defaults, then ``path`` (if given), then ``overrides`` (attribute -> value)."""
    cp = configparser.ConfigParser()
    cp.read_string(DEFAULT_CONFIG)
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    known_sections = {s for s, _ in _KEYS} | {"split"}
    for section in cp.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown config section [{section}]")
        for key in cp[section]:
            if (section, key) not in _KEYS and not (section == "split" and key in ("train", "valid")):
                raise ConfigError(f"unknown config key {section}.{key}")
    cfg = PipelineConfig()
    for (section, key), (attr, kind) in _KEYS.items():
        raw = cp.get(section, key).strip()
        try:
            if kind == "bool":
                val = cp.getboolean(section, key)
            elif kind == "ints":
                val = _ints(raw)
            elif kind == "groups":
                val = tuple(g.strip() for g in raw.split(",") if g.strip())
            elif kind == "optint":
                val = int(raw) if raw else None
            else:
                val = kind(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from exc
        setattr(cfg, attr, val)
    try:
        cfg.split_fractions = (cp.getfloat("split", "train"), cp.getfloat("split", "valid"))
    except ValueError as exc:
        raise ConfigError(f"split fractions: {exc}") from exc
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if not hasattr(cfg, k):
            raise ConfigError(f"unknown override {k}")
        setattr(cfg, k, v)
    return cfg.validate()
