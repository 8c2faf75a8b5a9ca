"""Hop-wise money-flow quantification for dispenser, passthrough and sink profiles.

Starting from a node, the frontier holds (target, carried amount) path
edges. Each hop joins the frontier with the next edges, carries
``min(edge amount, previous carried amount)`` (clipped by the origin's
total), keeps the ``top_n`` largest and records the hop's statistics.
Walks may revisit nodes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DataError
from .graph import AggregatedGraph, MultiGraph
from .parallel import chunked, parallel_map

PROFILES = ("dispenser", "passthrough", "sink")
STATS = ("reached", "sum", "max", "mean")
EPS = 1e-12


@dataclass(frozen=True)
class HopStats:
    hop: int
    reached_accounts: int
    carried_sum: float
    carried_max: float
    carried_mean: float


@dataclass(frozen=True)
class FlowProfile:
    node: int
    profile: str
    per_hop: list[HopStats]
    ratio: float | None = None


@dataclass
class FlowTable:
    """Flow statistics for many nodes: ``stats[profile][stat]`` is (n_nodes, hops)."""

    nodes: np.ndarray
    hops: int
    stats: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    ratio: np.ndarray | None = None

    def profile(self, row: int, profile: str) -> FlowProfile:
        st = self.stats[profile]
        per_hop = [
            HopStats(h + 1, int(st["reached"][row, h]), float(st["sum"][row, h]),
                     float(st["max"][row, h]), float(st["mean"][row, h]))
            for h in range(self.hops)
        ]
        ratio = None
        if profile == "passthrough" and self.ratio is not None:
            ratio = float(self.ratio[row])
        return FlowProfile(int(self.nodes[row]), profile, per_hop, ratio)

    def columns(self, prefix: str = "flow") -> tuple[list[str], np.ndarray]:
        """Flatten into named feature columns (node rows)."""
        names, cols = [], []
        for p in self.stats:
            for s in STATS:
                for h in range(self.hops):
                    names.append(f"{prefix}_{p}_h{h + 1}_{s}")
                    cols.append(self.stats[p][s][:, h].astype(np.float64))
        if self.ratio is not None:
            names.append(f"{prefix}_passthrough_ratio")
            cols.append(self.ratio)
        return names, np.column_stack(cols) if cols else np.zeros((len(self.nodes), 0))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "profile", "hop", "reached", "sum", "max", "mean"])
            for p, st in self.stats.items():
                for r, node in enumerate(self.nodes.tolist()):
                    for h in range(self.hops):
                        w.writerow([node, p, h + 1, int(st["reached"][r, h]),
                                    repr(float(st["sum"][r, h])), repr(float(st["max"][r, h])),
                                    repr(float(st["mean"][r, h]))])


def _check_node(n: int, node: int) -> None:
    if not 0 <= node < n:
        raise DataError(f"unknown node {node}")


def _top(top_n) -> int:
    if top_n is None:
        return 0
    if top_n < 1:
        raise ValueError("top_n must be >= 1 or None for unlimited")
    return int(top_n)


def _as_dict(res) -> dict[str, np.ndarray]:
    return dict(zip(STATS, res))


def _min_stats(a: dict, b: dict) -> dict:
    return {s: np.minimum(a[s], b[s]) for s in STATS}


def passthrough_ratio(S: np.ndarray, R: np.ndarray) -> np.ndarray:
    return np.minimum(S, R) / np.maximum(np.maximum(S, R), EPS)


# -- static (aggregated graph) -------------------------------------------------

def _static_chunk(shared, nodes):
    fwd, rev, S, R, hops, top_n, profiles = shared
    out = {}
    if "dispenser" in profiles or "passthrough" in profiles:
        out["dispenser"] = _as_dict(_kernels.flow_static(*fwd, S, nodes, hops, top_n))
    if "sink" in profiles or "passthrough" in profiles:
        out["sink"] = _as_dict(_kernels.flow_static(*rev, R, nodes, hops, top_n))
    return out


def _merge(parts: list[dict], profiles) -> dict:
    merged = {}
    for p in parts[0]:
        merged[p] = {s: np.concatenate([part[p][s] for part in parts]) for s in STATS}
    return merged


def flow_table(ag: AggregatedGraph, nodes=None, hops: int = 5, top_n: int | None = 50,
               profiles=PROFILES, workers: int = 1) -> FlowTable:
    """Static flow profiles for ``nodes`` (default: all), computed as a parallel map."""
    if hops < 1:
        raise ValueError("hops must be >= 1")
    nodes = np.arange(ag.node_count, dtype=np.int64) if nodes is None else np.asarray(nodes, np.int64)
    for v in nodes[(nodes < 0) | (nodes >= ag.node_count)][:1].tolist():
        _check_node(ag.node_count, v)
    fwd = (ag.indptr, ag.target, ag.A)
    shared = (fwd, ag.reverse_csr(), ag.S, ag.R, hops, _top(top_n), tuple(profiles))
    chunks = chunked(nodes, workers * 4) if len(nodes) else [nodes]
    parts = parallel_map(_static_chunk, chunks, workers, shared)
    stats = _merge(parts, profiles)
    ratio = None
    if "passthrough" in profiles:
        stats["passthrough"] = _min_stats(stats["dispenser"], stats["sink"])
        ratio = passthrough_ratio(ag.S[nodes], ag.R[nodes])
    ordered = {p: stats[p] for p in PROFILES if p in profiles}
    return FlowTable(nodes, hops, ordered, ratio)


def dispense_flow(ag: AggregatedGraph, node: int, hops: int = 5, top_n: int | None = 50) -> FlowProfile:
    _check_node(ag.node_count, node)
    return flow_table(ag, [node], hops, top_n, ("dispenser",)).profile(0, "dispenser")


def sink_flow(ag: AggregatedGraph, node: int, hops: int = 5, top_n: int | None = 50) -> FlowProfile:
    _check_node(ag.node_count, node)
    return flow_table(ag, [node], hops, top_n, ("sink",)).profile(0, "sink")


def passthrough_flow(ag: AggregatedGraph, node: int, hops: int = 5, top_n: int | None = 50) -> FlowProfile:
    _check_node(ag.node_count, node)
    return flow_table(ag, [node], hops, top_n, ("passthrough",)).profile(0, "passthrough")


# -- temporal (multigraph) -----------------------------------------------------

def _temporal_chunk(shared, nodes):
    fwd, rev, S, R, hops, top_n, strict, profiles = shared
    out = {}
    if "dispenser" in profiles or "passthrough" in profiles:
        out["dispenser"] = _as_dict(_kernels.flow_temporal(*fwd, S, nodes, hops, top_n, strict))
    if "sink" in profiles or "passthrough" in profiles:
        out["sink"] = _as_dict(_kernels.flow_temporal(*rev, R, nodes, hops, top_n, strict))
    return out


def node_totals(g: MultiGraph) -> tuple[np.ndarray, np.ndarray]:
    """Total sent / received per node over raw transactions."""
    S = _kernels.segment_sum(g.amount, g.indptr)
    R = _kernels.segment_sum(g.amount[g.rev_order], g.rev_indptr)
    return S, R


def temporal_flow_table(g: MultiGraph, nodes=None, hops: int = 5, top_n: int | None = 50,
                        profiles=PROFILES, strict_chronology: bool = False,
                        workers: int = 1) -> FlowTable:
    """Chronology-constrained flow profiles on raw transactions.

    A continuation edge joins only if its timestamp is >= the previous
    transaction's (> with ``strict_chronology``). Sink walks run on the
    reversed graph with negated timestamps, so they step back in time.
    """
    if hops < 1:
        raise ValueError("hops must be >= 1")
    nodes = np.arange(g.node_count, dtype=np.int64) if nodes is None else np.asarray(nodes, np.int64)
    for v in nodes[(nodes < 0) | (nodes >= g.node_count)][:1].tolist():
        _check_node(g.node_count, v)
    S, R = node_totals(g)
    fwd = (g.indptr, g.target, g.amount, g.timestamp, g.tx_id)
    rev = g.reverse_csr(negate_time=True)
    shared = (fwd, rev, S, R, hops, _top(top_n), bool(strict_chronology), tuple(profiles))
    chunks = chunked(nodes, workers * 4) if len(nodes) else [nodes]
    parts = parallel_map(_temporal_chunk, chunks, workers, shared)
    stats = _merge(parts, profiles)
    ratio = None
    if "passthrough" in profiles:
        stats["passthrough"] = _min_stats(stats["dispenser"], stats["sink"])
        ratio = passthrough_ratio(S[nodes], R[nodes])
    ordered = {p: stats[p] for p in PROFILES if p in profiles}
    return FlowTable(nodes, hops, ordered, ratio)


def temporal_flow(g: MultiGraph, node: int, profile: str = "dispenser", hops: int = 5,
                  top_n: int | None = 50, strict_chronology: bool = False) -> FlowProfile:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    _check_node(g.node_count, node)
    t = temporal_flow_table(g, [node], hops, top_n, (profile,), strict_chronology)
    return t.profile(0, profile)


# -- account types ---------------------------------------------------------------

ACCOUNT_TYPES = ("dispenser", "passthrough", "sink", "mixed", "inactive")


def classify_totals(S: np.ndarray, R: np.ndarray, theta_pass: float = 0.8,
                    theta_ratio: float = 0.1) -> np.ndarray:
    """Vectorised account typing; returns indices into ACCOUNT_TYPES."""
    if not (0 < theta_pass < 1 and 0 < theta_ratio < 1):
        raise ValueError("thresholds must lie in (0, 1)")
    S = np.asarray(S, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    tot = S + R
    out = np.full(len(S), 3, dtype=np.int8)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.minimum(S, R) / np.maximum(S, R)
        r_share = R / tot
        s_share = S / tot
    active = tot > 0
    is_sink = active & (s_share <= theta_ratio)
    is_disp = active & (r_share <= theta_ratio)
    is_pass = active & (ratio >= theta_pass)
    # later assignments take precedence
    out[is_sink] = 2
    out[is_disp] = 0
    out[is_pass] = 1
    out[~active] = 4
    return out


def classify_account_type(ag: AggregatedGraph, node: int, theta_pass: float = 0.8,
                          theta_ratio: float = 0.1) -> str:
    _check_node(ag.node_count, node)
    code = classify_totals(ag.S[node:node + 1], ag.R[node:node + 1], theta_pass, theta_ratio)
    return ACCOUNT_TYPES[int(code[0])]
