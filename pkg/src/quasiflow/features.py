"""Node feature vectors and the transaction-level feature matrix.

Node columns carry a group tag (``random_walk``, ``modularity``, ``flows``)
so ablations can select cumulative subsets; ``transaction`` columns come
from the transaction row itself and ``anomaly`` columns from the endpoint
anomaly scores.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anomaly import interaction_features
from .columnar import Table
from .communities import EGO, LEIDEN, Partition
from .errors import DataError
from .flow import ACCOUNT_TYPES, FlowTable
from .graph import AggregatedGraph, MultiGraph
from .ingest import Dataset

GROUPS = ("transaction", "random_walk", "modularity", "flows", "anomaly")
INTERACTION = ("src_score", "tgt_score", "score_product", "score_max", "score_min", "score_absdiff")
_SKIP = {"community_type", "community_id"}


@dataclass
class NodeFeatures:
    node: np.ndarray
    names: list[str]
    groups: list[str]
    X: np.ndarray

    def select(self, groups) -> "NodeFeatures":
        keep = [i for i, g in enumerate(self.groups) if g in groups]
        return NodeFeatures(self.node, [self.names[i] for i in keep],
                            [self.groups[i] for i in keep], self.X[:, keep])


def _community_columns(table: Table, ctype: int, key: np.ndarray, n_nodes: int, prefix: str):
    """Broadcast community rows of one type to nodes via ``key`` (community id per node)."""
    mask = table["community_type"] == ctype
    cid = table["community_id"][mask]
    order = np.argsort(cid)
    cid = cid[order]
    names, cols = [], []
    pos = np.searchsorted(cid, key)
    found = (pos < len(cid)) & (cid[np.minimum(pos, max(len(cid) - 1, 0))] == key) if len(cid) else \
        np.zeros(n_nodes, dtype=bool)
    for name in table.names:
        if name in _SKIP:
            continue
        vals = table[name][mask][order].astype(np.float64)
        col = np.full(n_nodes, np.nan)
        if len(cid):
            col[found] = vals[pos[found]]
        names.append(f"{prefix}_{name}")
        cols.append(col)
    return names, cols


def build_node_features(ag: AggregatedGraph, g: MultiGraph, node_type: np.ndarray,
                        static_flow: FlowTable | None = None,
                        temporal_flow: FlowTable | None = None,
                        community_table: Table | None = None,
                        partition: Partition | None = None) -> NodeFeatures:
    n = ag.node_count
    names: list[str] = []
    groups: list[str] = []
    cols: list[np.ndarray] = []

    def add(group, ns, cs):
        names.extend(ns)
        groups.extend([group] * len(ns))
        cols.extend(np.asarray(c, dtype=np.float64) for c in cs)

    if community_table is not None:
        ns, cs = _community_columns(community_table, EGO, np.arange(n), n, "ego")
        add("random_walk", ns, cs)
        if partition is not None:
            ns, cs = _community_columns(community_table, LEIDEN, partition.assignment, n, "leiden")
            add("modularity", ns, cs)

    agg = {
        "node_sent": ag.S,
        "node_received": ag.R,
        "node_out_degree": np.diff(ag.indptr),
        "node_in_degree": np.diff(ag.rev_indptr),
        "node_tx_out": np.diff(g.indptr),
        "node_tx_in": np.diff(g.rev_indptr),
    }
    for i, t in enumerate(ACCOUNT_TYPES):
        agg[f"node_is_{t}"] = (node_type == i).astype(np.float64)
    add("flows", list(agg), list(agg.values()))
    for table, prefix in ((static_flow, "flow"), (temporal_flow, "tflow")):
        if table is None:
            continue
        if not np.array_equal(table.nodes, np.arange(n)):
            raise DataError("flow tables must cover every node in id order")
        ns, mat = table.columns(prefix)
        add("flows", ns, list(mat.T))
    X = np.column_stack(cols) if cols else np.zeros((n, 0))
    return NodeFeatures(np.arange(n, dtype=np.int64), names, groups, X)


@dataclass
class FeatureMatrix:
    tx_id: np.ndarray
    names: list[str]
    groups: list[str]
    X: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.tx_id)

    def select(self, groups) -> "FeatureMatrix":
        keep = [i for i, g in enumerate(self.groups) if g in groups or g == "flag"]
        return FeatureMatrix(self.tx_id, [self.names[i] for i in keep],
                             [self.groups[i] for i in keep], self.X[:, keep], self.y)


def transaction_base(d: Dataset, rows: np.ndarray, t0: int | None = None) -> tuple[list[str], list[np.ndarray]]:
    ts = d.timestamp[rows]
    t0 = int(d.timestamp.min()) if t0 is None else t0
    names = ["amount", "log_amount", "hour_of_day", "day_of_week", "trend"]
    cols = [
        d.amount[rows],
        np.log1p(d.amount[rows]),
        (ts % 86400) / 3600.0,
        ((ts // 86400) + 4) % 7,  # epoch day 0 was a Thursday
        (ts - t0).astype(np.float64),
    ]
    for key, arr in sorted(d.extras.items()):
        if arr.dtype.kind == "f":
            names.append(key)
            cols.append(arr[rows])
        else:
            codes = {v: i for i, v in enumerate(sorted(set(arr.tolist())))}
            names.append(f"{key}_code")
            cols.append(np.array([codes[v] for v in arr[rows].tolist()], dtype=np.float64))
    if "receiving_currency" in d.extras and "payment_currency" in d.extras:
        names.append("same_currency")
        cols.append((d.extras["receiving_currency"][rows] == d.extras["payment_currency"][rows])
                    .astype(np.float64))
    return names, [np.asarray(c, dtype=np.float64) for c in cols]


def assemble_features(d: Dataset, rows, node_features: NodeFeatures,
                      scores: np.ndarray | None = None, t0: int | None = None) -> FeatureMatrix:
    """Join node features to each transaction once for the source, once for the target.

    Rows come back sorted by tx_id. Endpoints without a node-feature row are
    median-imputed and flagged; ``scores`` (per node id, NaN = unscored)
    add the interaction columns.
    """
    rows = np.asarray(rows, dtype=np.int64)
    rows = rows[np.argsort(d.tx_id[rows], kind="stable")]
    node = node_features.node
    if len(np.unique(node)) != len(node):
        raise DataError("duplicate node feature rows")
    lookup = np.full(d.n_accounts, -1, dtype=np.int64)
    valid = (node >= 0) & (node < d.n_accounts)
    lookup[node[valid]] = np.flatnonzero(valid)
    names, cols = transaction_base(d, rows, t0)
    groups = ["transaction"] * len(names)
    medians = np.nanmedian(node_features.X, axis=0) if len(node_features.X) and node_features.X.shape[1] else \
        np.zeros(node_features.X.shape[1])
    medians = np.where(np.isnan(medians), 0.0, medians)
    flags = {}
    for side, ids in (("src", d.source[rows]), ("tgt", d.target[rows])):
        idx = lookup[ids]
        missing = idx < 0
        block = node_features.X[np.maximum(idx, 0)] if len(node_features.X) else \
            np.zeros((len(rows), node_features.X.shape[1]))
        if missing.any():
            block = block.copy()
            block[missing] = medians
        names.extend(f"{side}_{n}" for n in node_features.names)
        groups.extend(node_features.groups)
        cols.extend(block.T)
        flags[f"{side}_imputed"] = missing.astype(np.float64)
    if scores is not None:
        full = np.full(d.n_accounts, np.nan)
        full[: len(scores)] = scores
        inter = interaction_features(full, d.source[rows], d.target[rows])
        for k in INTERACTION:
            names.append(k)
            groups.append("anomaly")
            cols.append(inter[k])
    for k, v in flags.items():
        names.append(k)
        groups.append("flag")
        cols.append(v)
    X = np.column_stack(cols) if cols else np.zeros((len(rows), 0))
    return FeatureMatrix(d.tx_id[rows], names, groups, X, d.label[rows].astype(np.int64))
