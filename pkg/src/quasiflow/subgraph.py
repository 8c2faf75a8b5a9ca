"""Per-community features on induced subgraphs, computed as a parallel map.

Every community (Leiden or ego) becomes one feature row: membership counts
by account type, degree distributions, diameter, assortativity, block and
cut-vertex counts, turnover volumes and amount-weighted time statistics.
"""
from __future__ import annotations

import math
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .columnar import Table
from .communities import MembershipTable
from .errors import DataError
from .flow import ACCOUNT_TYPES
from .graph import MultiGraph
from .parallel import chunked, parallel_map

DIAMETER_CAP = 10_000
SPILL_MAGIC = b"QFSP"
SPILL_VERSION = 1
_SPILL_HEAD = struct.Struct("<4sIQ")
_SPILL_REC = struct.Struct("<bqqqq")  # ctype, cid, shard, offset, n_edges
_EDGE_BYTES = 32


@dataclass(frozen=True)
class EdgeSlice:
    source: np.ndarray
    target: np.ndarray
    amount: np.ndarray
    timestamp: np.ndarray

    def __len__(self) -> int:
        return len(self.source)


def induced_subgraph(g: MultiGraph, members) -> EdgeSlice:
    """All multigraph edges with both endpoints in ``members``."""
    members = np.unique(np.asarray(members, dtype=np.int64))
    if len(members) == 0:
        raise DataError("empty member set")
    lo = g.indptr[members]
    deg = g.indptr[members + 1] - lo
    owner = np.repeat(np.arange(len(members)), deg)
    offs = np.cumsum(deg) - deg
    pos = lo[owner] + (np.arange(owner.size) - offs[owner])
    keep = pos[np.isin(g.target[pos], members, assume_unique=False)]
    return EdgeSlice(g.source[keep], g.target[keep], g.amount[keep], g.timestamp[keep])


def weighted_time_features(amounts, chi) -> tuple[float, float, float, bool]:
    """Amount-weighted mean, std and lower median of shifted timestamps.

    Returns ``(mean, std, median, unweighted)``; when all amounts are zero the
    plain statistics are returned with ``unweighted=True``.
    """
    a = np.asarray(amounts, dtype=np.float64)
    x = np.asarray(chi, dtype=np.float64)
    if len(a) == 0:
        raise DataError("no transactions")
    total = math.fsum(a.tolist())
    unweighted = total <= 0
    if unweighted:
        a = np.ones_like(x)
        total = float(len(x))
    mean = math.fsum((a * x).tolist()) / total
    var = math.fsum((a * (x - mean) ** 2).tolist()) / total
    order = np.argsort(x, kind="stable")
    cum = np.cumsum(a[order])
    k = int(np.searchsorted(cum, total / 2.0, side="left"))
    median = float(x[order][min(k, len(x) - 1)])
    return mean, math.sqrt(max(var, 0.0)), median, unweighted


def _dist_stats(x: np.ndarray) -> tuple[float, float, float, float]:
    if len(x) == 0:
        return 0.0, 0.0, 0.0, 0.0
    x = x.astype(np.float64)
    return float(x.min()), float(x.max()), float(x.mean()), float(x.std())


def degree_block(members: np.ndarray, sl: EdgeSlice) -> dict:
    """Distinct-counterparty in/out/total degrees inside the community."""
    n = len(members)
    out = {}
    if len(sl):
        ls = np.searchsorted(members, sl.source)
        lt = np.searchsorted(members, sl.target)
        key = np.unique(ls * n + lt)
        ds, dt = key // n, key % n
        outdeg = np.bincount(ds, minlength=n)
        indeg = np.bincount(dt, minlength=n)
        u, v = np.minimum(ds, dt), np.maximum(ds, dt)
        und = np.unique(u * n + v)
        totdeg = np.bincount(und // n, minlength=n) + np.bincount(und % n, minlength=n)
    else:
        outdeg = indeg = totdeg = np.zeros(n, dtype=np.int64)
    for name, deg in (("in", indeg), ("out", outdeg), ("total", totdeg)):
        for stat, val in zip(("min", "max", "mean", "std"), _dist_stats(deg)):
            out[f"deg_{name}_{stat}"] = val
    return out


def undirected_simple(members: np.ndarray, sl: EdgeSlice) -> tuple[np.ndarray, np.ndarray]:
    """Local-id edge list (u < v, unique) of the slice's undirected projection."""
    n = len(members)
    if len(sl) == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e
    ls = np.searchsorted(members, sl.source)
    lt = np.searchsorted(members, sl.target)
    key = np.unique(np.minimum(ls, lt) * n + np.maximum(ls, lt))
    return key // n, key % n


def structure_block(members: np.ndarray, sl: EdgeSlice, diameter_cap: int = DIAMETER_CAP) -> dict:
    u, v = undirected_simple(members, sl)
    diam, approx, bcc, art, assort = _kernels.graph_metrics(len(members), u, v, diameter_cap)
    return {
        "diameter": int(diam),
        "diameter_approx": int(approx),
        "assortativity": float(assort),
        "biconnected_count": int(bcc),
        "articulation_count": int(art),
    }


def turnover_block(members: np.ndarray, sl: EdgeSlice, S: np.ndarray, R: np.ndarray) -> dict:
    """Per-aggregated-edge amount stats and the boundary turnover.

    ``S``/``R`` are whole-graph sent/received totals per node, so the volume
    entering the member set is sum(R) minus internal volume, and likewise
    for the volume leaving.
    """
    internal = math.fsum(sl.amount.tolist())
    entering = math.fsum(R[members].tolist()) - internal
    leaving = math.fsum(S[members].tolist()) - internal
    out = {"turnover_in": max(entering, 0.0), "turnover_out": max(leaving, 0.0)}
    out["boundary_turnover"] = abs(out["turnover_in"] - out["turnover_out"])
    if len(sl):
        key = sl.source * (int(members.max()) + 1) + sl.target
        order = np.lexsort((sl.amount, key))
        k = key[order]
        start = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
        edge_amt = _kernels.segment_sum(sl.amount[order], np.r_[start, len(k)].astype(np.int64))
        mn, mx, mean, _ = _dist_stats(edge_amt)
        out.update(edge_amount_min=mn, edge_amount_max=mx, edge_amount_mean=mean,
                   edge_amount_sum=float(math.fsum(edge_amt.tolist())))
    else:
        out.update(edge_amount_min=0.0, edge_amount_max=0.0, edge_amount_mean=0.0,
                   edge_amount_sum=0.0)
    return out


def time_block(sl: EdgeSlice, t0: int) -> dict:
    if len(sl) == 0:
        nan = float("nan")
        return {"tf_mean": nan, "tf_std": nan, "tf_median": nan, "tf_unweighted": 0}
    mean, std, med, unw = weighted_time_features(sl.amount, sl.timestamp - t0)
    return {"tf_mean": mean, "tf_std": std, "tf_median": med, "tf_unweighted": int(unw)}


def community_features(members: np.ndarray, sl: EdgeSlice, node_type: np.ndarray,
                       S: np.ndarray, R: np.ndarray, t0: int,
                       diameter_cap: int = DIAMETER_CAP) -> dict:
    members = np.asarray(members, dtype=np.int64)
    counts = np.bincount(node_type[members], minlength=len(ACCOUNT_TYPES))
    row = {"size": len(members), "n_transactions": len(sl)}
    for name, c in zip(ACCOUNT_TYPES, counts.tolist()):
        row[f"n_{name}"] = int(c)
    row.update(degree_block(members, sl))
    row.update(structure_block(members, sl, diameter_cap))
    row.update(turnover_block(members, sl, S, R))
    row.update(time_block(sl, t0))
    return row


FEATURE_NAMES = list(community_features(
    np.array([0]), EdgeSlice(*(np.zeros(0, dtype=np.int64),) * 2, np.zeros(0), np.zeros(0, dtype=np.int64)),
    np.zeros(1, dtype=np.int8), np.zeros(1), np.zeros(1), 0,
))
INT_FEATURES = {"size", "n_transactions", "diameter", "diameter_approx", "biconnected_count",
                "articulation_count", "tf_unweighted"} | {f"n_{t}" for t in ACCOUNT_TYPES}


# -- parallel map with optional spill store -----------------------------------

@dataclass(frozen=True)
class _Shared:
    g: MultiGraph
    node_type: np.ndarray
    S: np.ndarray
    R: np.ndarray
    t0: int
    diameter_cap: int
    spill_dir: str | None


def _rows_in_memory(sh: _Shared, groups):
    rows = []
    for _, _, members in groups:
        sl = induced_subgraph(sh.g, members)
        rows.append(community_features(members, sl, sh.node_type, sh.S, sh.R, sh.t0, sh.diameter_cap))
    return rows


def _spill_shard(sh: _Shared, job):
    shard, groups = job
    path = Path(sh.spill_dir) / f"slices-{shard:05d}.bin"
    recs = []
    offset = 0
    with open(path, "wb") as fh:
        for t, c, members in groups:
            sl = induced_subgraph(sh.g, members)
            for arr, dt in ((sl.source, "<i8"), (sl.target, "<i8"), (sl.amount, "<f8"),
                            (sl.timestamp, "<i8")):
                fh.write(arr.astype(dt).tobytes())
            recs.append((t, c, shard, offset, len(sl)))
            offset += _EDGE_BYTES * len(sl)
    return recs


def _read_slice(buf: bytes, offset: int, n: int) -> EdgeSlice:
    cols = []
    for i, dt in enumerate(("<i8", "<i8", "<f8", "<i8")):
        cols.append(np.frombuffer(buf, dtype=dt, count=n, offset=offset + 8 * n * i).astype(
            np.float64 if dt == "<f8" else np.int64))
    return EdgeSlice(*cols)


def _rows_from_spill(sh: _Shared, job):
    shard, groups, recs = job
    buf = (Path(sh.spill_dir) / f"slices-{shard:05d}.bin").read_bytes()
    rows = []
    for (t, c, members), rec in zip(groups, recs):
        assert rec[0] == t and rec[1] == c
        sl = _read_slice(buf, rec[3], rec[4])
        rows.append(community_features(members, sl, sh.node_type, sh.S, sh.R, sh.t0, sh.diameter_cap))
    return rows


def write_manifest(path, records) -> None:
    with open(path, "wb") as fh:
        fh.write(_SPILL_HEAD.pack(SPILL_MAGIC, SPILL_VERSION, len(records)))
        for r in records:
            fh.write(_SPILL_REC.pack(*r))


def read_manifest(path) -> list[tuple]:
    buf = Path(path).read_bytes()
    magic, version, count = _SPILL_HEAD.unpack_from(buf, 0)
    if magic != SPILL_MAGIC or version != SPILL_VERSION:
        raise DataError(f"{path}: not a spill manifest")
    return [_SPILL_REC.unpack_from(buf, _SPILL_HEAD.size + i * _SPILL_REC.size) for i in range(count)]


def estimate_slice_bytes(g: MultiGraph, table: MembershipTable) -> int:
    """Upper bound on spilled bytes: every out-edge of every member."""
    return int((g.indptr[table.node + 1] - g.indptr[table.node]).sum()) * _EDGE_BYTES


def parallel_feature_map(table: MembershipTable, g: MultiGraph, workers: int = 1,
                         node_type: np.ndarray | None = None, S=None, R=None,
                         t0: int | None = None, diameter_cap: int = DIAMETER_CAP,
                         memory_budget: int | None = None, spill_dir=None) -> Table:
    """One feature row per community, identical for any ``workers``.

    When the estimated slice volume exceeds ``memory_budget`` bytes, slices
    are first written to a spill store (shard files plus a manifest) and
    then read back by at most ``memory_budget // largest shard`` concurrent
    readers.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    groups = list(table.groups())
    for t, c, members in groups:
        if len(members) and (members.min() < 0 or members.max() >= g.node_count):
            raise DataError(f"community ({t}, {c}) references an unknown node")
    if node_type is None:
        node_type = np.full(g.node_count, ACCOUNT_TYPES.index("mixed"), dtype=np.int8)
    if S is None or R is None:
        from .flow import node_totals
        S, R = node_totals(g)
    if t0 is None:
        t0 = int(g.timestamp.min()) if g.edge_count else 0
    jobs = chunked(groups, max(1, workers * 8)) if groups else []

    spill = memory_budget is not None and estimate_slice_bytes(g, table) > memory_budget
    if not spill:
        sh = _Shared(g, node_type, S, R, t0, diameter_cap, None)
        parts = parallel_map(_rows_in_memory, jobs, workers, sh)
    else:
        tmp = None
        if spill_dir is None:
            tmp = tempfile.TemporaryDirectory(prefix="quasiflow-spill-")
            spill_dir = tmp.name
        Path(spill_dir).mkdir(parents=True, exist_ok=True)
        try:
            sh = _Shared(g, node_type, S, R, t0, diameter_cap, str(spill_dir))
            rec_parts = parallel_map(_spill_shard, list(enumerate(jobs)), workers, sh)
            records = [r for part in rec_parts for r in part]
            write_manifest(Path(spill_dir) / "manifest.bin", records)
            shard_bytes = max((sum(r[4] for r in p) * _EDGE_BYTES for p in rec_parts), default=1)
            readers = max(1, min(workers, memory_budget // max(shard_bytes, 1)))
            parts = parallel_map(_rows_from_spill,
                                 [(i, jobs[i], rec_parts[i]) for i in range(len(jobs))], readers, sh)
        finally:
            if tmp is not None:
                tmp.cleanup()
    rows = [r for part in parts for r in part]
    cols = {"community_type": np.array([t for t, _, _ in groups], dtype=np.int64),
            "community_id": np.array([c for _, c, _ in groups], dtype=np.int64)}
    for name in FEATURE_NAMES:
        dt = np.int64 if name in INT_FEATURES else np.float64
        cols[name] = np.array([r[name] for r in rows], dtype=dt)
    return Table(cols)
