"""Directed transaction multigraph and the aggregated (source, target) graph."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DataError
from .ingest import Dataset


def _csr(keys: np.ndarray, n: int) -> np.ndarray:
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=indptr[1:])
    return indptr


@dataclass(frozen=True)
class MultiGraph:
    """Raw transactions as columnar edges, sorted by (source, timestamp, tx_id).

    ``indptr[v]:indptr[v+1]`` is the out-edge range of ``v``;
    ``rev_order[rev_indptr[v]:rev_indptr[v+1]]`` lists in-edge positions of
    ``v`` sorted by (timestamp, tx_id).
    """

    node_count: int
    source: np.ndarray
    target: np.ndarray
    amount: np.ndarray
    timestamp: np.ndarray
    tx_id: np.ndarray
    indptr: np.ndarray
    rev_order: np.ndarray
    rev_indptr: np.ndarray
    self_loops_dropped: int = 0

    @property
    def edge_count(self) -> int:
        return len(self.source)

    def out_edges(self, v: int) -> np.ndarray:
        return np.arange(self.indptr[v], self.indptr[v + 1])

    def in_edges(self, v: int) -> np.ndarray:
        return self.rev_order[self.rev_indptr[v]:self.rev_indptr[v + 1]]

    def out_degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def in_degree(self, v: int) -> int:
        return int(self.rev_indptr[v + 1] - self.rev_indptr[v])

    def reverse_csr(self, negate_time: bool = False):
        """In-edge CSR arrays usable by the flow kernels as if edges were reversed."""
        o = self.rev_order
        ts = -self.timestamp[o] if negate_time else self.timestamp[o]
        return self.rev_indptr, self.source[o], self.amount[o], ts, self.tx_id[o]


def build_multigraph(d: Dataset, drop_self_loops: bool = True) -> MultiGraph:
    keep = d.source != d.target if drop_self_loops else np.ones(len(d), dtype=bool)
    src, dst = d.source[keep], d.target[keep]
    amt, ts, tid = d.amount[keep], d.timestamp[keep], d.tx_id[keep]
    order = np.lexsort((tid, ts, src))
    src, dst, amt, ts, tid = src[order], dst[order], amt[order], ts[order], tid[order]
    n = d.n_accounts
    rev = np.lexsort((tid, ts, dst))
    arrays = [np.ascontiguousarray(a) for a in (src, dst, amt, ts, tid)]
    for a in arrays:
        a.flags.writeable = False
    return MultiGraph(
        n, *arrays, _csr(src, n), rev.astype(np.int64), _csr(dst, n),
        int(len(d) - keep.sum()),
    )


@dataclass(frozen=True)
class AggregatedGraph:
    """One edge per distinct (source, target) with total amount ``A``.

    Edges are sorted by (source, target). ``S``/``R`` are per-node sent and
    received totals, ``W`` the sender-share plus receiver-share weight.
    """

    node_count: int
    source: np.ndarray
    target: np.ndarray
    A: np.ndarray
    W: np.ndarray
    S: np.ndarray
    R: np.ndarray
    indptr: np.ndarray
    rev_order: np.ndarray
    rev_indptr: np.ndarray

    @property
    def edge_count(self) -> int:
        return len(self.source)

    def edge_index(self, s: int, t: int) -> int:
        lo, hi = self.indptr[s], self.indptr[s + 1]
        i = lo + int(np.searchsorted(self.target[lo:hi], t))
        if i >= hi or self.target[i] != t:
            raise DataError(f"no aggregated edge {s} -> {t}")
        return int(i)

    def amount(self, s: int, t: int) -> float:
        return float(self.A[self.edge_index(s, t)])

    def out_neighbors(self, v: int) -> np.ndarray:
        return self.target[self.indptr[v]:self.indptr[v + 1]]

    def in_neighbors(self, v: int) -> np.ndarray:
        return self.source[self.rev_order[self.rev_indptr[v]:self.rev_indptr[v + 1]]]

    def reverse_csr(self):
        """(indptr, neighbor, amount) of the edge-reversed graph."""
        o = self.rev_order
        return self.rev_indptr, self.source[o], self.A[o]

    def reversed(self) -> "AggregatedGraph":
        return _make_aggregated(self.node_count, self.target, self.source, self.A)

    def undirected_projection(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unique undirected pairs (u < v) with W summed over both directions."""
        u = np.minimum(self.source, self.target)
        v = np.maximum(self.source, self.target)
        if len(u) == 0:
            e = np.zeros(0, dtype=np.int64)
            return e, e, np.zeros(0)
        order = np.lexsort((v, u))
        u, v, w = u[order], v[order], self.W[order]
        start = np.flatnonzero(np.r_[True, (u[1:] != u[:-1]) | (v[1:] != v[:-1])])
        indptr = np.r_[start, len(u)].astype(np.int64)
        return u[start], v[start], _kernels.segment_sum(w, indptr)

    def to_csv(self, path, accounts: list[str] | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source", "target", "A", "W"])
            for s, t, a, wt in zip(self.source.tolist(), self.target.tolist(),
                                   self.A.tolist(), self.W.tolist()):
                if accounts is not None:
                    s, t = accounts[s], accounts[t]
                w.writerow([s, t, repr(a), repr(wt)])


def _weights(src, dst, A, S, R) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ws = np.where(S[src] > 0, A / S[src], 0.0)
        wr = np.where(R[dst] > 0, A / R[dst], 0.0)
    return ws + wr


def _make_aggregated(n: int, src: np.ndarray, dst: np.ndarray, A: np.ndarray) -> AggregatedGraph:
    order = np.lexsort((dst, src))
    src, dst, A = src[order], dst[order], A[order]
    indptr = _csr(src, n)
    S = _kernels.segment_sum(A, indptr)
    rev = np.lexsort((src, dst)).astype(np.int64)
    rev_indptr = _csr(dst, n)
    R = _kernels.segment_sum(A[rev], rev_indptr)
    W = _weights(src, dst, A, S, R)
    return AggregatedGraph(n, src, dst, A, W, S, R, indptr, rev, rev_indptr)


def aggregate(g: MultiGraph) -> AggregatedGraph:
    """Collapse parallel edges; sums follow a canonical edge order so any
    permutation of the input transactions yields the same graph."""
    order = np.lexsort((g.tx_id, g.target, g.source))
    src, dst, amt = g.source[order], g.target[order], g.amount[order]
    if len(src) == 0:
        e = np.zeros(0, dtype=np.int64)
        return _make_aggregated(g.node_count, e, e, np.zeros(0))
    start = np.flatnonzero(np.r_[True, (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])])
    A = _kernels.segment_sum(amt, np.r_[start, len(src)].astype(np.int64))
    return _make_aggregated(g.node_count, src[start], dst[start], A)


def edge_weight(ag: AggregatedGraph, s: int, t: int) -> float:
    """A(s->t)/S_s + A(s->t)/R_t; a zero denominator contributes 0."""
    return float(ag.W[ag.edge_index(s, t)])
