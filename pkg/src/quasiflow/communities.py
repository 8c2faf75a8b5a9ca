"""Disjoint modularity communities and overlapping random-walk ego communities."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .graph import AggregatedGraph
from .parallel import chunked, parallel_map

WEIGHT_FLOOR = 1e-12
LEIDEN, EGO = 0, 1
COMMUNITY_TYPES = ("leiden", "ego")


@dataclass(frozen=True)
class Partition:
    assignment: np.ndarray
    community_count: int
    modularity_score: float

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == c)


@dataclass(frozen=True)
class EgoCommunity:
    seed: int
    members: frozenset
    member_rank: dict


def _relabel(labels: np.ndarray) -> np.ndarray:
    """Dense ids ordered by each community's smallest node id."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty(len(first), dtype=np.int64)
    remap[order] = np.arange(len(first))
    _, inv = np.unique(labels, return_inverse=True)
    return remap[inv]


def modularity(ag: AggregatedGraph, p: Partition | np.ndarray, resolution: float = 1.0) -> float:
    """Newman modularity of the undirected projection weighted by W.

    Q = sum_c [ in_c / 2m - resolution * (tot_c / 2m)^2 ], where in_c counts
    each internal edge twice and tot_c is the summed weighted degree.
    """
    assignment = p.assignment if isinstance(p, Partition) else np.asarray(p)
    u, v, w = ag.undirected_projection()
    two_m = 2.0 * w.sum()
    if len(u) == 0 or two_m <= 0:
        raise DataError("modularity is undefined on a graph without weighted edges")
    cu, cv = assignment[u], assignment[v]
    k = len(np.unique(assignment))
    lab = np.unique(assignment, return_inverse=True)[1]
    lu, lv = lab[u], lab[v]
    inside = np.bincount(lu[cu == cv], weights=2.0 * w[cu == cv], minlength=k)
    tot = np.bincount(lu, weights=w, minlength=k) + np.bincount(lv, weights=w, minlength=k)
    return float(np.sum(inside / two_m - resolution * (tot / two_m) ** 2))


def leiden_partition(ag: AggregatedGraph, resolution: float = 1.0, seed: int = 0,
                     n_iterations: int = -1) -> Partition:
    """Leiden on the undirected W projection; ``n_iterations=-1`` runs to convergence."""
    if ag.node_count == 0:
        raise DataError("empty graph")
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    u, v, w = ag.undirected_projection()
    if len(u) == 0 or w.sum() <= 0:
        ids = np.arange(ag.node_count, dtype=np.int64)
        return Partition(ids, ag.node_count, 0.0)
    import igraph as ig
    import leidenalg as la

    graph = ig.Graph(n=ag.node_count, edges=np.column_stack([u, v]).tolist(), directed=False)
    graph.es["weight"] = w.tolist()
    part = la.find_partition(
        graph, la.RBConfigurationVertexPartition, weights="weight",
        resolution_parameter=resolution, n_iterations=n_iterations, seed=seed,
    )
    labels = _relabel(np.asarray(part.membership, dtype=np.int64))
    k = int(labels.max()) + 1
    return Partition(labels, k, modularity(ag, labels, resolution))


# -- ego communities ------------------------------------------------------------

def _normalized(indptr, nbr, weight):
    w = np.where(weight < WEIGHT_FLOOR, 0.0, weight)
    deg = np.diff(indptr)
    owner = np.repeat(np.arange(len(deg)), deg)
    src_tot = np.bincount(owner, weights=w, minlength=len(deg))[owner]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(src_tot > 0, w / src_tot, 0.0)


@dataclass(frozen=True)
class _WalkGraph:
    fwd_indptr: np.ndarray
    fwd_nbr: np.ndarray
    fwd_w: np.ndarray
    bwd_indptr: np.ndarray
    bwd_nbr: np.ndarray
    bwd_w: np.ndarray
    node_count: int


def _walk_graph(ag: AggregatedGraph) -> _WalkGraph:
    rev_ip, rev_nbr, _ = ag.reverse_csr()
    return _WalkGraph(
        ag.indptr, ag.target, _normalized(ag.indptr, ag.target, ag.W),
        rev_ip, rev_nbr, _normalized(rev_ip, rev_nbr, ag.W[ag.rev_order]),
        ag.node_count,
    )


def _expand(wg: _WalkGraph, seed: int, n_hops: int, restart: float, top_k: int, max_size: int):
    rank = {seed: 1.0}
    damp = 1.0 - restart
    for indptr, nbr, wn in ((wg.fwd_indptr, wg.fwd_nbr, wg.fwd_w),
                            (wg.bwd_indptr, wg.bwd_nbr, wg.bwd_w)):
        frontier = [(seed, 1.0)]
        for _ in range(n_hops):
            cand: dict[int, float] = {}
            for u, mass in frontier:
                lo, hi = indptr[u], indptr[u + 1]
                for v, w in zip(nbr[lo:hi].tolist(), wn[lo:hi].tolist()):
                    if w > 0.0:
                        cand[v] = cand.get(v, 0.0) + damp * mass * w
            if not cand:
                break
            best = sorted(cand.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
            frontier = sorted(best)
            for v, mass in best:
                rank[v] = rank.get(v, 0.0) + mass
    others = sorted(((v, m) for v, m in rank.items() if v != seed), key=lambda kv: (-kv[1], kv[0]))
    kept = others[:max(0, max_size - 1)]
    member_rank = {seed: rank[seed], **dict(kept)}
    return EgoCommunity(seed, frozenset(member_rank), member_rank)


def _check_ego_params(n_hops, restart, top_k, max_size):
    if n_hops < 1:
        raise ValueError("n_hops must be >= 1")
    if not 0 < restart < 1:
        raise ValueError("restart must lie in (0, 1)")
    if top_k < 1 or max_size < 1:
        raise ValueError("top_k_per_hop and max_size must be >= 1")


def ego_community(ag: AggregatedGraph, seed: int, n_hops: int = 2, restart: float = 0.15,
                  top_k_per_hop: int = 50, max_size: int = 500) -> EgoCommunity:
    """Grow a community around ``seed`` along out-edges and, separately, in-edges.

    Each hop spreads walk mass ``(1 - restart) * mass * normalised W`` to
    neighbours and keeps the ``top_k_per_hop`` heaviest; the union of both
    directions is capped at ``max_size`` members by accumulated mass.
    """
    if not 0 <= seed < ag.node_count:
        raise DataError(f"unknown seed {seed}")
    _check_ego_params(n_hops, restart, top_k_per_hop, max_size)
    return _expand(_walk_graph(ag), seed, n_hops, restart, top_k_per_hop, max_size)


def _ego_chunk(shared, seeds):
    wg, n_hops, restart, top_k, max_size = shared
    return [_expand(wg, int(s), n_hops, restart, top_k, max_size) for s in seeds]


def ego_communities(ag: AggregatedGraph, seeds=None, n_hops: int = 2, restart: float = 0.15,
                    top_k_per_hop: int = 50, max_size: int = 500, workers: int = 1) -> list[EgoCommunity]:
    _check_ego_params(n_hops, restart, top_k_per_hop, max_size)
    seeds = np.arange(ag.node_count) if seeds is None else np.asarray(seeds, dtype=np.int64)
    if len(seeds) == 0:
        return []
    shared = (_walk_graph(ag), n_hops, restart, top_k_per_hop, max_size)
    parts = parallel_map(_ego_chunk, chunked(seeds, workers * 4), workers, shared)
    return [e for part in parts for e in part]


# -- membership table -----------------------------------------------------------

@dataclass(frozen=True)
class MembershipTable:
    """One row per (community, member); rows grouped by (type, id), members ascending."""

    ctype: np.ndarray
    cid: np.ndarray
    node: np.ndarray

    def __len__(self) -> int:
        return len(self.node)

    def groups(self):
        """Yield (type, id, members) per community in table order."""
        if len(self.node) == 0:
            return
        brk = np.flatnonzero(np.r_[True, (self.ctype[1:] != self.ctype[:-1]) | (self.cid[1:] != self.cid[:-1]),
                                   True])
        for a, b in zip(brk[:-1], brk[1:]):
            yield int(self.ctype[a]), int(self.cid[a]), self.node[a:b]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["community_id", "type", "node"])
            for t, c, n in zip(self.ctype.tolist(), self.cid.tolist(), self.node.tolist()):
                w.writerow([c, COMMUNITY_TYPES[t], n])


def community_membership_table(p: Partition | None, egos=()) -> MembershipTable:
    ctype, cid, node = [], [], []
    if p is not None:
        order = np.lexsort((np.arange(len(p.assignment)), p.assignment))
        ctype.append(np.full(len(order), LEIDEN, dtype=np.int8))
        cid.append(p.assignment[order].astype(np.int64))
        node.append(order.astype(np.int64))
    for e in sorted(egos, key=lambda e: e.seed):
        m = np.array(sorted(e.members), dtype=np.int64)
        ctype.append(np.full(len(m), EGO, dtype=np.int8))
        cid.append(np.full(len(m), e.seed, dtype=np.int64))
        node.append(m)
    if not node:
        z = np.zeros(0, dtype=np.int64)
        return MembershipTable(z.astype(np.int8), z, z)
    return MembershipTable(np.concatenate(ctype), np.concatenate(cid), np.concatenate(node))


def membership_from_groups(groups) -> MembershipTable:
    """Build a table from ``(type, id, members)`` triples (used by tests and fixtures)."""
    ctype, cid, node = [], [], []
    for t, c, members in sorted(groups, key=lambda g: (g[0], g[1])):
        m = np.unique(np.asarray(members, dtype=np.int64))
        ctype.append(np.full(len(m), t, dtype=np.int8))
        cid.append(np.full(len(m), c, dtype=np.int64))
        node.append(m)
    if not node:
        z = np.zeros(0, dtype=np.int64)
        return MembershipTable(z.astype(np.int8), z, z)
    return MembershipTable(np.concatenate(ctype), np.concatenate(cid), np.concatenate(node))
