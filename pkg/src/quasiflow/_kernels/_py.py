"""Pure-Python / numpy fallback kernels.

Flow kernels here are batched: every origin in a chunk advances one hop at a
time through a relational self-join on the CSR arrays, the same shape as a
distributed join plan. The compiled kernels walk one origin at a time; both
must agree exactly, so summation order is pinned to the sorted frontier order.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np

BACKEND = "python"
_CHUNK = 1024


def _seq_sum(values: np.ndarray, starts: np.ndarray, lengths: np.ndarray,
             compensated: bool = False) -> np.ndarray:
    """Left-to-right sum of each segment (optionally Neumaier-compensated)."""
    total = np.zeros(len(starts), dtype=np.float64)
    comp = np.zeros(len(starts), dtype=np.float64)
    if len(starts) == 0:
        return total
    active = np.flatnonzero(lengths > 0)
    k = 0
    while len(active):
        x = values[starts[active] + k]
        if compensated:
            s = total[active]
            t = s + x
            big = np.abs(s) >= np.abs(x)
            comp[active] += np.where(big, (s - t) + x, (x - t) + s)
            total[active] = t
        else:
            total[active] += x
        k += 1
        active = active[lengths[active] > k]
    return total + comp if compensated else total


def segment_sum(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=np.float64)
    indptr = np.asarray(indptr, dtype=np.int64)
    return _seq_sum(values, indptr[:-1], np.diff(indptr), compensated=True)


def _expand(indptr, rows_node):
    """CSR gather: (parent row, edge index) for every out-edge of each row's node."""
    lo = indptr[rows_node]
    deg = indptr[rows_node + 1] - lo
    parent = np.repeat(np.arange(len(rows_node), dtype=np.int64), deg)
    offs = np.cumsum(deg) - deg
    eidx = lo[parent] + (np.arange(len(parent), dtype=np.int64) - offs[parent])
    return parent, eidx


def _truncate_and_stats(org, tgt, car, extra_keys, top_n, n_org, out, hop):
    """Sort each origin's frontier, keep top_n, write stats for ``hop``."""
    reached, tot, peak, mean = out
    if len(org) == 0:
        return org, tgt, car, tuple(extra_keys)
    keys = tuple(reversed(extra_keys)) + (tgt, -car, org)
    order = np.lexsort(keys)
    org, tgt, car = org[order], tgt[order], car[order]
    extra = tuple(k[order] for k in extra_keys)
    bounds = np.flatnonzero(np.r_[True, org[1:] != org[:-1]])
    lengths = np.diff(np.r_[bounds, len(org)])
    if top_n > 0:
        rank = np.arange(len(org)) - np.repeat(bounds, lengths)
        keep = rank < top_n
        org, tgt, car = org[keep], tgt[keep], car[keep]
        extra = tuple(k[keep] for k in extra)
        lengths = np.minimum(lengths, top_n)
        bounds = np.cumsum(lengths) - lengths
    g = org[bounds]
    sums = _seq_sum(car, bounds, lengths)
    tot[g, hop] = sums
    peak[g, hop] = car[bounds]
    mean[g, hop] = sums / lengths
    pair = np.lexsort((tgt, org))
    po, pt = org[pair], tgt[pair]
    new = np.r_[True, (po[1:] != po[:-1]) | (pt[1:] != pt[:-1])]
    reached[:, hop] += np.bincount(po[new], minlength=n_org)
    return org, tgt, car, extra


def flow_static(indptr, nbr, amt, clip, origins, hops, top_n):
    indptr = np.asarray(indptr, dtype=np.int64)
    nbr = np.asarray(nbr, dtype=np.int64)
    amt = np.asarray(amt, dtype=np.float64)
    clip = np.asarray(clip, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.int64)
    m = len(origins)
    reached = np.zeros((m, hops), dtype=np.int64)
    tot = np.zeros((m, hops), dtype=np.float64)
    peak = np.zeros((m, hops), dtype=np.float64)
    mean = np.zeros((m, hops), dtype=np.float64)
    for c0 in range(0, m, _CHUNK):
        sl = slice(c0, min(c0 + _CHUNK, m))
        chunk = origins[sl]
        out = (reached[sl], tot[sl], peak[sl], mean[sl])
        parent, eidx = _expand(indptr, chunk)
        org = parent
        tgt = nbr[eidx]
        car = amt[eidx]
        org, tgt, car, _ = _truncate_and_stats(org, tgt, car, (), top_n, len(chunk), out, 0)
        for h in range(1, hops):
            if len(org) == 0:
                break
            car = np.minimum(car, clip[chunk[org]])
            parent, eidx = _expand(indptr, tgt)
            org = org[parent]
            tgt = nbr[eidx]
            car = np.minimum(amt[eidx], car[parent])
            org, tgt, car, _ = _truncate_and_stats(org, tgt, car, (), top_n, len(chunk), out, h)
    return reached, tot, peak, mean


def flow_temporal(indptr, nbr, amt, ts, eid, clip, origins, hops, top_n, strict):
    indptr = np.asarray(indptr, dtype=np.int64)
    nbr = np.asarray(nbr, dtype=np.int64)
    amt = np.asarray(amt, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.int64)
    eid = np.asarray(eid, dtype=np.int64)
    clip = np.asarray(clip, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.int64)
    m = len(origins)
    reached = np.zeros((m, hops), dtype=np.int64)
    tot = np.zeros((m, hops), dtype=np.float64)
    peak = np.zeros((m, hops), dtype=np.float64)
    mean = np.zeros((m, hops), dtype=np.float64)
    for c0 in range(0, m, _CHUNK):
        sl = slice(c0, min(c0 + _CHUNK, m))
        chunk = origins[sl]
        out = (reached[sl], tot[sl], peak[sl], mean[sl])
        parent, eidx = _expand(indptr, chunk)
        org, tgt, car = parent, nbr[eidx], amt[eidx]
        org, tgt, car, (t_prev, _) = _truncate_and_stats(
            org, tgt, car, (ts[eidx], eid[eidx]), top_n, len(chunk), out, 0)
        for h in range(1, hops):
            if len(org) == 0:
                break
            car = np.minimum(car, clip[chunk[org]])
            parent, eidx = _expand(indptr, tgt)
            t_next = ts[eidx]
            ok = t_next > t_prev[parent] if strict else t_next >= t_prev[parent]
            parent, eidx = parent[ok], eidx[ok]
            org = org[parent]
            tgt = nbr[eidx]
            car = np.minimum(amt[eidx], car[parent])
            org, tgt, car, (t_prev, _) = _truncate_and_stats(
                org, tgt, car, (ts[eidx], eid[eidx]), top_n, len(chunk), out, h)
    return reached, tot, peak, mean


def graph_metrics(n, u, v, approx_cap):
    """Metrics of an undirected simple graph on nodes 0..n-1 with edges (u[i], v[i]).

    Returns (diameter, approximated, biconnected_count, articulation_count,
    assortativity) with assortativity NaN when undefined.
    """
    adj = [[] for _ in range(n)]
    for a, b in zip(np.asarray(u).tolist(), np.asarray(v).tolist()):
        adj[a].append(b)
        adj[b].append(a)
    for lst in adj:
        lst.sort()
    diam, approx = _diameter(adj, n, approx_cap)
    bcc, art = _biconnected(adj, n)
    return diam, approx, bcc, art, _assortativity(adj, u, v)


def _bfs(adj, s, dist):
    dist[s] = 0
    q = deque([s])
    far = s
    while q:
        x = q.popleft()
        d = dist[x] + 1
        for y in adj[x]:
            if dist[y] < 0:
                dist[y] = d
                far = y
                q.append(y)
    return far


def _diameter(adj, n, cap):
    if n > cap:
        # double sweep per component: lower bound
        comp = [-1] * n
        best = 0
        for s in range(n):
            if comp[s] >= 0 or not adj[s]:
                continue
            dist = [-1] * n
            far = _bfs(adj, s, dist)
            for i in range(n):
                if dist[i] >= 0:
                    comp[i] = s
            dist2 = [-1] * n
            far2 = _bfs(adj, far, dist2)
            best = max(best, dist2[far2])
        return best, True
    best = 0
    for s in range(n):
        if not adj[s]:
            continue
        dist = [-1] * n
        far = _bfs(adj, s, dist)
        best = max(best, dist[far])
    return best, False


def _biconnected(adj, n):
    """Iterative Hopcroft-Tarjan: count blocks (with >= 1 edge) and cut vertices."""
    disc = [-1] * n
    low = [0] * n
    is_cut = [False] * n
    blocks = 0
    t = 0
    for root in range(n):
        if disc[root] >= 0 or not adj[root]:
            continue
        disc[root] = low[root] = t
        t += 1
        root_children = 0
        stack = [(root, -1, 0)]
        while stack:
            x, parent, i = stack[-1]
            if i < len(adj[x]):
                stack[-1] = (x, parent, i + 1)
                y = adj[x][i]
                if disc[y] < 0:
                    disc[y] = low[y] = t
                    t += 1
                    if x == root:
                        root_children += 1
                    stack.append((y, x, 0))
                elif y != parent:
                    if disc[y] < low[x]:
                        low[x] = disc[y]
            else:
                stack.pop()
                if parent >= 0:
                    if low[x] < low[parent]:
                        low[parent] = low[x]
                    if low[x] >= disc[parent]:
                        blocks += 1
                        if parent != root:
                            is_cut[parent] = True
        if root_children > 1:
            is_cut[root] = True
    return blocks, sum(is_cut)


def _assortativity(adj, u, v):
    m = len(u)
    if m == 0:
        return float("nan")
    deg = np.array([len(a) for a in adj], dtype=np.float64)
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    x = np.concatenate([deg[u], deg[v]])
    y = np.concatenate([deg[v], deg[u]])
    return _pearson(x, y)


def _pearson(x, y):
    n = len(x)
    mx = 0.0
    my = 0.0
    for i in range(n):
        mx += x[i]
        my += y[i]
    mx /= n
    my /= n
    sxy = sxx = syy = 0.0
    for i in range(n):
        dx = x[i] - mx
        dy = y[i] - my
        sxy += dx * dy
        sxx += dx * dx
        syy += dy * dy
    if sxx <= 0.0 or syy <= 0.0:
        return float("nan")
    r = sxy / (math.sqrt(sxx) * math.sqrt(syy))
    return min(1.0, max(-1.0, r))
