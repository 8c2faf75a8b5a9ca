# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: per-origin flow walks and small-graph metrics."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, realloc, free, qsort
from libc.math cimport fabs, sqrt, NAN

cnp.import_array()

BACKEND = "cython"

ctypedef struct Entry:
    double car
    long long tgt
    long long ts
    long long eid


cdef int _cmp_entry(const void* pa, const void* pb) noexcept nogil:
    cdef const Entry* a = <const Entry*> pa
    cdef const Entry* b = <const Entry*> pb
    if a.car > b.car:
        return -1
    if a.car < b.car:
        return 1
    if a.tgt < b.tgt:
        return -1
    if a.tgt > b.tgt:
        return 1
    if a.ts < b.ts:
        return -1
    if a.ts > b.ts:
        return 1
    if a.eid < b.eid:
        return -1
    if a.eid > b.eid:
        return 1
    return 0


cdef int _cmp_ll(const void* pa, const void* pb) noexcept nogil:
    cdef long long a = (<const long long*> pa)[0]
    cdef long long b = (<const long long*> pb)[0]
    return (a > b) - (a < b)


cdef struct Buf:
    Entry* data
    Py_ssize_t size
    Py_ssize_t cap


cdef int _reserve(Buf* b, Py_ssize_t need) nogil:
    cdef Py_ssize_t cap
    cdef Entry* p
    if need <= b.cap:
        return 0
    cap = b.cap * 2 if b.cap > 0 else 64
    while cap < need:
        cap *= 2
    p = <Entry*> realloc(b.data, cap * sizeof(Entry))
    if p == NULL:
        return -1
    b.data = p
    b.cap = cap
    return 0


def segment_sum(values, indptr):
    cdef const double[::1] x = np.ascontiguousarray(values, dtype=np.float64)
    cdef const long long[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef Py_ssize_t nseg = ip.shape[0] - 1
    out = np.zeros(nseg, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t s, i
    cdef double tot, comp, t, v
    for s in range(nseg):
        tot = 0.0
        comp = 0.0
        for i in range(ip[s], ip[s + 1]):
            v = x[i]
            t = tot + v
            if fabs(tot) >= fabs(v):
                comp += (tot - t) + v
            else:
                comp += (v - t) + tot
            tot = t
        o[s] = tot + comp
    return out


cdef Py_ssize_t _finish_hop(Buf* cur, Py_ssize_t top_n, long long* scratch,
                            long long[:, ::1] reached, double[:, ::1] tot,
                            double[:, ::1] peak, double[:, ::1] mean,
                            Py_ssize_t row, Py_ssize_t hop) noexcept nogil:
    cdef Py_ssize_t k, i, distinct
    cdef double s
    if cur.size == 0:
        return 0
    qsort(cur.data, cur.size, sizeof(Entry), _cmp_entry)
    k = cur.size
    if top_n > 0 and k > top_n:
        k = top_n
    cur.size = k
    s = 0.0
    for i in range(k):
        s += cur.data[i].car
        scratch[i] = cur.data[i].tgt
    qsort(scratch, k, sizeof(long long), _cmp_ll)
    distinct = 1
    for i in range(1, k):
        if scratch[i] != scratch[i - 1]:
            distinct += 1
    reached[row, hop] = distinct
    tot[row, hop] = s
    peak[row, hop] = cur.data[0].car
    mean[row, hop] = s / k
    return k


cdef int _walk(const long long[::1] ip, const long long[::1] nbr, const double[::1] amt,
               const long long[::1] ts, const long long[::1] eid, bint temporal, bint strict,
               double clip, long long origin, Py_ssize_t hops, Py_ssize_t top_n,
               Buf* cur, Buf* nxt, long long** scratch, Py_ssize_t* scratch_cap,
               long long[:, ::1] reached, double[:, ::1] tot, double[:, ::1] peak,
               double[:, ::1] mean, Py_ssize_t row) noexcept nogil:
    cdef Py_ssize_t h, i, e, lo, hi, need
    cdef Entry* p
    cdef Entry* q
    cdef Buf tmp
    cdef long long* sp
    cdef double c
    lo = ip[origin]
    hi = ip[origin + 1]
    cur.size = 0
    if _reserve(cur, hi - lo) < 0:
        return -1
    for e in range(lo, hi):
        p = &cur.data[cur.size]
        p.car = amt[e]
        p.tgt = nbr[e]
        p.ts = ts[e] if temporal else 0
        p.eid = eid[e] if temporal else 0
        cur.size += 1
    for h in range(hops):
        if h > 0:
            nxt.size = 0
            for i in range(cur.size):
                q = &cur.data[i]
                c = q.car if q.car < clip else clip
                lo = ip[q.tgt]
                hi = ip[q.tgt + 1]
                if _reserve(nxt, nxt.size + (hi - lo)) < 0:
                    return -1
                q = &cur.data[i]
                for e in range(lo, hi):
                    if temporal:
                        if strict:
                            if ts[e] <= q.ts:
                                continue
                        elif ts[e] < q.ts:
                            continue
                    p = &nxt.data[nxt.size]
                    p.car = amt[e] if amt[e] < c else c
                    p.tgt = nbr[e]
                    p.ts = ts[e] if temporal else 0
                    p.eid = eid[e] if temporal else 0
                    nxt.size += 1
            tmp = cur[0]
            cur[0] = nxt[0]
            nxt[0] = tmp
        if cur.size == 0:
            return 0
        need = cur.size
        if need > scratch_cap[0]:
            sp = <long long*> realloc(scratch[0], need * sizeof(long long))
            if sp == NULL:
                return -1
            scratch[0] = sp
            scratch_cap[0] = need
        _finish_hop(cur, top_n, scratch[0], reached, tot, peak, mean, row, h)
    return 0


def _run_flow(indptr, nbr, amt, ts, eid, clip, origins, Py_ssize_t hops, Py_ssize_t top_n,
              bint temporal, bint strict):
    cdef const long long[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const long long[::1] nb = np.ascontiguousarray(nbr, dtype=np.int64)
    cdef const double[::1] am = np.ascontiguousarray(amt, dtype=np.float64)
    cdef const long long[::1] tsv = np.ascontiguousarray(ts, dtype=np.int64)
    cdef const long long[::1] ev = np.ascontiguousarray(eid, dtype=np.int64)
    cdef const double[::1] cl = np.ascontiguousarray(clip, dtype=np.float64)
    cdef const long long[::1] org = np.ascontiguousarray(origins, dtype=np.int64)
    cdef Py_ssize_t m = org.shape[0]
    reached_a = np.zeros((m, hops), dtype=np.int64)
    tot_a = np.zeros((m, hops), dtype=np.float64)
    peak_a = np.zeros((m, hops), dtype=np.float64)
    mean_a = np.zeros((m, hops), dtype=np.float64)
    cdef long long[:, ::1] reached = reached_a
    cdef double[:, ::1] tot = tot_a
    cdef double[:, ::1] peak = peak_a
    cdef double[:, ::1] mean = mean_a
    cdef Buf cur, nxt
    cdef long long* scratch = NULL
    cdef Py_ssize_t scratch_cap = 0
    cdef Py_ssize_t r
    cdef int rc = 0
    cur.data = NULL; cur.size = 0; cur.cap = 0
    nxt.data = NULL; nxt.size = 0; nxt.cap = 0
    try:
        with nogil:
            for r in range(m):
                rc = _walk(ip, nb, am, tsv, ev, temporal, strict, cl[org[r]], org[r], hops,
                           top_n, &cur, &nxt, &scratch, &scratch_cap,
                           reached, tot, peak, mean, r)
                if rc < 0:
                    break
    finally:
        free(cur.data)
        free(nxt.data)
        free(scratch)
    if rc < 0:
        raise MemoryError("flow frontier allocation failed")
    return reached_a, tot_a, peak_a, mean_a


def flow_static(indptr, nbr, amt, clip, origins, hops, top_n):
    dummy = np.zeros(len(nbr), dtype=np.int64)
    return _run_flow(indptr, nbr, amt, dummy, dummy, clip, origins, hops, top_n, False, False)


def flow_temporal(indptr, nbr, amt, ts, eid, clip, origins, hops, top_n, strict):
    return _run_flow(indptr, nbr, amt, ts, eid, clip, origins, hops, top_n, True, bool(strict))


# ---------------------------------------------------------------------------
# small-graph metrics
# ---------------------------------------------------------------------------

cdef long long _bfs(const long long[::1] ap, const long long[::1] adj, long long s,
                    long long* dist, long long* queue) noexcept nogil:
    cdef long long head = 0, tail = 0, x, y, d, far = s
    cdef long long i
    dist[s] = 0
    queue[tail] = s
    tail += 1
    while head < tail:
        x = queue[head]
        head += 1
        d = dist[x] + 1
        for i in range(ap[x], ap[x + 1]):
            y = adj[i]
            if dist[y] < 0:
                dist[y] = d
                far = y
                queue[tail] = y
                tail += 1
    return far


def graph_metrics(Py_ssize_t n, u, v, Py_ssize_t approx_cap):
    cdef const long long[::1] uu = np.ascontiguousarray(u, dtype=np.int64)
    cdef const long long[::1] vv = np.ascontiguousarray(v, dtype=np.int64)
    cdef Py_ssize_t m = uu.shape[0]
    # sorted undirected CSR
    src = np.concatenate([np.asarray(uu), np.asarray(vv)])
    dst = np.concatenate([np.asarray(vv), np.asarray(uu)])
    order = np.lexsort((dst, src))
    adj_a = np.ascontiguousarray(dst[order], dtype=np.int64)
    ap_a = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=ap_a[1:])
    cdef const long long[::1] adj = adj_a
    cdef const long long[::1] ap = ap_a
    cdef long long* dist = <long long*> malloc((n + 1) * sizeof(long long))
    cdef long long* queue = <long long*> malloc((n + 1) * sizeof(long long))
    cdef long long* comp = <long long*> malloc((n + 1) * sizeof(long long))
    cdef long long* disc = <long long*> malloc((n + 1) * sizeof(long long))
    cdef long long* low = <long long*> malloc((n + 1) * sizeof(long long))
    cdef long long* st_node = <long long*> malloc((n + 1) * sizeof(long long))
    cdef long long* st_par = <long long*> malloc((n + 1) * sizeof(long long))
    cdef long long* st_i = <long long*> malloc((n + 1) * sizeof(long long))
    cdef char* cut = <char*> malloc((n + 1) * sizeof(char))
    cdef Py_ssize_t s, i, top
    cdef long long far, best = 0, x, par, y, t, root_children, blocks = 0, ncut = 0
    cdef bint approx = n > approx_cap
    cdef double r = NAN
    if (dist == NULL or queue == NULL or comp == NULL or disc == NULL or low == NULL
            or st_node == NULL or st_par == NULL or st_i == NULL or cut == NULL):
        free(dist); free(queue); free(comp); free(disc); free(low)
        free(st_node); free(st_par); free(st_i); free(cut)
        raise MemoryError()
    try:
        with nogil:
            # diameter
            if approx:
                for s in range(n):
                    comp[s] = -1
                for s in range(n):
                    if comp[s] >= 0 or ap[s] == ap[s + 1]:
                        continue
                    for i in range(n):
                        dist[i] = -1
                    far = _bfs(ap, adj, s, dist, queue)
                    for i in range(n):
                        if dist[i] >= 0:
                            comp[i] = s
                    for i in range(n):
                        dist[i] = -1
                    far = _bfs(ap, adj, far, dist, queue)
                    if dist[far] > best:
                        best = dist[far]
            else:
                for s in range(n):
                    if ap[s] == ap[s + 1]:
                        continue
                    for i in range(n):
                        dist[i] = -1
                    far = _bfs(ap, adj, s, dist, queue)
                    if dist[far] > best:
                        best = dist[far]
            # blocks and cut vertices
            for s in range(n):
                disc[s] = -1
                cut[s] = 0
            t = 0
            for s in range(n):
                if disc[s] >= 0 or ap[s] == ap[s + 1]:
                    continue
                disc[s] = t
                low[s] = t
                t += 1
                root_children = 0
                top = 0
                st_node[0] = s
                st_par[0] = -1
                st_i[0] = ap[s]
                while top >= 0:
                    x = st_node[top]
                    par = st_par[top]
                    if st_i[top] < ap[x + 1]:
                        y = adj[st_i[top]]
                        st_i[top] += 1
                        if disc[y] < 0:
                            disc[y] = t
                            low[y] = t
                            t += 1
                            if x == s:
                                root_children += 1
                            top += 1
                            st_node[top] = y
                            st_par[top] = x
                            st_i[top] = ap[y]
                        elif y != par:
                            if disc[y] < low[x]:
                                low[x] = disc[y]
                    else:
                        top -= 1
                        if par >= 0:
                            if low[x] < low[par]:
                                low[par] = low[x]
                            if low[x] >= disc[par]:
                                blocks += 1
                                if par != s:
                                    cut[par] = 1
                if root_children > 1:
                    cut[s] = 1
            for s in range(n):
                ncut += cut[s]
            r = _assort(ap, uu, vv, m)
    finally:
        free(dist); free(queue); free(comp); free(disc); free(low)
        free(st_node); free(st_par); free(st_i); free(cut)
    return int(best), bool(approx), int(blocks), int(ncut), float(r)


cdef double _assort(const long long[::1] ap, const long long[::1] u, const long long[::1] v,
                    Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i, nn = 2 * m
    cdef double mx = 0.0, my = 0.0, sxy = 0.0, sxx = 0.0, syy = 0.0, dx, dy, x, y, r
    if m == 0:
        return NAN
    # x = deg[u] ++ deg[v], y = deg[v] ++ deg[u]
    for i in range(nn):
        if i < m:
            x = <double>(ap[u[i] + 1] - ap[u[i]])
            y = <double>(ap[v[i] + 1] - ap[v[i]])
        else:
            x = <double>(ap[v[i - m] + 1] - ap[v[i - m]])
            y = <double>(ap[u[i - m] + 1] - ap[u[i - m]])
        mx += x
        my += y
    mx /= nn
    my /= nn
    for i in range(nn):
        if i < m:
            x = <double>(ap[u[i] + 1] - ap[u[i]])
            y = <double>(ap[v[i] + 1] - ap[v[i]])
        else:
            x = <double>(ap[v[i - m] + 1] - ap[v[i - m]])
            y = <double>(ap[u[i - m] + 1] - ap[u[i - m]])
        dx = x - mx
        dy = y - my
        sxy += dx * dy
        sxx += dx * dx
        syy += dy * dy
    if sxx <= 0.0 or syy <= 0.0:
        return NAN
    r = sxy / (sqrt(sxx) * sqrt(syy))
    if r > 1.0:
        r = 1.0
    if r < -1.0:
        r = -1.0
    return r
