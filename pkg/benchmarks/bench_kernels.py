"""Time the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--transactions N] [--accounts N] [--repeat R]

Prints one row per kernel with the best-of-R wall time for each backend and
the speedup of the compiled path. Results are checked for exact equality
before timing so a fast but wrong kernel cannot win.
"""
import argparse
import time

import numpy as np

from quasiflow import _kernels
from quasiflow.communities import leiden_partition
from quasiflow.graph import aggregate, build_multigraph
from quasiflow.synth import synthetic_economy


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def equal(a, b):
    if isinstance(a, tuple):
        return all(equal(x, y) for x, y in zip(a, b))
    if isinstance(a, float) and np.isnan(a):
        return isinstance(b, float) and np.isnan(b)
    return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=np.asarray(a).dtype.kind == "f")


def cases(n_tx, n_acc, seed):
    d = synthetic_economy(n_transactions=n_tx, n_accounts=n_acc, seed=seed)
    g = build_multigraph(d)
    ag = aggregate(g)
    n = ag.node_count
    nodes = np.arange(min(n, 2000))
    S = np.bincount(g.source, weights=g.amount, minlength=n)
    rev = g.reverse_csr(negate_time=True)
    R = np.bincount(g.target, weights=g.amount, minlength=n)

    # the largest Leiden communities stand in for the per-community metric calls
    part = leiden_partition(ag, n_iterations=2)
    sizes = np.bincount(part.assignment)
    big = np.argsort(sizes)[::-1][:50]
    subgraphs = []
    for c in big:
        members = np.flatnonzero(part.assignment == c)
        local = np.full(n, -1, dtype=np.int64)
        local[members] = np.arange(len(members))
        src = np.repeat(np.arange(n), np.diff(ag.indptr))
        keep = (local[src] >= 0) & (local[ag.target] >= 0) & (src != ag.target)
        u, v = local[src[keep]], local[ag.target[keep]]
        pairs = np.unique(np.sort(np.c_[u, v], axis=1), axis=0)
        subgraphs.append((len(members), pairs[:, 0].copy(), pairs[:, 1].copy()))

    return {
        "segment_sum": lambda k: k.segment_sum(g.amount, g.indptr),
        "flow_static": lambda k: k.flow_static(ag.indptr, ag.target, ag.A, ag.S, nodes, 5, 50),
        "flow_temporal": lambda k: k.flow_temporal(g.indptr, g.target, g.amount, g.timestamp, g.tx_id,
                                                   S, nodes, 5, 50, False),
        "flow_temporal_rev": lambda k: k.flow_temporal(*rev, R, nodes, 5, 50, False),
        "graph_metrics": lambda k: [k.graph_metrics(m, u, v, 10_000) for m, u, v in subgraphs],
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--transactions", type=int, default=50_000)
    ap.add_argument("--accounts", type=int, default=4_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = _kernels.backends()
    if "cython" not in backends:
        print("compiled extension not built; only the fallback is available")
    work = cases(args.transactions, args.accounts, args.seed)
    print(f"{'kernel':<18} {'python_s':>10} {'cython_s':>10} {'speedup':>8}")
    for name, fn in work.items():
        tp, out_py = best_of(lambda: fn(backends["python"]), args.repeat)
        if "cython" in backends:
            tc, out_cy = best_of(lambda: fn(backends["cython"]), args.repeat)
            if name == "graph_metrics":
                same = all(equal(tuple(a), tuple(b)) for a, b in zip(out_py, out_cy))
            else:
                same = equal(out_py, out_cy)
            if not same:
                raise SystemExit(f"{name}: backends disagree")
            print(f"{name:<18} {tp:>10.4f} {tc:>10.4f} {tp / tc:>7.1f}x")
        else:
            print(f"{name:<18} {tp:>10.4f} {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
