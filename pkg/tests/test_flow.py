import numpy as np
import pytest
from hypothesis import given, strategies as st

from quasiflow.errors import DataError
from quasiflow.flow import (
    classify_account_type, classify_totals, dispense_flow, flow_table, node_totals,
    passthrough_flow, sink_flow, temporal_flow, temporal_flow_table,
)
from quasiflow.graph import aggregate, build_multigraph
from quasiflow.ingest import from_records

from conftest import dataset_from_rows, random_records
from oracles import temporal_walk_flow, walk_flow


def graphs(rows, n=None):
    d = dataset_from_rows(rows, n) if n is not None else from_records(rows)
    g = build_multigraph(d)
    return d, g, aggregate(g)


def hops_of(profile):
    return [(h.reached_accounts, h.carried_sum, h.carried_max, h.carried_mean) for h in profile.per_hop]


def static_edges(ag):
    return list(zip(ag.source.tolist(), ag.target.tolist(), ag.A.tolist()))


def assert_hops_close(got, want, tol=1e-9):
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert g[0] == w[0]
        assert g[1:] == pytest.approx(w[1:], abs=tol, rel=tol)


DISPENSE = [(0, "a", "b", 60.0, 0), (1, "a", "c", 40.0, 0), (2, "b", "d", 50.0, 0)]


def test_dispense_example(backend):
    d, _, ag = graphs(DISPENSE)
    p = dispense_flow(ag, d.account_index["a"], hops=2)
    assert hops_of(p) == [(2, 100.0, 60.0, 50.0), (1, 50.0, 50.0, 50.0)]


def test_isolated_node_zeros():
    d, _, ag = graphs(DISPENSE + [(3, "z", "z", 1.0, 0)])
    p = dispense_flow(ag, d.account_index["z"])
    assert len(p.per_hop) == 5
    assert all(h == (0, 0.0, 0.0, 0.0) for h in hops_of(p))
    assert [h.hop for h in p.per_hop] == [1, 2, 3, 4, 5]


def test_two_cycle_followed(backend):
    d, _, ag = graphs([(0, "a", "b", 100.0, 0), (1, "b", "a", 100.0, 0)])
    p = dispense_flow(ag, d.account_index["a"], hops=3)
    assert hops_of(p) == [(1, 100.0, 100.0, 100.0)] * 3


def test_sink_mirror_example(backend):
    d, _, ag = graphs([(0, "d", "b", 50.0, 0), (1, "b", "a", 60.0, 0), (2, "c", "a", 40.0, 0)])
    p = sink_flow(ag, d.account_index["a"], hops=2)
    assert hops_of(p) == [(2, 100.0, 60.0, 50.0), (1, 50.0, 50.0, 50.0)]
    assert all(h[0] == 0 for h in hops_of(sink_flow(ag, d.account_index["d"])))


def test_passthrough_examples():
    d, _, ag = graphs([(0, "a", "b", 100.0, 0), (1, "b", "c", 100.0, 0)])
    b = d.account_index["b"]
    p = passthrough_flow(ag, b, hops=1)
    assert p.per_hop[0].carried_sum == 100.0
    assert dispense_flow(ag, b, hops=1).per_hop[0].carried_sum == 100.0
    assert sink_flow(ag, b, hops=1).per_hop[0].carried_sum == 100.0
    assert p.ratio == 1.0
    # the pure dispenser has nothing flowing in
    a = passthrough_flow(ag, d.account_index["a"], hops=2)
    assert all(h == (0, 0.0, 0.0, 0.0) for h in hops_of(a))


def test_passthrough_ratio():
    d, _, ag = graphs([(0, "x", "m", 100.0, 0), (1, "m", "y", 80.0, 0)])
    assert passthrough_flow(ag, d.account_index["m"]).ratio == pytest.approx(0.8)


def test_unknown_node_and_bad_args():
    _, _, ag = graphs(DISPENSE)
    with pytest.raises(DataError):
        dispense_flow(ag, 99)
    with pytest.raises(DataError):
        flow_table(ag, [0, -1])
    with pytest.raises(ValueError):
        flow_table(ag, hops=0)
    with pytest.raises(ValueError):
        flow_table(ag, top_n=0)


def test_top_n_tie_break_by_target():
    rows = [(0, "a", t, 10.0, 0) for t in ("b", "c", "d")] + [(1, "d", "e", 5.0, 0)]
    d, _, ag = graphs(rows)
    # equal amounts: lowest target ids survive, so d (and its out-edge) is cut
    p = dispense_flow(ag, d.account_index["a"], hops=2, top_n=2)
    assert hops_of(p) == [(2, 20.0, 10.0, 10.0), (0, 0.0, 0.0, 0.0)]


def test_temporal_examples(backend):
    d, g, _ = graphs([(5, "a", "b", 100.0, 0), (3, "b", "c", 100.0, 0)])
    p = temporal_flow(g, d.account_index["a"], hops=2)
    assert p.per_hop[1].reached_accounts == 0
    d, g, _ = graphs([(1, "a", "b", 100.0, 0), (2, "b", "c", 100.0, 0)])
    p = temporal_flow(g, d.account_index["a"], hops=2)
    assert (p.per_hop[1].reached_accounts, p.per_hop[1].carried_sum) == (1, 100.0)
    d, g, _ = graphs([(1, "a", "b", 100.0, 0), (2, "b", "c", 60.0, 0), (0, "b", "c", 70.0, 0)])
    p = temporal_flow(g, d.account_index["a"], hops=2)
    assert hops_of(p)[1] == (1, 60.0, 60.0, 60.0)


def test_temporal_equal_timestamps_chain_unless_strict():
    d, g, _ = graphs([(4, "a", "b", 100.0, 0), (4, "b", "c", 100.0, 0)])
    a = d.account_index["a"]
    assert temporal_flow(g, a, hops=2).per_hop[1].reached_accounts == 1
    assert temporal_flow(g, a, hops=2, strict_chronology=True).per_hop[1].reached_accounts == 0


def test_temporal_sink_steps_back_in_time():
    d, g, _ = graphs([(1, "a", "b", 100.0, 0), (2, "b", "c", 100.0, 0), (3, "z", "b", 50.0, 0)])
    p = temporal_flow(g, d.account_index["c"], profile="sink", hops=2)
    # a->b at t=1 precedes b->c at t=2; z->b at t=3 does not
    assert hops_of(p) == [(1, 100.0, 100.0, 100.0), (1, 100.0, 100.0, 100.0)]
    with pytest.raises(ValueError):
        temporal_flow(g, 0, profile="laundromat")


def test_classification_examples():
    assert classify_account_type(graphs([(0, "a", "b", 100.0, 0)])[2], 0) == "dispenser"
    codes = classify_totals(np.array([95.0, 60.0, 0.0, 0.0, 5.0]), np.array([100.0, 40.0, 0.0, 10.0, 100.0]))
    assert codes.tolist() == [1, 3, 4, 2, 2]
    with pytest.raises(ValueError):
        classify_totals(np.ones(1), np.ones(1), theta_pass=1.0)


@given(seed=st.integers(0, 100_000), hops=st.integers(1, 4))
def test_oracle_equivalence_unlimited(seed, hops):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    _, _, ag = graphs(random_records(rng, n, int(rng.integers(1, 25))), n)
    t = flow_table(ag, hops=hops, top_n=None)
    edges = static_edges(ag)
    rev = [(b, a, x) for a, b, x in edges]
    for v in range(n):
        assert_hops_close(hops_of(t.profile(v, "dispenser")), walk_flow(edges, v, hops, ag.S[v]))
        assert_hops_close(hops_of(t.profile(v, "sink")), walk_flow(rev, v, hops, ag.R[v]))


@pytest.mark.parametrize("seed", range(6))
def test_oracle_equivalence_both_backends(backend, seed):
    rng = np.random.default_rng(seed)
    _, _, ag = graphs(random_records(rng, 10, 30), 10)
    t = flow_table(ag, hops=3, top_n=None)
    edges = static_edges(ag)
    for v in range(10):
        assert_hops_close(hops_of(t.profile(v, "dispenser")), walk_flow(edges, v, 3, ag.S[v]))


@given(seed=st.integers(0, 100_000), top_n=st.integers(1, 4))
def test_truncation_dominance_and_monotone_max(seed, top_n):
    rng = np.random.default_rng(seed)
    _, _, ag = graphs(random_records(rng, 10, 30), 10)
    full = flow_table(ag, hops=4, top_n=None)
    cut = flow_table(ag, hops=4, top_n=top_n)
    for p in ("dispenser", "sink", "passthrough"):
        assert np.all(cut.stats[p]["sum"] <= full.stats[p]["sum"] + 1e-9)
        assert np.all(cut.stats[p]["reached"] <= top_n)
        for t in (full, cut):
            mx = t.stats[p]["max"]
            assert np.all(np.diff(mx, axis=1) <= 1e-12)
            assert np.all(t.stats[p]["sum"] >= 0)
    assert np.all(full.stats["dispenser"]["max"] <= ag.S[:, None] + 1e-9)


@given(seed=st.integers(0, 100_000))
def test_reversal_duality(seed):
    rng = np.random.default_rng(seed)
    _, _, ag = graphs(random_records(rng, 15, 40), 15)
    a = flow_table(ag, hops=4, top_n=3, profiles=("sink",))
    b = flow_table(ag.reversed(), hops=4, top_n=3, profiles=("dispenser",))
    for s in a.stats["sink"]:
        assert np.array_equal(a.stats["sink"][s], b.stats["dispenser"][s])


@given(seed=st.integers(0, 100_000), strict=st.booleans(), hops=st.integers(1, 3))
def test_temporal_oracle_and_subset(seed, strict, hops):
    rng = np.random.default_rng(seed)
    n = 8
    _, g, _ = graphs(random_records(rng, n, 20, t_max=6), n)
    S, R = node_totals(g)
    t = temporal_flow_table(g, hops=hops, top_n=None, strict_chronology=strict)
    multi = list(zip(g.source.tolist(), g.target.tolist(), g.amount.tolist(), g.timestamp.tolist()))
    plain = [e[:3] for e in multi]
    for v in range(n):
        got = hops_of(t.profile(v, "dispenser"))
        assert_hops_close(got, temporal_walk_flow(multi, v, hops, S[v], strict))
        assert_hops_close(hops_of(t.profile(v, "sink")),
                          temporal_walk_flow(multi, v, hops, R[v], strict, backward=True))
        # chronological walks are a subset of all multigraph walks
        for (r, s, *_), (ru, su, *_) in zip(got, walk_flow(plain, v, hops, S[v])):
            assert r <= ru and s <= su + 1e-9


def test_parallel_invariance():
    _, g, ag = graphs(random_records(np.random.default_rng(11), 60, 200), 60)
    a = flow_table(ag, workers=1)
    b = flow_table(ag, workers=3)
    ta = temporal_flow_table(g, workers=1)
    tb = temporal_flow_table(g, workers=3)
    for x, y in ((a, b), (ta, tb)):
        for p in x.stats:
            for s in x.stats[p]:
                assert np.array_equal(x.stats[p][s], y.stats[p][s])
        assert np.array_equal(x.ratio, y.ratio)


def test_csv_export(tmp_path):
    d, _, ag = graphs(DISPENSE)
    t = flow_table(ag, nodes=[d.account_index["a"]], hops=2, profiles=("dispenser",))
    t.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "node,profile,hop,reached,sum,max,mean"
    assert lines[1:] == ["0,dispenser,1,2,100.0,60.0,50.0", "0,dispenser,2,1,50.0,50.0,50.0"]
    names, X = flow_table(ag, hops=2).columns()
    assert X.shape == (ag.node_count, len(names)) and names[-1] == "flow_passthrough_ratio"
