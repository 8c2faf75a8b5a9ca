import numpy as np
import pytest
from hypothesis import given, strategies as st

from quasiflow.communities import (
    EGO, LEIDEN, Partition, community_membership_table, ego_communities, ego_community,
    leiden_partition, membership_from_groups, modularity,
)
from quasiflow.errors import DataError
from quasiflow.graph import aggregate, build_multigraph
from quasiflow.ingest import from_records

from conftest import dataset_from_rows, random_records
from oracles import dense_modularity, hop_reachable, set_partitions


def agg(rows, n=None):
    d = dataset_from_rows(rows, n) if n is not None else from_records(rows)
    return d, aggregate(build_multigraph(d))


def int_rows(edges, amount=100.0):
    rows = []
    for i, e in enumerate(edges):
        rows.append((i, e[0], e[1], e[2] if len(e) > 2 else amount, 0))
    return rows


def two_cliques():
    edges = []
    for block in (range(0, 4), range(4, 8)):
        for i in block:
            for j in block:
                if i < j:
                    edges.append((i, j, 100.0))
    edges.append((3, 4, 1.0))
    return agg(int_rows(edges), 8)


def projection(ag):
    u, v, w = ag.undirected_projection()
    return list(zip(u.tolist(), v.tolist(), w.tolist()))


def test_two_cliques_exhaustive_optimum():
    _, ag = two_cliques()
    proj = projection(ag)
    best = max(set_partitions(8), key=lambda lab: dense_modularity(8, proj, lab))
    assert best == [0, 0, 0, 0, 1, 1, 1, 1]
    p = leiden_partition(ag, seed=0)
    assert p.assignment.tolist() == best
    assert p.community_count == 2
    assert p.modularity_score == pytest.approx(dense_modularity(8, proj, best), abs=1e-12)


def test_single_edge_one_community():
    _, ag = agg(int_rows([(0, 1)]), 2)
    proj = projection(ag)
    together = dense_modularity(2, proj, [0, 0])
    apart = dense_modularity(2, proj, [0, 1])
    assert together == pytest.approx(0.0) and apart == pytest.approx(-0.5)
    assert leiden_partition(ag).assignment.tolist() == [0, 0]


def test_no_edges_singletons():
    _, ag = agg([(0, "a", "a", 1.0, 0), (1, "b", "b", 1.0, 0), (2, "c", "c", 1.0, 0)])
    p = leiden_partition(ag)
    assert p.assignment.tolist() == [0, 1, 2]
    assert p.modularity_score == 0.0
    with pytest.raises(DataError):
        modularity(ag, p)


def test_two_triangles_q_half():
    edges = [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]
    _, ag = agg(int_rows(edges), 6)
    assert modularity(ag, np.array([0, 0, 0, 1, 1, 1])) == pytest.approx(0.5, abs=1e-12)
    assert modularity(ag, np.zeros(6, dtype=int)) == pytest.approx(0.0, abs=1e-12)


@given(seed=st.integers(0, 100_000), k=st.integers(1, 5), res=st.sampled_from([0.5, 1.0, 2.0]))
def test_modularity_dense_oracle(seed, k, res):
    rng = np.random.default_rng(seed)
    _, ag = agg(random_records(rng, 10, 25), 10)
    labels = rng.integers(0, k, 10)
    assert modularity(ag, labels, res) == pytest.approx(
        dense_modularity(10, projection(ag), labels.tolist(), res), abs=1e-9)


@given(seed=st.integers(0, 100_000))
def test_leiden_properties(seed):
    rng = np.random.default_rng(seed)
    _, ag = agg(random_records(rng, 25, 50), 25)
    p = leiden_partition(ag, seed=3)
    q = leiden_partition(ag, seed=3)
    assert np.array_equal(p.assignment, q.assignment)
    labels = p.assignment
    assert sorted(set(labels.tolist())) == list(range(p.community_count))
    assert p.modularity_score >= modularity(ag, np.arange(25)) - 1e-12
    # every community is connected in the undirected projection
    proj = projection(ag)
    for c in range(p.community_count):
        members = set(np.flatnonzero(labels == c).tolist())
        start = next(iter(members))
        seen, stack = {start}, [start]
        while stack:
            x = stack.pop()
            for u, v, w in proj:
                for a, b in ((u, v), (v, u)):
                    if a == x and b in members and b not in seen and w > 0:
                        seen.add(b)
                        stack.append(b)
        assert seen == members


def test_ego_star():
    _, ag = agg(int_rows([(0, 1), (0, 2), (0, 3)]), 4)
    e = ego_community(ag, 0, n_hops=1, top_k_per_hop=10)
    assert e.members == {0, 1, 2, 3}


def test_ego_chain_forward_hops():
    _, ag = agg(int_rows([(0, 1), (1, 2), (2, 3), (3, 4)]), 5)
    assert ego_community(ag, 0, n_hops=2).members == {0, 1, 2}


def test_ego_path_both_directions():
    _, ag = agg(int_rows([(0, 1), (1, 2)]), 3)
    assert ego_community(ag, 1, n_hops=1).members == {0, 1, 2}


def test_ego_unknown_seed():
    _, ag = agg(int_rows([(0, 1)]), 2)
    with pytest.raises(DataError):
        ego_community(ag, 5)
    with pytest.raises(ValueError):
        ego_community(ag, 0, restart=1.0)


def test_ego_disconnected_seed_singleton():
    _, ag = agg(int_rows([(0, 1)]) + [(9, 2, 2, 5.0, 0)], 3)
    e = ego_community(ag, 2)
    assert e.members == {2}


def test_ego_caps():
    # hub with 10 spokes of distinct amounts: top_k keeps the heaviest
    rows = [(i, 0, i + 1, float(10 * (i + 1)), 0) for i in range(10)]
    _, ag = agg(rows, 11)
    e = ego_community(ag, 0, n_hops=1, top_k_per_hop=3)
    assert e.members == {0, 10, 9, 8}
    e = ego_community(ag, 0, n_hops=1, max_size=2)
    assert e.members == {0, 10}


@given(seed=st.integers(0, 100_000), hops=st.integers(1, 3))
def test_ego_within_hop_oracle(seed, hops):
    rng = np.random.default_rng(seed)
    rows = random_records(rng, 15, 30)
    _, ag = agg(rows, 15)
    edges = list(zip(ag.source.tolist(), ag.target.tolist()))
    for s in range(15):
        e = ego_community(ag, s, n_hops=hops, top_k_per_hop=1000, max_size=1000)
        assert s in e.members
        assert e.members == hop_reachable(edges, s, hops)
        small = ego_community(ag, s, n_hops=hops, top_k_per_hop=2, max_size=4)
        assert small.members <= e.members and len(small.members) <= 4 and s in small.members


def test_ego_parallel_matches_serial():
    _, ag = agg(random_records(np.random.default_rng(7), 40, 120), 40)
    a = ego_communities(ag, workers=1)
    b = ego_communities(ag, workers=3)
    assert [(e.seed, e.members, e.member_rank) for e in a] == [(e.seed, e.members, e.member_rank) for e in b]


def test_membership_table_examples():
    p = Partition(np.array([0, 0]), 1, 0.0)
    _, ag = agg(int_rows([(0, 1)]), 2)
    ego_a = ego_community(ag, 0, n_hops=1)
    t = community_membership_table(p, [ego_a])
    assert len(t) == 2 + len(ego_a.members)
    t = membership_from_groups([(LEIDEN, 0, [0, 1]), (EGO, 0, [0])])
    assert len(t) == 3
    t = membership_from_groups([(EGO, 0, [0, 1]), (EGO, 2, [1, 2])])
    assert int(np.sum(t.node == 1)) == 2
    t = community_membership_table(p, [])
    assert set(t.ctype.tolist()) == {LEIDEN}


def test_membership_csv(tmp_path):
    t = membership_from_groups([(LEIDEN, 0, [0, 1]), (EGO, 1, [1])])
    t.to_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines() == [
        "community_id,type,node", "0,leiden,0", "0,leiden,1", "1,ego,1"]
