"""Graph generation: regularity, determinism, feasibility, connectivity."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clusterdl import topology as tp


def test_gen_r_regular_degrees():
    t = tp.gen_r_regular(8, 4, seed=7)
    hist = {}
    for i in range(8):
        hist[t.degree(i)] = hist.get(t.degree(i), 0) + 1
    assert hist == {4: 8}


def test_gen_r_regular_simple_graph():
    t = tp.gen_r_regular(10, 3, seed=0)
    assert all(u != v for u, v in t.edges)
    assert len(t.edges) == 10 * 3 // 2  # no duplicates by construction


def test_same_seed_same_graph():
    a = tp.gen_r_regular(12, 4, seed=42)
    b = tp.gen_r_regular(12, 4, seed=42)
    c = tp.gen_r_regular(12, 4, seed=43)
    assert a.edges == b.edges
    assert a.edges != c.edges  # overwhelmingly likely, pinned by these seeds


def test_neighbors_sorted_and_symmetric():
    t = tp.gen_r_regular(8, 4, seed=7)
    ns = tp.neighbors(t, 0)
    assert len(ns) == 4
    assert list(ns) == sorted(ns)
    for i in range(8):
        for j in tp.neighbors(t, i):
            assert i in tp.neighbors(t, j)
    with pytest.raises(IndexError):
        tp.neighbors(t, 8)


@pytest.mark.parametrize(
    "n,r",
    [(5, 3), (4, 4), (3, 0), (1, 1), (6, -1)],
)
def test_infeasible_requests_rejected(n, r):
    with pytest.raises(tp.TopologyInfeasibleError):
        tp.gen_r_regular(n, r, seed=0)


def test_connectivity_rate_over_many_seeds():
    # Random 4-regular graphs on 8 nodes are connected nearly always;
    # the generator records but does not enforce this.
    connected = sum(
        tp.is_connected(tp.gen_r_regular(8, 4, seed=s)) for s in range(1000)
    )
    assert connected >= 950


def test_disconnected_graph_detected():
    # two disjoint triangles
    edges = frozenset({(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)})
    t = tp.Topology(0, 6, 2, edges)
    assert not tp.is_connected(t)
    assert tp.is_connected(tp.gen_static_ring(6, 2))


def test_static_ring_structure():
    t = tp.gen_static_ring(5, 2)
    assert t.edges == frozenset({(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)})
    t2 = tp.gen_static_ring(8, 4)
    assert all(t2.degree(i) == 4 for i in range(8))
    assert tp.neighbors(t2, 0) == (1, 2, 6, 7)


def test_static_ring_rejects_odd_or_oversized_degree():
    with pytest.raises(tp.TopologyInfeasibleError):
        tp.gen_static_ring(6, 3)
    with pytest.raises(tp.TopologyInfeasibleError):
        tp.gen_static_ring(4, 4)
    with pytest.raises(tp.TopologyInfeasibleError):
        tp.gen_static_ring(5, 0)


@given(st.integers(0, 10_000))
def test_pairing_always_r_regular(seed):
    t = tp.gen_r_regular(6, 3, seed=seed)
    assert all(t.degree(i) == 3 for i in range(6))


def test_retry_exhaustion_is_reported():
    # n=2, r=1 has a single simple graph; forbid it by exhausting restarts
    # with an impossible case instead: n=2 nodes with r=1 works, so use a
    # tiny max_restarts on a case where most pairings fail.
    with pytest.raises(tp.PairingRetryError):
        # With max_restarts=0 every request exhausts immediately.
        tp.gen_r_regular(8, 4, seed=0, max_restarts=0)


def test_dump_edges(tmp_path):
    t = tp.gen_static_ring(4, 2)
    out = tmp_path / "edges.txt"
    tp.dump_edges(t, out)
    assert out.read_text().splitlines() == ["0 1", "0 3", "1 2", "2 3"]
