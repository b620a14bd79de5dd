from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openrc.topology import (OpenDigraph, cycle_graph, generate_pool_graph, induced_subgraph,
                             is_strongly_connected, strongly_connected_components,
                             validate_transition)

from helpers import brute_strongly_connected, brute_transition_ok, proposals


@st.composite
def small_graphs(draw, max_n=6):
    n = draw(st.integers(1, max_n))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return OpenDigraph.from_edges(n, [p for p, m in zip(pairs, mask) if m])


def test_induced_subgraph_all_active_cycle():
    g = cycle_graph(3)
    assert induced_subgraph(g, [True] * 3) == {(0, 1), (1, 2), (2, 0)}


def test_induced_subgraph_drops_inactive_endpoint():
    assert induced_subgraph(cycle_graph(3), [True, True, False]) == {(0, 1)}


def test_induced_subgraph_pool_150():
    g = generate_pool_graph(150, 0.1, np.random.default_rng(7))
    act = np.zeros(150, bool)
    act[np.random.default_rng(8).choice(150, 100, replace=False)] = True
    expected = sum(1 for i, j in g.edges if act[i] and act[j])
    assert len(induced_subgraph(g, list(act))) == expected


def test_induced_subgraph_length_mismatch():
    with pytest.raises(ValueError):
        induced_subgraph(cycle_graph(3), [True, True])


@given(small_graphs(), st.data())
def test_induced_subgraph_monotone(g, data):
    act = data.draw(st.lists(st.booleans(), min_size=g.pool_size, max_size=g.pool_size))
    j = data.draw(st.integers(0, g.pool_size - 1))
    fewer = list(act)
    fewer[j] = False
    assert induced_subgraph(g, fewer) <= induced_subgraph(g, act)


def test_scc_examples():
    assert is_strongly_connected([0], [])
    assert not is_strongly_connected([0, 1, 2], [(0, 1), (1, 2)])
    assert is_strongly_connected([0, 1, 2], [(0, 1), (1, 2), (2, 0)])


def test_scc_components_listed():
    comps = strongly_connected_components(range(5), [(0, 1), (1, 0), (1, 2), (3, 4), (4, 3)])
    assert comps == [[0, 1], [2], [3, 4]]


def test_scc_deep_path_no_recursion_limit():
    n = 20000
    edges = [(i, i + 1) for i in range(n - 1)] + [(n - 1, 0)]
    assert is_strongly_connected(range(n), edges)


def test_scc_empty_node_set():
    with pytest.raises(ValueError):
        is_strongly_connected([], [])


@settings(max_examples=300)
@given(small_graphs())
def test_scc_matches_brute_force(g):
    nodes = range(g.pool_size)
    assert is_strongly_connected(nodes, g.edges) == brute_strongly_connected(nodes, g.edges)


def test_generate_single_node():
    g = generate_pool_graph(1, 0.0, np.random.default_rng(3))
    assert g.edges == frozenset()


def test_generate_backbone_only():
    g = generate_pool_graph(5, 0.0, np.random.default_rng(3))
    assert len(g.edges) == 5
    # a single Hamiltonian cycle: every node has in- and out-degree one
    assert all(len(g.out_neighbors(j)) == 1 and len(g.in_neighbors(j)) == 1 for j in range(5))
    assert is_strongly_connected(range(5), g.edges)


def test_generate_pool_150_edge_count():
    g = generate_pool_graph(150, 0.1, np.random.default_rng(11))
    extra_pairs = 150 * 149 - 150
    mean = 150 + 0.1 * extra_pairs
    sd = np.sqrt(extra_pairs * 0.1 * 0.9)
    assert abs(len(g.edges) - mean) < 5 * sd
    assert is_strongly_connected(range(150), g.edges)


def test_generate_deterministic():
    a = generate_pool_graph(30, 0.2, np.random.default_rng(5))
    b = generate_pool_graph(30, 0.2, np.random.default_rng(5))
    assert a.edges == b.edges


def test_generate_rejects_bad_arguments():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        generate_pool_graph(0, 0.1, rng)
    with pytest.raises(ValueError):
        generate_pool_graph(4, 1.5, rng)


def test_generated_graphs_strongly_connected_1000_seeds():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 30))
        g = generate_pool_graph(n, float(rng.uniform(0, 0.3)), rng)
        assert is_strongly_connected(range(n), g.edges), seed
        assert all(i != j for i, j in g.edges)


def test_no_self_loops_allowed():
    with pytest.raises(ValueError):
        OpenDigraph.from_edges(3, [(1, 1)])


def test_validate_no_change():
    assert validate_transition(cycle_graph(3), [True] * 3, set(), set()).ok


def test_validate_departure_breaks_cycle():
    rep = validate_transition(cycle_graph(3), [True] * 3, {1}, set())
    assert not rep.ok
    assert rep.components == ((0,), (2,))
    assert rep.stranded == ()


def test_validate_stranded_departure():
    # node 3 only sends to node 2; both depart together
    edges = [(0, 1), (1, 0), (1, 2), (2, 1), (3, 2), (2, 3), (2, 0)]
    g = OpenDigraph.from_edges(4, edges)
    rep = validate_transition(g, [True] * 4, {2, 3}, set())
    assert 3 in rep.stranded
    assert 2 not in rep.stranded
    assert not rep.ok
    assert "3" in rep.describe()


def test_validate_rejects_malformed_proposals():
    g = cycle_graph(3)
    with pytest.raises(ValueError):
        validate_transition(g, [True, True, False], {2}, set())
    with pytest.raises(ValueError):
        validate_transition(g, [True, True, False], set(), {0})
    with pytest.raises(ValueError):
        validate_transition(g, [True, True, False], {0}, {0})


def test_validate_last_agent_cannot_leave():
    g = OpenDigraph.from_edges(2, [(0, 1), (1, 0)])
    rep = validate_transition(g, [True, False], {0}, set())
    assert not rep.ok and rep.empty


def all_graphs(n):
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    for mask in product((False, True), repeat=len(pairs)):
        yield OpenDigraph.from_edges(n, [p for p, m in zip(pairs, mask) if m])


@pytest.mark.parametrize("n", [1, 2, 3])
def test_validate_exhaustive_small(n):
    for g in all_graphs(n):
        for active, dep, arr in proposals(n):
            got = validate_transition(g, active, dep, arr).ok
            assert got == brute_transition_ok(n, g.edges, active, dep, arr), (g.edges, active, dep, arr)


@settings(max_examples=40, deadline=None)
@given(small_graphs(max_n=5))
def test_validate_matches_brute_force_all_proposals(g):
    n = g.pool_size
    for active, dep, arr in proposals(n):
        assert validate_transition(g, active, dep, arr).ok == brute_transition_ok(n, g.edges, active, dep, arr)
