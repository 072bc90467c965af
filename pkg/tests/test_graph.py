import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from otrelax.graph import (
    Graph,
    chordal_completion,
    clique_tree,
    graph_power,
    in_pattern,
    is_chordal,
    is_perfect_elimination_ordering,
    maximal_cliques,
    maximum_cardinality_search,
    project_pattern,
)


def _nx(g: Graph) -> nx.Graph:
    h = nx.Graph()
    h.add_nodes_from(range(g.n))
    h.add_edges_from(g.edges)
    return h


@st.composite
def graphs(draw, max_n=9):
    n = draw(st.integers(1, max_n))
    pairs = list(itertools.combinations(range(n), 2))
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return Graph(n, [e for e, keep in zip(pairs, mask) if keep])


def test_edges_are_canonical():
    g = Graph(4, [(2, 1), (1, 2), (3, 0)])
    assert g.edges == ((0, 3), (1, 2))


@pytest.mark.parametrize("edges", [[(0, 0)], [(0, 4)], [(-1, 2)]])
def test_invalid_edges_rejected(edges):
    with pytest.raises(ValueError):
        Graph(4, edges)


def test_power_of_path():
    g = graph_power(Graph.path(5), 2)
    assert set(g.edges) == {(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (1, 3), (2, 4)}


def test_power_zero_is_empty():
    assert graph_power(Graph.cycle(6), 0).edges == ()


def test_power_saturates_to_complete():
    assert graph_power(Graph.path(5), 4).is_complete
    assert graph_power(Graph.path(5), 9).is_complete


def test_power_one_is_identity():
    g = Graph(5, [(0, 3), (1, 2)])
    assert graph_power(g, 1) == g


@settings(max_examples=60, deadline=None)
@given(graphs(), st.integers(0, 4))
def test_power_matches_networkx_distances(g, h):
    gh = graph_power(g, h)
    dist = dict(nx.all_pairs_shortest_path_length(_nx(g)))
    expected = {(i, j) for i in range(g.n) for j in range(i + 1, g.n) if dist[i].get(j, np.inf) <= h}
    assert set(gh.edges) == expected
    assert set(gh.edges) <= set(graph_power(g, h + 1).edges)


def test_project_pattern_small_example():
    a = np.array([[1.0, 2.0, 5.0], [2.0, 3.0, 4.0], [5.0, 4.0, 6.0]])
    g = Graph.path(3)
    comp = project_pattern(a, g, "complement")
    np.testing.assert_array_equal(comp, [[0, 0, 5], [0, 0, 0], [5, 0, 0]])
    onto = project_pattern(a, g, "onto")
    np.testing.assert_array_equal(onto, [[1, 2, 0], [2, 3, 4], [0, 4, 6]])


def test_project_pattern_trivial_cases():
    rng = np.random.default_rng(0)
    b = rng.normal(size=(4, 4))
    a = b + b.T
    g = Graph.path(4)
    onto = project_pattern(a, g, "onto")
    assert in_pattern(onto, g)
    np.testing.assert_array_equal(project_pattern(onto, g, "complement"), np.zeros((4, 4)))
    np.testing.assert_array_equal(project_pattern(a, Graph.complete(4), "complement"), np.zeros((4, 4)))


@settings(max_examples=40, deadline=None)
@given(graphs(max_n=7), st.integers(0, 2**31 - 1))
def test_projections_reconstruct(g, seed):
    b = np.random.default_rng(seed).normal(size=(g.n, g.n))
    a = b + b.T
    np.testing.assert_array_equal(project_pattern(a, g, "onto") + project_pattern(a, g, "complement"), a)


def test_project_pattern_dimension_mismatch():
    with pytest.raises(ValueError):
        project_pattern(np.eye(3), Graph.path(4))


def test_cliques_of_small_graphs():
    ok, cl = maximal_cliques(Graph.path(4))
    assert ok and cl == [(0, 1), (1, 2), (2, 3)]
    ok, cl = maximal_cliques(Graph.complete(3))
    assert ok and cl == [(0, 1, 2)]
    ok, cl = maximal_cliques(Graph.cycle(4))
    assert not ok
    assert len(cl) == 2 and all(len(c) == 3 for c in cl)


def test_completion_of_cycle_adds_one_chord():
    filled, order = chordal_completion(Graph.cycle(4))
    assert len(filled.edges) == 5
    assert is_perfect_elimination_ordering(filled, order)


def test_disconnected_graph_cliques_per_component():
    g = Graph(5, [(0, 1), (3, 4)])
    ok, cl = maximal_cliques(g)
    assert ok
    assert sorted(cl) == [(0, 1), (2,), (3, 4)]


@settings(max_examples=80, deadline=None)
@given(graphs())
def test_chordality_and_cliques_match_networkx(g):
    h = _nx(g)
    assert is_chordal(g) == nx.is_chordal(h)
    ok, cl = maximal_cliques(g)
    assert ok == nx.is_chordal(h)
    if ok:
        assert sorted(cl) == sorted(tuple(sorted(c)) for c in nx.find_cliques(h))
    # every edge lies in some clique, and cliques are sorted and unique
    for i, j in g.edges:
        assert any(i in c and j in c for c in cl)
    assert all(list(c) == sorted(c) for c in cl)
    assert len(set(cl)) == len(cl)


@settings(max_examples=60, deadline=None)
@given(graphs())
def test_completion_is_chordal_supergraph(g):
    filled, order = chordal_completion(g)
    assert set(g.edges) <= set(filled.edges)
    assert nx.is_chordal(_nx(filled))
    assert is_perfect_elimination_ordering(filled, order)


@settings(max_examples=60, deadline=None)
@given(graphs())
def test_clique_tree_running_intersection(g):
    filled, _ = chordal_completion(g)
    _, cl = maximal_cliques(filled)
    tree = clique_tree(cl)
    forest = nx.Graph()
    forest.add_nodes_from(range(len(cl)))
    forest.add_edges_from(tree)
    assert nx.is_forest(forest)
    # running intersection: cliques containing any vertex induce a connected subtree
    for v in range(g.n):
        holders = [k for k, c in enumerate(cl) if v in c]
        assert nx.is_connected(forest.subgraph(holders))


def test_mcs_order_is_peo_on_chordal_graph():
    g = Graph(6, [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (2, 4), (4, 5)])
    order = maximum_cardinality_search(g)
    assert sorted(order) == list(range(6))
    assert is_chordal(g)


def test_json_round_trip():
    g = Graph(5, [(0, 4), (1, 3)])
    assert Graph.from_json(g.to_json()) == g
