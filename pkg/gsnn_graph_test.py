# gsnn_graph_test.py

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsnn_graph import (
    GraphError,
    build_graph,
    dense_operator,
    edges_from_dense,
    propagate,
    propagate_transpose,
)


@st.composite
def small_graphs(draw, max_nodes=8):
    n = draw(st.integers(min_value=1, max_value=max_nodes))
    pairs = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
    edges = draw(st.lists(pairs, max_size=3 * n))
    return n, edges


def dense_reference(n, edges):
    a = np.zeros((n, n))
    for u, v in edges:
        if u != v:
            a[u, v] = a[v, u] = 1.0
    a += np.eye(n)
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


# =========================
#  Construction
# =========================

def test_path_graph_coefficients():
    g = build_graph(3, [(0, 1), (1, 2)])
    assert g.num_edges == 2
    assert g.nnz == 2 * 2 + 3
    assert g.degree.tolist() == [2, 3, 2]
    assert g.coeff(0, 1) == pytest.approx(1.0 / np.sqrt(6.0))
    assert g.coeff(1, 1) == pytest.approx(1.0 / 3.0)
    assert g.coeff(0, 2) == 0.0


def test_duplicates_and_reverse_edges_collapse():
    g = build_graph(2, [(0, 1), (1, 0), (0, 1)])
    assert g.num_edges == 1
    assert g.edges == ((0, 1),)
    assert g.degree.tolist() == [2, 2]


def test_input_self_loops_are_dropped():
    g = build_graph(2, [(0, 0), (0, 1)])
    assert g.num_edges == 1
    assert g.degree.tolist() == [2, 2]
    assert g.coeff(0, 0) == pytest.approx(0.5)


def test_out_of_range_edge_rejected():
    with pytest.raises(GraphError):
        build_graph(3, [(0, 3)])
    with pytest.raises(GraphError):
        build_graph(3, [(-1, 0)])


def test_neighbors_sorted_and_include_self():
    g = build_graph(5, [(3, 0), (0, 4), (0, 1)])
    assert g.neighbors(0).tolist() == [0, 1, 3, 4]
    assert g.neighbors(2).tolist() == [2]


def test_graph_arrays_are_read_only():
    g = build_graph(3, [(0, 1)])
    with pytest.raises(ValueError):
        g.norm_coeff[0] = 2.0


def test_empty_graph():
    g = build_graph(0, [])
    assert g.num_nodes == 0
    assert g.nnz == 0
    assert propagate(g, np.zeros((0, 3))).shape == (0, 3)


# =========================
#  Propagation
# =========================

def test_isolated_node_passes_features_through():
    g = build_graph(3, [(0, 1)])
    x = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    out = propagate(g, x)
    assert out[2].tolist() == [5.0, 6.0]


def test_single_node_identity():
    g = build_graph(1, [])
    x = np.array([[0.25, -1.5, 3.0]])
    assert np.array_equal(propagate(g, x), x)


def test_row_mismatch_rejected():
    g = build_graph(3, [(0, 1)])
    with pytest.raises(GraphError):
        propagate(g, np.zeros((4, 2)))


@settings(max_examples=60, deadline=None)
@given(small_graphs(), st.integers(min_value=1, max_value=4), st.integers(0, 2**31 - 1))
def test_propagate_matches_dense_operator(graph, channels, seed):
    n, edges = graph
    g = build_graph(n, edges)
    x = np.random.default_rng(seed).normal(size=(n, channels))
    ref = dense_reference(n, edges)
    assert np.allclose(dense_operator(g), ref, atol=1e-12)
    assert np.allclose(propagate(g, x), ref @ x, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(small_graphs(), st.integers(0, 2**31 - 1), st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_propagate_is_linear(graph, seed, a, b):
    n, edges = graph
    g = build_graph(n, edges)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    combined = propagate(g, a * x + b * y)
    assert np.allclose(combined, a * propagate(g, x) + b * propagate(g, y), atol=1e-10)


@pytest.mark.parametrize("n,edges", [
    (5, [(i, (i + 1) % 5) for i in range(5)]),
    (4, [(i, j) for i in range(4) for j in range(i + 1, 4)]),
    (6, [(0, 1), (2, 3), (4, 5)]),
])
def test_regular_graph_preserves_constant_signal(n, edges):
    g = build_graph(n, edges)
    assert len(set(g.degree.tolist())) == 1
    assert np.allclose(propagate(g, np.ones((n, 2))), 1.0)


@settings(max_examples=40, deadline=None)
@given(small_graphs(), st.integers(0, 2**31 - 1))
def test_operator_is_symmetric_and_transpose_is_adjoint(graph, seed):
    n, edges = graph
    g = build_graph(n, edges)
    p = dense_operator(g)
    assert np.allclose(p, p.T, atol=1e-15)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    assert np.sum(propagate(g, x) * y) == pytest.approx(np.sum(x * propagate_transpose(g, y)), abs=1e-10)


def test_propagate_keeps_trailing_shape():
    g = build_graph(3, [(0, 1), (1, 2)])
    x = np.random.default_rng(0).normal(size=(3, 2, 4))
    out = propagate(g, x)
    assert out.shape == (3, 2, 4)
    assert np.allclose(out.reshape(3, -1), dense_operator(g) @ x.reshape(3, -1))


def test_edges_from_dense_roundtrip():
    adj = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 0]])
    edges = edges_from_dense(adj)
    assert edges == [(0, 1), (1, 2)]
    assert build_graph(3, edges).num_edges == 2


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
