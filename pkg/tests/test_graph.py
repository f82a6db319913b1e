import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepnt.graph import (
    DenseAdjacency,
    GraphError,
    is_weakly_connected,
    min_eigenvalue_sym,
    read_edge_list,
    reachability,
    sym,
    tarjan_scc,
    write_edge_list,
    z_matrix,
)

from conftest import bfs_reach, floyd_warshall_closure, random_graph, union_find_connected


def test_dense_adjacency_invariants():
    A = DenseAdjacency([[5, 1, 0], [0, 0, 2], [0, 0, 0]])
    assert np.all(np.diag(A.w) == 0)
    np.testing.assert_array_equal(A.w, A.w.T)
    with pytest.raises(GraphError):
        DenseAdjacency([[0, -1], [0, 0]])
    with pytest.raises(GraphError):
        DenseAdjacency(np.zeros((2, 3)))
    D = DenseAdjacency([[0, 1], [0, 0]], directed=True)
    assert D.edges() == [(0, 1)]


def test_sym_examples(rng):
    np.testing.assert_array_equal(sym(np.array([[0, 2], [0, 0]])), [[0, 1], [1, 0]])
    S = np.array([[0, 3], [3, 0]], dtype=float)
    np.testing.assert_array_equal(sym(S), S)
    A = rng.random((5, 5))
    np.testing.assert_allclose(sym(sym(A)), sym(A), atol=0)


def test_z_matrix_examples(rng):
    np.testing.assert_allclose(z_matrix(np.array([[0, 1], [1, 0]])), [[1.5, -0.5], [-0.5, 1.5]])
    np.testing.assert_allclose(np.linalg.eigvalsh(z_matrix(np.array([[0, 1], [1, 0]]))), [1, 2])
    Z0 = z_matrix(np.zeros((2, 2)))
    np.testing.assert_allclose(Z0, [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(np.linalg.eigvalsh(Z0), [0, 1], atol=1e-15)
    A = rng.random((6, 6))
    np.fill_diagonal(A, 0)
    np.testing.assert_allclose((z_matrix(A) - 1 / 6).sum(axis=1), 0, atol=1e-12)


def test_min_eigenvalue_examples():
    assert min_eigenvalue_sym(np.eye(3)) == pytest.approx(1.0, abs=1e-12)
    assert min_eigenvalue_sym([[0.5, 0.5], [0.5, 0.5]]) == pytest.approx(0.0, abs=1e-12)
    assert min_eigenvalue_sym(np.diag([3.0, -2.0, 7.0])) == pytest.approx(-2.0, abs=1e-12)
    with pytest.raises(GraphError):
        min_eigenvalue_sym([[np.nan, 0], [0, 1]])


def test_tarjan_examples():
    cyc = np.zeros((3, 3))
    cyc[0, 1] = cyc[1, 2] = cyc[2, 0] = 1
    assert tarjan_scc(cyc, 0.0).components == [[0, 1, 2]]
    chain = np.zeros((3, 3))
    chain[0, 1] = chain[1, 2] = 1
    # reverse topological order of the condensation
    assert tarjan_scc(chain, 0.0).components == [[2], [1], [0]]


def _mutual_classes(a):
    R = bfs_reach(a)
    M = R & R.T
    return sorted({tuple(np.flatnonzero(M[i])) for i in range(a.shape[0])})


def test_tarjan_matches_mutual_reachability(rng):
    for _ in range(100):
        n = int(rng.integers(1, 9))
        a = random_graph(rng, n, rng.uniform(0.1, 0.5), directed=True)
        part = tarjan_scc(a, 0.0)
        got = sorted(tuple(c) for c in part.components)
        assert got == _mutual_classes(a)
        flat = sorted(x for c in part.components for x in c)
        assert flat == list(range(n))


def test_tarjan_threshold():
    a = np.array([[0, 0.05, 0], [0.5, 0, 0.5], [0, 0.5, 0.0]])
    assert sorted(map(tuple, tarjan_scc(a, 0.1).components)) == [(0,), (1, 2)]


def test_reachability_examples(rng):
    chain = np.zeros((3, 3))
    chain[0, 1] = chain[1, 2] = 1
    R = reachability(chain, 0.0)
    assert R[0, 2] == 1 and R[2, 0] == 0
    np.testing.assert_array_equal(reachability(np.zeros((4, 4))), np.eye(4))
    for _ in range(30):
        a = random_graph(rng, 7, 0.25, directed=True)
        np.testing.assert_array_equal(reachability(a, 0.0).astype(bool), floyd_warshall_closure(a))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_reachability_closed_under_composition(seed):
    rng = np.random.default_rng(seed)
    a = random_graph(rng, 6, 0.3, directed=True)
    R = reachability(a, 0.0).astype(int)
    np.testing.assert_array_equal(((R @ R) > 0).astype(int), R)


def test_weak_connectivity_examples(rng):
    path = np.zeros((4, 4))
    for i in range(3):
        path[i, i + 1] = path[i + 1, i] = 1
    assert is_weakly_connected(path)
    two = np.zeros((4, 4))
    two[0, 1] = two[1, 0] = two[2, 3] = two[3, 2] = 1
    assert not is_weakly_connected(two)
    for _ in range(100):
        n = int(rng.integers(2, 13))
        a = random_graph(rng, n, rng.uniform(0.05, 0.6))
        assert is_weakly_connected(a, 1e-8) == union_find_connected(a)


def test_directed_support_counts_as_weak():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 2] = 1
    assert is_weakly_connected(a)


def test_disconnected_null_vector(rng):
    a = np.zeros((5, 5))
    a[0, 1] = a[1, 0] = a[1, 2] = a[2, 1] = 1
    a[3, 4] = a[4, 3] = 2
    x = np.array([2, 2, 2, -3, -3], dtype=float)
    assert abs(x.sum()) < 1e-15
    assert abs(x @ z_matrix(a) @ x) < 1e-12


def test_edge_list_roundtrip(tmp_path, rng):
    a = random_graph(rng, 6, 0.5) * rng.uniform(0.5, 3, (6, 6))
    A = DenseAdjacency(a)
    path = tmp_path / "g.edges"
    write_edge_list(path, A)
    B = read_edge_list(path)
    np.testing.assert_array_equal(A.w, B.w)
    D = DenseAdjacency(np.triu(a), directed=True)
    write_edge_list(path, D)
    assert read_edge_list(path).directed
    np.testing.assert_array_equal(read_edge_list(path).w, D.w)


def test_edge_list_parsing_rules(tmp_path):
    path = tmp_path / "g.edges"
    path.write_text("# comment\nnodes 3 directed 0\n0 1 2.5\n# another\n1 2 1\n")
    A = read_edge_list(path)
    assert A.w[1, 0] == 2.5 and A.w[2, 1] == 1
    path.write_text("0 1 2\n")
    with pytest.raises(GraphError):
        read_edge_list(path)
    path.write_text("nodes 2 directed 0\n0 5 1\n")
    with pytest.raises(GraphError):
        read_edge_list(path)
