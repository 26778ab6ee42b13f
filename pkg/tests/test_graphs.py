import numpy as np
import pytest
import scipy.sparse as sp

from hyperfact.errors import DataFormatError
from hyperfact.graphs import (
    IntraGraph,
    chebyshev_apply,
    cooccurrence_graph,
    graph_from_edges,
    knn_graph,
    load_feature_file,
    load_graph_file,
    normalized_laplacian,
    save_graph_file,
)


def edgeless(n):
    return IntraGraph(n, sp.csr_matrix((n, n)))


class TestKnnGraph:
    def test_collinear_points(self):
        feats = np.array([[0.0], [1.0], [10.0]])
        g = knn_graph(feats, k=1)
        # point 2's nearest is point 1; symmetrized union
        assert g.edge_set() == {(0, 1), (1, 2)}

    def test_complete_graph(self):
        feats = np.random.default_rng(0).normal(size=(5, 3))
        g = knn_graph(feats, k=4)
        assert g.n_edges == 10

    def test_duplicated_points_no_self_loop(self):
        feats = np.array([[1.0], [1.0], [1.0]])
        g = knn_graph(feats, k=1)
        assert g.adjacency.diagonal().sum() == 0
        # ties broken toward lower ids: everyone picks node 0 (node 0 picks 1)
        assert g.edge_set() == {(0, 1), (0, 2)}

    def test_row_order_invariance_up_to_relabeling(self):
        rng = np.random.default_rng(4)
        feats = rng.normal(size=(8, 2))
        perm = rng.permutation(8)
        g = knn_graph(feats, k=2)
        gp = knn_graph(feats[perm], k=2)
        relabeled = {tuple(sorted((int(np.where(perm == i)[0][0]), int(np.where(perm == j)[0][0]))))
                     for i, j in g.edge_set()}
        assert relabeled == gp.edge_set()

    def test_errors(self):
        feats = np.zeros((3, 2))
        with pytest.raises(DataFormatError):
            knn_graph(feats, k=3)
        feats[0, 0] = np.nan
        with pytest.raises(DataFormatError):
            knn_graph(feats, k=1)


class TestCooccurrenceGraph:
    def test_no_transitive_closure(self):
        g = cooccurrence_graph([(0, "g1"), (1, "g1"), (1, "g2"), (2, "g2")], n=3)
        assert g.edge_set() == {(0, 1), (1, 2)}

    def test_single_group_complete(self):
        g = cooccurrence_graph([(i, "g") for i in range(4)], n=4)
        assert g.n_edges == 6

    def test_empty_membership(self):
        g = cooccurrence_graph([], n=5)
        assert g.n_edges == 0
        assert np.all(g.degrees == 0)

    def test_out_of_range_node(self):
        with pytest.raises(DataFormatError):
            cooccurrence_graph([(5, "g")], n=3)


class TestNormalizedLaplacian:
    def test_single_edge(self):
        g = graph_from_edges(2, [(0, 1)])
        lap = normalized_laplacian(g).toarray()
        assert np.allclose(lap, [[1.0, -1.0], [-1.0, 1.0]])

    def test_edgeless_zero_matrix(self):
        lap = normalized_laplacian(edgeless(3)).toarray()
        assert np.allclose(lap, 0.0)

    def test_triangle(self):
        g = graph_from_edges(3, [(0, 1), (1, 2), (0, 2)])
        lap = g.laplacian.toarray()
        assert np.allclose(np.diag(lap), 1.0)
        off = lap[~np.eye(3, dtype=bool)]
        assert np.allclose(off, -0.5)
        eigs = np.sort(np.linalg.eigvalsh(lap))
        assert np.allclose(eigs, [0.0, 1.5, 1.5])

    def test_positive_semidefinite(self):
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(12, 3))
        lap = knn_graph(feats, k=3).laplacian.toarray()
        assert np.allclose(lap, lap.T)
        for _ in range(100):
            v = rng.normal(size=12)
            assert v @ lap @ v >= -1e-12

    def test_eigenvalues_in_0_2(self):
        rng = np.random.default_rng(1)
        g = knn_graph(rng.normal(size=(10, 2)), k=3)
        eigs = np.linalg.eigvalsh(g.laplacian.toarray())
        assert eigs.min() >= -1e-12 and eigs.max() <= 2.0 + 1e-12

    def test_constant_vector_in_kernel_on_connected_graph(self):
        g = graph_from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
        # regular connected graph: D^{-1/2} 1 is the 0-eigenvector
        v = np.sqrt(g.degrees)
        assert np.allclose(g.laplacian @ v, 0.0, atol=1e-12)

    def test_asymmetric_rejected(self):
        adj = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(DataFormatError, match="symmetric"):
            IntraGraph(2, adj)


class TestChebyshevApply:
    def test_p0_identity(self):
        x = np.arange(6.0).reshape(3, 2)
        out = chebyshev_apply(edgeless(3).laplacian, x, 0)
        assert len(out) == 1
        assert np.array_equal(out[0], x)

    def test_edgeless_alternating_sign(self):
        # L = 0 so the shifted operator is -I: T_0 X, -X, X
        x = np.arange(6.0).reshape(3, 2) + 1.0
        t0, t1, t2 = chebyshev_apply(edgeless(3).laplacian, x, 2)
        assert np.array_equal(t0, x)
        assert np.array_equal(t1, -x)
        assert np.array_equal(t2, x)

    def test_matches_dense_polynomial_oracle(self):
        rng = np.random.default_rng(2)
        g = knn_graph(rng.normal(size=(5, 2)), k=2)
        lap = g.laplacian.toarray()
        shifted = lap - np.eye(5)
        x = rng.normal(size=(5, 3))
        # dense recurrence on explicit matrix powers
        t_mats = [np.eye(5), shifted]
        for _ in range(2, 4):
            t_mats.append(2.0 * shifted @ t_mats[-1] - t_mats[-2])
        out = chebyshev_apply(g.laplacian, x, 3)
        for got, t in zip(out, t_mats):
            assert np.allclose(got, t @ x, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        g = knn_graph(rng.normal(size=(7, 2)), k=2)
        x = rng.normal(size=(7, 2))
        perm = rng.permutation(7)
        p = np.eye(7)[perm]
        lap_p = sp.csr_matrix(p @ g.laplacian.toarray() @ p.T)
        base = chebyshev_apply(g.laplacian, x, 3)
        permuted = chebyshev_apply(lap_p, p @ x, 3)
        for a, b in zip(base, permuted):
            assert np.allclose(p @ a, b, atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DataFormatError):
            chebyshev_apply(edgeless(3).laplacian, np.zeros((4, 2)), 1)


class TestGraphFile:
    def test_round_trip(self, tmp_path):
        g = graph_from_edges(5, [(0, 1), (2, 4), (1, 3)], weights=[1.0, 2.5, 1.0])
        path = tmp_path / "g.tsv"
        save_graph_file(g, path)
        h = load_graph_file(path)
        assert h.n == 5
        assert np.allclose(h.adjacency.toarray(), g.adjacency.toarray())

    def test_missing_header(self, tmp_path):
        path = tmp_path / "g.tsv"
        path.write_text("0\t1\n")
        with pytest.raises(DataFormatError):
            load_graph_file(path)

    def test_feature_file(self, tmp_path):
        path = tmp_path / "f.tsv"
        path.write_text("1.0\t2.0\n3.0\t4.0\n")
        feats = load_feature_file(path)
        assert feats.shape == (2, 2)
        path.write_text("1.0\t2.0\n3.0\n")
        with pytest.raises(DataFormatError):
            load_feature_file(path)
