import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from hyperfact.errors import DataFormatError
from hyperfact.factors import FactorSet, init_factors, khatri_rao
from hyperfact.graphs import IntraGraph, graph_from_edges, knn_graph
from hyperfact.objective import (
    grad_mode,
    gradient_check,
    mode_loss,
    total_loss,
)
from hyperfact.sptensor import SparseTensor, reconstruct_at

from test_factors import dense_unfolding, random_tensor


def edgeless_graphs(dims):
    return [IntraGraph(n, sp.csr_matrix((n, n))) for n in dims]


def random_instance(seed, order=3, observed_only=True):
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in rng.integers(3, 7, size=order))
    x = random_tensor(rng, dims, density=0.4)
    x = SparseTensor(dims, x.idx, x.vals, observed_only=observed_only)
    fs = init_factors(dims, int(rng.integers(1, 4)), seed=seed + 1000)
    graphs = [knn_graph(rng.normal(size=(n, 2)), k=min(2, n - 1)) for n in dims]
    lam = float(rng.uniform(0.2, 2.0))
    return x, fs, graphs, lam


class TestTotalLoss:
    def test_zero_factors_binary_tensor(self):
        m, lam = 4, 0.7
        idx = [[i, i] for i in range(m)]
        x = SparseTensor((4, 4), idx, np.ones(m))
        fs = FactorSet([np.zeros((4, 2)), np.zeros((4, 2))])
        graphs = [graph_from_edges(4, [(0, 1)]), graph_from_edges(4, [(2, 3)])]
        out = total_loss(x, fs, graphs, lam)
        assert out.reg_terms == (0.0, 0.0)
        assert out.recon == m
        assert out.total == pytest.approx(lam * m)

    def test_edgeless_graphs_reg_free(self):
        x, fs, _, lam = random_instance(0)
        out = total_loss(x, fs, edgeless_graphs(x.dims), lam)
        assert all(t == 0.0 for t in out.reg_terms)
        assert out.total == pytest.approx(lam * out.recon)

    def test_hand_quadratic_form(self):
        # a = (1, -1) on a single edge: (1/2) a^T L a = (1/2) * 4 = 2
        x = SparseTensor((2, 2), [[0, 0]], [0.0])
        fs = FactorSet([np.array([[1.0], [-1.0]]), np.zeros((2, 1))])
        graphs = [graph_from_edges(2, [(0, 1)]), edgeless_graphs((2,))[0]]
        out = total_loss(x, fs, graphs, lam=0.0)
        assert out.reg_terms[0] == pytest.approx(2.0)
        assert out.total == pytest.approx(2.0)

    def test_breakdown_identity(self):
        x, fs, graphs, lam = random_instance(1)
        out = total_loss(x, fs, graphs, lam)
        assert out.total == pytest.approx(lam * out.recon + sum(out.reg_terms), rel=1e-15)

    def test_missing_graph(self):
        x, fs, graphs, lam = random_instance(2)
        with pytest.raises(DataFormatError):
            total_loss(x, fs, graphs[:-1], lam)


class TestModeLoss:
    def test_matches_dense_unfolded_residual(self):
        rng = np.random.default_rng(5)
        dims = (3, 4)
        idx = np.array(list(itertools.product(range(3), range(4))))
        x = SparseTensor(dims, idx, rng.normal(size=12), observed_only=True)
        fs = init_factors(dims, 2, seed=6)
        graphs = edgeless_graphs(dims)
        for mode in range(2):
            omega = khatri_rao([a for m, a in enumerate(fs.factors) if m != mode])
            resid = dense_unfolding(x, mode) - fs.factors[mode] @ omega.T
            expect = 1.5 * float(np.sum(resid**2))
            assert mode_loss(x, fs, graphs, 1.5, mode) == pytest.approx(expect, rel=1e-10)

    def test_lambda_zero_reduces_to_regularizer(self):
        x, fs, graphs, _ = random_instance(3)
        out = mode_loss(x, fs, graphs, 0.0, 1)
        a = fs.factors[1]
        expect = 0.5 * float(np.sum(a * (graphs[1].laplacian @ a)))
        assert out == pytest.approx(expect, rel=1e-12)

    def test_sum_identity_across_modes(self):
        x, fs, graphs, lam = random_instance(4)
        k = x.order
        total = total_loss(x, fs, graphs, lam)
        mode_sum = sum(mode_loss(x, fs, graphs, lam, m) for m in range(k))
        assert mode_sum - (k - 1) * lam * total.recon == pytest.approx(total.total, rel=1e-12)

    def test_recon_component_mode_invariant(self):
        x, fs, graphs, lam = random_instance(5, observed_only=False)
        recons = [mode_loss(x, fs, graphs, lam, m)
                  - 0.5 * float(np.sum(fs.factors[m] * (graphs[m].laplacian @ fs.factors[m])))
                  for m in range(x.order)]
        assert np.ptp(recons) <= 1e-10 * max(1.0, abs(recons[0]))


class TestGradMode:
    def test_zero_at_exact_fit_with_edgeless_graphs(self):
        fs = init_factors((3, 4), 2, seed=7)
        idx = np.array(list(itertools.product(range(3), range(4))))
        x = SparseTensor((3, 4), idx, reconstruct_at(fs, idx))
        g = grad_mode(x, fs, edgeless_graphs((3, 4)), 1.0, 0)
        assert np.allclose(g, 0.0, atol=1e-12)

    def test_lambda_zero_gives_laplacian_product(self):
        x, fs, graphs, _ = random_instance(6)
        g = grad_mode(x, fs, graphs, 0.0, 2)
        assert np.allclose(g, graphs[2].laplacian @ fs.factors[2], atol=1e-14)

    @pytest.mark.parametrize("observed_only", [True, False])
    def test_finite_difference_small(self, observed_only):
        x, fs, graphs, lam = random_instance(8, order=3, observed_only=observed_only)
        for mode in range(x.order):
            assert gradient_check(x, fs, graphs, lam, mode) <= 1e-5

    def test_descent_direction(self):
        x, fs, graphs, lam = random_instance(9)
        before = total_loss(x, fs, graphs, lam).total
        mode = 1
        g = grad_mode(x, fs, graphs, lam, mode)
        stepped = fs.copy()
        stepped.factors[mode] -= 1e-6 * g
        after = total_loss(x, stepped, graphs, lam).total
        assert after < before

    def test_reg_weights_scale_gradient(self):
        x, fs, graphs, lam = random_instance(10)
        g1 = grad_mode(x, fs, graphs, 0.0, 0, reg_weights=np.ones(x.order))
        g3 = grad_mode(x, fs, graphs, 0.0, 0, reg_weights=3.0 * np.ones(x.order))
        assert np.allclose(3.0 * g1, g3)


class TestGradientSuite:
    @pytest.mark.parametrize("seed,order,observed", [
        (s, o, obs) for s, (o, obs) in enumerate(
            itertools.product((2, 3, 4), (True, False)))
    ])
    def test_instances(self, seed, order, observed):
        x, fs, graphs, lam = random_instance(200 + seed, order=order, observed_only=observed)
        for mode in range(order):
            assert gradient_check(x, fs, graphs, lam, mode) <= 1e-5
