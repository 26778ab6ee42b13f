"""Scikit-learn style front end for the graph-regularized factorization.

The estimator owns only configuration in __init__ (so get_params/set_params
and clone work) and learns everything in fit. X is either a SparseTensor or
an (n_entries, K+1) array whose last column holds values; graphs may be
passed at construction or to fit, and default to edgeless (pure lambda
reconstruction).
"""

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator

from .distributed import TrainPlan, run_training
from .errors import DataFormatError
from .factors import FactorSet, init_factors
from .graphs import IntraGraph
from .metrics import rmse
from .refiner import DiffusionRefiner, diffuse, train_refiner
from .sptensor import SparseTensor, reconstruct_at
from .validation import as_index_array


def _edgeless(n):
    return IntraGraph(n, sp.csr_matrix((n, n)))


class GraphRegularizedCP(BaseEstimator):
    """CP factorization of a sparse relation tensor under per-modality
    graph-Laplacian regularization.

    Parameters
    ----------
    rank : latent dimension R shared by all modes.
    lam : weight of the reconstruction term in the objective.
    dims : tensor mode sizes; required when X is an entry array.
    graphs : list of IntraGraph or None per mode (None means edgeless).
    sweep : "gauss_seidel" (sequential, monotone) or "jacobi" (parallel).
    inner_steps, step_size, backtracking, max_rounds, rel_tol, reg_weights,
    workers : forwarded to the training plan.
    observed_only : treat unstored cells as unobserved rather than zeros.
    refine : train the diffusion refiner after the alternating solver.
    refine_epochs, refine_unroll, refine_channels, refine_hidden,
    refine_degree, refine_lr : refiner configuration.
    seed : controls factor initialization and the refiner init.
    """

    def __init__(self, rank=10, lam=1.0, dims=None, graphs=None,
                 sweep="gauss_seidel", inner_steps=5, step_size=0.1,
                 backtracking=True, max_rounds=200, rel_tol=1e-8,
                 reg_weights=None, workers="process", observed_only=True,
                 refine=False, refine_epochs=100, refine_unroll=3,
                 refine_channels=4, refine_hidden=16, refine_degree=3,
                 refine_lr=1e-2, seed=0):
        self.rank = rank
        self.lam = lam
        self.dims = dims
        self.graphs = graphs
        self.sweep = sweep
        self.inner_steps = inner_steps
        self.step_size = step_size
        self.backtracking = backtracking
        self.max_rounds = max_rounds
        self.rel_tol = rel_tol
        self.reg_weights = reg_weights
        self.workers = workers
        self.observed_only = observed_only
        self.refine = refine
        self.refine_epochs = refine_epochs
        self.refine_unroll = refine_unroll
        self.refine_channels = refine_channels
        self.refine_hidden = refine_hidden
        self.refine_degree = refine_degree
        self.refine_lr = refine_lr
        self.seed = seed

    def _as_tensor(self, X):
        if isinstance(X, SparseTensor):
            return X
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] < 3:
            raise DataFormatError(
                "X must be a SparseTensor or an (n_entries, K+1) array of "
                "index columns plus a value column"
            )
        if self.dims is None:
            raise DataFormatError("dims is required when X is an entry array")
        idx = as_index_array(arr[:, :-1], order=len(self.dims))
        return SparseTensor(self.dims, idx, arr[:, -1],
                            observed_only=self.observed_only)

    def _resolve_graphs(self, x, graphs):
        graphs = graphs if graphs is not None else self.graphs
        if graphs is None:
            return [_edgeless(n) for n in x.dims]
        if len(graphs) != x.order:
            raise DataFormatError(f"need {x.order} graphs, got {len(graphs)}")
        return [g if g is not None else _edgeless(n) for g, n in zip(graphs, x.dims)]

    def fit(self, X, y=None, graphs=None):
        """Learn the factor matrices; returns self."""
        x = self._as_tensor(X)
        resolved = self._resolve_graphs(x, graphs)
        plan = TrainPlan(rank=self.rank, lam=self.lam, sweep=self.sweep,
                         inner_steps=self.inner_steps, step_size=self.step_size,
                         backtracking=self.backtracking, max_rounds=self.max_rounds,
                         rel_tol=self.rel_tol, seed=self.seed,
                         reg_weights=self.reg_weights, workers=self.workers)
        fs = init_factors(x.dims, self.rank, seed=self.seed)
        fs, logs = run_training(x, fs, resolved, plan)
        self.factors_ = fs
        self.training_log_ = logs
        self.loss_ = logs[-1].loss.total if logs else None
        self.n_modes_ = x.order
        self.dims_ = x.dims
        self.graphs_ = resolved
        if self.refine:
            model = DiffusionRefiner.create(
                x.order, self.rank, degree=self.refine_degree,
                channels=self.refine_channels, hidden=self.refine_hidden,
                unroll=self.refine_unroll, learning_rate=self.refine_lr,
                seed=self.seed)
            train_refiner(x, fs, resolved, self.lam, model, self.refine_epochs,
                          reg_weights=self.reg_weights)
            self.refiner_ = model
            refined = [diffuse(fs.factors[m], resolved[m].laplacian, model, mode=m)[0]
                       for m in range(x.order)]
            self.refined_factors_ = FactorSet(refined, seed=fs.seed)
        return self

    def _fitted_factors(self):
        if not hasattr(self, "factors_"):
            raise DataFormatError("estimator is not fitted; call fit first")
        return getattr(self, "refined_factors_", self.factors_)

    def predict(self, indices):
        """Reconstruction values at (n, K) index tuples."""
        fs = self._fitted_factors()
        idx = as_index_array(indices, order=self.n_modes_)
        return reconstruct_at(fs, idx)

    def embedding(self, mode):
        """Learned latent rows of one modality."""
        return self._fitted_factors().factors[mode].copy()

    def score(self, X, y=None):
        """Negative RMSE over the entries of X (higher is better)."""
        x = self._as_tensor(X)
        pred = self.predict(x.idx)
        return -rmse(list(zip(map(tuple, x.idx), pred, x.vals)))
