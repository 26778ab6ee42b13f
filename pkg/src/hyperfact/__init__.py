"""Graph-regularized CP factorization of sparse multi-way relation tensors.

Observed relation tuples across K modalities live in a SparseTensor; each
modality carries an IntraGraph whose normalized Laplacian regularizes that
mode's factor matrix. Training alternates per-mode gradient updates
(sequentially or with one worker per mode), and an optional recurrent
Chebyshev-filter refiner post-processes the factors.
"""

from .data import Dataset, SynthSpec, generate_synthetic, holdout_split, load_movielens
from .distributed import RoundLog, TrainPlan, run_round, run_training
from .errors import DataFormatError, DivergenceError
from .estimator import GraphRegularizedCP
from .factors import FactorSet, gram_hadamard, init_factors, khatri_rao, mttkrp
from .graphs import (
    IntraGraph,
    chebyshev_apply,
    cooccurrence_graph,
    knn_graph,
    normalized_laplacian,
)
from .metrics import MetricReport, attribution_accuracy, average_precision, rmse
from .objective import LossBreakdown, grad_mode, gradient_check, mode_loss, total_loss
from .refiner import (
    ChebyshevFilter,
    DiffusionCell,
    DiffusionRefiner,
    bilinear_conv,
    diffuse,
    mode_conv,
    train_refiner,
)
from .sptensor import SparseTensor, masked_sq_error, reconstruct_at, unfold_column_index

__version__ = "0.1.0"

__all__ = [
    "ChebyshevFilter",
    "DataFormatError",
    "Dataset",
    "DiffusionCell",
    "DiffusionRefiner",
    "DivergenceError",
    "FactorSet",
    "GraphRegularizedCP",
    "IntraGraph",
    "LossBreakdown",
    "MetricReport",
    "RoundLog",
    "SparseTensor",
    "SynthSpec",
    "TrainPlan",
    "attribution_accuracy",
    "average_precision",
    "bilinear_conv",
    "chebyshev_apply",
    "cooccurrence_graph",
    "diffuse",
    "generate_synthetic",
    "grad_mode",
    "gradient_check",
    "gram_hadamard",
    "holdout_split",
    "init_factors",
    "khatri_rao",
    "knn_graph",
    "load_movielens",
    "masked_sq_error",
    "mode_conv",
    "mode_loss",
    "mttkrp",
    "normalized_laplacian",
    "reconstruct_at",
    "rmse",
    "run_round",
    "run_training",
    "total_loss",
    "train_refiner",
    "unfold_column_index",
]
