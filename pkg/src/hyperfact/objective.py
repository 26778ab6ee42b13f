"""The joint training objective and its exact per-mode gradients.

total = (1/2) sum_mode w_mode tr(A^T L A)  +  lambda * squared recon error

The trace term pulls graph-adjacent items of one modality toward similar
latent rows; lambda weighs the cross-modal reconstruction term.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, DivergenceError
from .factors import gram_hadamard, mttkrp
from .sptensor import masked_sq_error, reconstruct_at
from .validation import check_mode


@dataclass(frozen=True)
class LossBreakdown:
    """Itemized objective value: per-mode regularizers plus reconstruction."""

    reg_terms: tuple
    recon: float
    lam: float
    total: float = field(init=False)

    def __post_init__(self):
        total = self.lam * self.recon + float(sum(self.reg_terms))
        if not np.isfinite(total) or self.recon < 0:
            raise DivergenceError(
                f"non-finite objective: recon={self.recon}, reg={self.reg_terms}"
            )
        object.__setattr__(self, "total", total)


def _check_inputs(x, fs, graphs):
    if fs.order != x.order:
        raise DataFormatError(f"{fs.order} factors for order-{x.order} tensor")
    if len(graphs) != x.order:
        raise DataFormatError(f"need one graph per mode, got {len(graphs)} for {x.order}")
    for mode, (a, g) in enumerate(zip(fs.factors, graphs)):
        if a.shape[0] != x.dims[mode] or g.n != x.dims[mode]:
            raise DataFormatError(f"mode {mode}: factor/graph/tensor sizes disagree")


def _weights(reg_weights, order):
    if reg_weights is None:
        return np.ones(order)
    w = np.asarray(reg_weights, dtype=np.float64)
    if w.shape != (order,):
        raise DataFormatError(f"need {order} regularizer weights, got shape {w.shape}")
    return w


def _reg_term(a, graph, weight):
    # (1/2) w tr(A^T L A) without forming L A twice
    la = graph.laplacian @ a
    return 0.5 * weight * float(np.sum(a * la))


def total_loss(x, fs, graphs, lam, reg_weights=None):
    """Joint objective across all modes, itemized."""
    _check_inputs(x, fs, graphs)
    w = _weights(reg_weights, x.order)
    regs = tuple(_reg_term(a, g, w[m]) for m, (a, g) in enumerate(zip(fs.factors, graphs)))
    return LossBreakdown(reg_terms=regs, recon=masked_sq_error(x, fs), lam=float(lam))


def mode_loss(x, fs, graphs, lam, mode, reg_weights=None):
    """lambda * recon error + this mode's regularizer.

    The reconstruction term equals the Frobenius error of the mode
    unfolding, so it is the same number for every mode.
    """
    _check_inputs(x, fs, graphs)
    mode = check_mode(mode, x.order)
    w = _weights(reg_weights, x.order)
    return lam * masked_sq_error(x, fs) + _reg_term(fs.factors[mode], graphs[mode], w[mode])


def grad_mode(x, fs, graphs, lam, mode, reg_weights=None):
    """Exact gradient of mode_loss with respect to A_mode, others fixed."""
    _check_inputs(x, fs, graphs)
    mode = check_mode(mode, x.order)
    w = _weights(reg_weights, x.order)
    a = fs.factors[mode]
    if x.observed_only:
        residual = reconstruct_at(fs, x.idx) - x.vals if x.nnz else np.zeros(0)
        data_grad = 2.0 * lam * mttkrp(x, fs, mode, values=residual)
    else:
        data_grad = 2.0 * lam * (a @ gram_hadamard(fs, mode) - mttkrp(x, fs, mode))
    return data_grad + w[mode] * (graphs[mode].laplacian @ a)


def finite_difference_grad(x, fs, graphs, lam, mode, step=1e-5, reg_weights=None):
    """Central-difference gradient of mode_loss, entry by entry (oracle)."""
    base = fs.copy()
    a = base.factors[mode]
    out = np.zeros_like(a)
    for i in range(a.shape[0]):
        for r in range(a.shape[1]):
            orig = a[i, r]
            a[i, r] = orig + step
            hi = mode_loss(x, base, graphs, lam, mode, reg_weights)
            a[i, r] = orig - step
            lo = mode_loss(x, base, graphs, lam, mode, reg_weights)
            a[i, r] = orig
            out[i, r] = (hi - lo) / (2.0 * step)
    return out


def gradient_check(x, fs, graphs, lam, mode, step=1e-5, reg_weights=None):
    """Max elementwise |analytic - central difference|, relative to the
    gradient scale. Small (< 1e-5) on correct gradients in float64."""
    g = grad_mode(x, fs, graphs, lam, mode, reg_weights)
    fd = finite_difference_grad(x, fs, graphs, lam, mode, step, reg_weights)
    scale = max(np.abs(fd).max(), np.abs(g).max(), 1e-12)
    return float(np.abs(g - fd).max() / scale)
