"""Chebyshev graph-filter feature extraction and the recurrent diffusion
refiner that layers on top of the alternating solver.

Each unroll step filters the current factor matrix through a per-mode
Chebyshev filter bank, feeds the per-node feature rows to a recurrent
gated cell (parameters shared across nodes, so the refiner is
size-independent and permutation-equivariant), and applies the emitted
per-row increments. Training differentiates the joint objective through
the unrolled steps with reverse-mode accumulation.
"""

import numpy as np

from . import _autodiff as ad
from ._autodiff import _stable_sigmoid as _sigmoid
from .errors import DataFormatError, DivergenceError
from .graphs import chebyshev_apply
from .objective import _weights


class ChebyshevFilter:
    """Per-mode spectral filter: coeffs[j, c] weights Chebyshev order j in
    output channel c."""

    def __init__(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.ndim != 2:
            raise DataFormatError("filter coeffs must be (degree+1, channels)")
        if not np.all(np.isfinite(coeffs)):
            raise DataFormatError("filter coeffs must be finite")
        self.coeffs = coeffs

    @property
    def degree(self):
        return self.coeffs.shape[0] - 1

    @property
    def channels(self):
        return self.coeffs.shape[1]

    @classmethod
    def passthrough(cls, degree, channels):
        """Order-0 coefficient 1 in every channel: conv output equals input."""
        coeffs = np.zeros((degree + 1, channels))
        coeffs[0, :] = 1.0
        return cls(coeffs)


class DiffusionCell:
    """Gated recurrent cell emitting per-row factor increments.

    Consumes the flattened (channels * rank) feature row of one node,
    carries hidden/cell state across unroll steps, and projects the hidden
    state to a length-rank increment. The output projection starts at zero
    so an untrained refiner is the identity map.
    """

    def __init__(self, input_size, hidden_size, rank, seed=0):
        rng = np.random.default_rng(seed)
        s = 1.0 / np.sqrt(hidden_size)
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.rank = rank
        self.w_x = rng.uniform(-s, s, size=(input_size, 4 * hidden_size))
        self.w_h = rng.uniform(-s, s, size=(hidden_size, 4 * hidden_size))
        self.bias = np.zeros(4 * hidden_size)
        self.bias[hidden_size:2 * hidden_size] = 1.0  # forget gate starts open
        self.w_out = np.zeros((hidden_size, rank))
        self.b_out = np.zeros(rank)

    def step(self, u, h, c):
        """One recurrence step for all nodes at once; returns (delta, h, c)."""
        hh = self.hidden_size
        z = u @ self.w_x + h @ self.w_h + self.bias
        i = _sigmoid(z[:, :hh])
        f = _sigmoid(z[:, hh:2 * hh])
        o = _sigmoid(z[:, 2 * hh:3 * hh])
        g = np.tanh(z[:, 3 * hh:])
        c = f * c + i * g
        h = o * np.tanh(c)
        return h @ self.w_out + self.b_out, h, c


class DiffusionRefiner:
    """Per-mode filters plus diffusion cells and the unroll/training config.

    ``shared_cell=True`` uses one cell for every mode (requires equal
    channel counts, which filters built through ``create`` always have).
    """

    def __init__(self, filters, cells, unroll, learning_rate=1e-2, clip_norm=1.0):
        if unroll < 1:
            raise DataFormatError("unroll depth must be >= 1")
        if learning_rate <= 0 or clip_norm <= 0:
            raise DataFormatError("learning rate and clip norm must be positive")
        self.filters = list(filters)
        self.cells = list(cells)
        if len(self.cells) not in (1, len(self.filters)):
            raise DataFormatError("need one shared cell or one cell per mode")
        self.unroll = int(unroll)
        self.learning_rate = float(learning_rate)
        self.clip_norm = float(clip_norm)
        self.loss_history_ = []

    @classmethod
    def create(cls, n_modes, rank, degree=3, channels=4, hidden=16, unroll=3,
               shared_cell=False, learning_rate=1e-2, clip_norm=1.0, seed=0):
        filters = [ChebyshevFilter.passthrough(degree, channels) for _ in range(n_modes)]
        n_cells = 1 if shared_cell else n_modes
        cells = [DiffusionCell(channels * rank, hidden, rank, seed=seed + i)
                 for i in range(n_cells)]
        return cls(filters, cells, unroll, learning_rate, clip_norm)

    @property
    def n_modes(self):
        return len(self.filters)

    @property
    def shared_cell(self):
        return len(self.cells) == 1

    def cell_for(self, mode):
        return self.cells[0] if self.shared_cell else self.cells[mode]

    def named_parameters(self):
        out = []
        for m, f in enumerate(self.filters):
            out.append((f"filter_{m}.coeffs", f.coeffs))
        for i, c in enumerate(self.cells):
            for name in ("w_x", "w_h", "bias", "w_out", "b_out"):
                out.append((f"cell_{i}.{name}", getattr(c, name)))
        return out


def mode_conv(a, laplacian, filt):
    """Filtered features of one factor matrix: (N, R, channels) array with
    channel c equal to sum_j coeffs[j, c] T_j(shifted L) A."""
    a = np.asarray(a, dtype=np.float64)
    terms = chebyshev_apply(laplacian, a, filt.degree)
    stacked = np.stack(terms)  # (degree+1, N, R)
    return np.einsum("jnr,jc->nrc", stacked, filt.coeffs)


def bilinear_conv(x, lap_rows, lap_cols, theta):
    """Two-graph bilinear filter: sum_{j,j'} theta[j,j'] T_j(rows) X T_j'(cols)."""
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
        raise DataFormatError("theta must be square (degree+1, degree+1)")
    p = theta.shape[0] - 1
    row_terms = chebyshev_apply(lap_rows, x, p)
    out = np.zeros_like(x)
    for j, rj in enumerate(row_terms):
        # polynomials of a symmetric matrix are symmetric, so X T = (T X^T)^T
        col_terms = chebyshev_apply(lap_cols, rj.T, p)
        for jp in range(p + 1):
            out += theta[j, jp] * col_terms[jp].T
    return out


def _flatten_channels(features):
    n, r, c = features.shape
    return features.transpose(0, 2, 1).reshape(n, c * r)


def diffuse(a0, laplacian, model, mode=0):
    """Run the unrolled refinement on one factor matrix.

    Returns (A_T, trajectory) where trajectory lists A_0 .. A_T. Raises
    DivergenceError naming the step if an intermediate goes non-finite.
    """
    a = np.asarray(a0, dtype=np.float64).copy()
    filt = model.filters[mode]
    cell = model.cell_for(mode)
    if cell.input_size != filt.channels * a.shape[1]:
        raise DataFormatError("cell input size does not match channels * rank")
    n = a.shape[0]
    h = np.zeros((n, cell.hidden_size))
    c = np.zeros((n, cell.hidden_size))
    trajectory = [a.copy()]
    for t in range(model.unroll):
        u = _flatten_channels(mode_conv(a, laplacian, filt))
        delta, h, c = cell.step(u, h, c)
        a = a + delta
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite factor matrix at diffusion step {t}")
        trajectory.append(a.copy())
    return a, trajectory


# ---------------------------------------------------------------------------
# training: tape forward of loss(diffused factors) and plain gradient descent

def _cheb_terms_tape(lap, a, degree):
    terms = [a]
    if degree >= 1:
        terms.append(ad.sub(ad.spmm(lap, a), a))
    for _ in range(2, degree + 1):
        shifted = ad.sub(ad.spmm(lap, terms[-1]), terms[-1])
        terms.append(ad.sub(ad.cmul(2.0, shifted), terms[-2]))
    return terms


def _diffuse_tape(a0, lap, coeffs, cell_vars, hidden, unroll):
    n = a0.v.shape[0]
    h = ad.Var(np.zeros((n, hidden)))
    c = ad.Var(np.zeros((n, hidden)))
    a = a0
    degree = coeffs.v.shape[0] - 1
    for _ in range(unroll):
        u = ad.cheb_mix(_cheb_terms_tape(lap, a, degree), coeffs)
        z = ad.add(ad.add(ad.matmul(u, cell_vars["w_x"]),
                          ad.matmul(h, cell_vars["w_h"])), cell_vars["bias"])
        i = ad.sigmoid(ad.slice_cols(z, 0, hidden))
        f = ad.sigmoid(ad.slice_cols(z, hidden, 2 * hidden))
        o = ad.sigmoid(ad.slice_cols(z, 2 * hidden, 3 * hidden))
        g = ad.tanh(ad.slice_cols(z, 3 * hidden, 4 * hidden))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        delta = ad.add(ad.matmul(h, cell_vars["w_out"]), cell_vars["b_out"])
        a = ad.add(a, delta)
    return a


def _loss_tape(x, fs, graphs, lam, model, reg_weights, param_vars):
    w = _weights(reg_weights, x.order)
    diffused = []
    loss = None
    for mode in range(x.order):
        cell_idx = 0 if model.shared_cell else mode
        cell_vars = {name: param_vars[f"cell_{cell_idx}.{name}"]
                     for name in ("w_x", "w_h", "bias", "w_out", "b_out")}
        a_t = _diffuse_tape(ad.Var(fs.factors[mode]), graphs[mode].laplacian,
                            param_vars[f"filter_{mode}.coeffs"], cell_vars,
                            model.cell_for(mode).hidden_size, model.unroll)
        diffused.append(a_t)
        reg = ad.cmul(0.5 * w[mode],
                      ad.sum_all(ad.mul(a_t, ad.spmm(graphs[mode].laplacian, a_t))))
        loss = reg if loss is None else ad.add(loss, reg)

    if x.nnz:
        prod = ad.gather_rows(diffused[0], x.idx[:, 0])
        for mode in range(1, x.order):
            prod = ad.mul(prod, ad.gather_rows(diffused[mode], x.idx[:, mode]))
        pred = ad.sum_axis1(prod)
    else:
        pred = ad.Var(np.zeros(0))
    if x.observed_only:
        resid = ad.sub(pred, x.vals)
        recon = ad.sum_all(ad.mul(resid, resid))
    else:
        had = None
        for a_t in diffused:
            gram = ad.matmul(ad.transpose(a_t), a_t)
            had = gram if had is None else ad.mul(had, gram)
        cross = ad.sum_all(ad.mul(pred, x.vals))
        recon = ad.add(ad.sub(ad.sum_all(had), ad.cmul(2.0, cross)),
                       float(x.vals @ x.vals))
    return ad.add(loss, ad.cmul(float(lam), recon))


def refined_loss(x, fs, graphs, lam, model, reg_weights=None):
    """Objective value at the diffused factors (forward pass only)."""
    param_vars = {name: ad.Var(arr) for name, arr in model.named_parameters()}
    return float(_loss_tape(x, fs, graphs, lam, model, reg_weights, param_vars).v)


def loss_and_grads(x, fs, graphs, lam, model, reg_weights=None):
    """Objective value and its gradient for every refiner parameter."""
    names = [name for name, _ in model.named_parameters()]
    param_vars = {name: ad.Var(arr) for name, arr in model.named_parameters()}
    loss = _loss_tape(x, fs, graphs, lam, model, reg_weights, param_vars)
    loss.backward()
    grads = {}
    for name in names:
        v = param_vars[name]
        grads[name] = v.grad if v.grad is not None else np.zeros_like(v.v)
    return float(loss.v), grads


def train_refiner(x, fs, graphs, lam, model, epochs, reg_weights=None):
    """Fit filter and cell parameters by full-batch gradient descent through
    the unrolled diffusion, minimizing the joint objective of the diffused
    factors. Gradients are clipped at model.clip_norm; the parameters with
    the best seen loss are kept. Loss per epoch lands in model.loss_history_.
    """
    if epochs < 0:
        raise DataFormatError("epochs must be >= 0")
    if epochs == 0:
        return model
    params = dict(model.named_parameters())
    initial = None
    best_loss = np.inf
    best = None
    for epoch in range(epochs):
        loss, grads = loss_and_grads(x, fs, graphs, lam, model, reg_weights)
        model.loss_history_.append(loss)
        if initial is None:
            initial = loss
        if not np.isfinite(loss) or loss > 1e6 * max(initial, 1e-300):
            raise DivergenceError(
                f"refiner diverged at epoch {epoch}: loss {loss:.3e} vs initial {initial:.3e}"
            )
        if loss < best_loss:
            best_loss = loss
            best = {name: arr.copy() for name, arr in params.items()}
        gnorm = np.sqrt(sum(float(g.ravel() @ g.ravel()) for g in grads.values()))
        scale = model.clip_norm / gnorm if gnorm > model.clip_norm else 1.0
        for name, arr in params.items():
            arr -= model.learning_rate * scale * grads[name]
    final = refined_loss(x, fs, graphs, lam, model, reg_weights)
    model.loss_history_.append(final)
    if final < best_loss:
        best_loss = final
    elif best is not None:
        for name, arr in params.items():
            arr[...] = best[name]
    return model


def refiner_gradient_check(x, fs, graphs, lam, model, step=1e-6, reg_weights=None):
    """Max parameter-gradient error against central differences, relative to
    the gradient scale."""
    _, grads = loss_and_grads(x, fs, graphs, lam, model, reg_weights)
    params = dict(model.named_parameters())
    worst = 0.0
    scale = max(max(np.abs(g).max() for g in grads.values()), 1e-12)
    for name, arr in params.items():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            hi = refined_loss(x, fs, graphs, lam, model, reg_weights)
            flat[k] = orig - step
            lo = refined_loss(x, fs, graphs, lam, model, reg_weights)
            flat[k] = orig
            fd = (hi - lo) / (2.0 * step)
            worst = max(worst, abs(fd - g[k]) / scale)
    return worst


def save_refiner(model, path):
    """Checkpoint every parameter tensor as a TSV block with a shape header."""
    with open(path, "w") as fh:
        fh.write(f"#refiner modes {model.n_modes} cells {len(model.cells)} "
                 f"unroll {model.unroll} lr {model.learning_rate!r} "
                 f"clip {model.clip_norm!r}\n")
        for name, arr in model.named_parameters():
            shape = " ".join(str(s) for s in arr.shape)
            fh.write(f"#param {name} {shape}\n")
            mat = arr.reshape(1, -1) if arr.ndim == 1 else arr
            for row in mat:
                fh.write("\t".join(repr(float(v)) for v in row) + "\n")


def load_refiner(path):
    with open(path) as fh:
        header = fh.readline().split()
        if not header or header[0] != "#refiner":
            raise DataFormatError(f"{path}: missing #refiner header")
        meta = dict(zip(header[1::2], header[2::2]))
        try:
            n_modes, n_cells = int(meta["modes"]), int(meta["cells"])
            unroll, lr, clip = int(meta["unroll"]), float(meta["lr"]), float(meta["clip"])
        except (KeyError, ValueError) as exc:
            raise DataFormatError(f"{path}: bad refiner header: {exc}") from exc
        params = {}
        line = fh.readline()
        while line.strip():
            head = line.split()
            if head[0] != "#param":
                raise DataFormatError(f"{path}: expected #param header, got {line!r}")
            name = head[1]
            shape = tuple(int(s) for s in head[2:])
            rows = shape[0] if len(shape) == 2 else 1
            data = [[float(f) for f in fh.readline().split("\t")] for _ in range(rows)]
            params[name] = np.asarray(data, dtype=np.float64).reshape(shape)
            line = fh.readline()
    try:
        filters = [ChebyshevFilter(params[f"filter_{m}.coeffs"]) for m in range(n_modes)]
        cells = []
        for i in range(n_cells):
            w_x = params[f"cell_{i}.w_x"]
            hidden = w_x.shape[1] // 4
            rank = params[f"cell_{i}.w_out"].shape[1]
            cell = DiffusionCell(w_x.shape[0], hidden, rank)
            for pname in ("w_x", "w_h", "bias", "w_out", "b_out"):
                getattr(cell, pname)[...] = params[f"cell_{i}.{pname}"]
            cells.append(cell)
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing parameter block {exc}") from exc
    return DiffusionRefiner(filters, cells, unroll, lr, clip)
