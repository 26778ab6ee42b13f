"""Factor-matrix algebra behind the per-mode updates: Khatri-Rao products,
the Gram-Hadamard shortcut, and sparse MTTKRP."""

import numpy as np

from .errors import DataFormatError
from .validation import check_mode

# khatri_rao materializes prod(N_mode) rows; anything real-sized must go
# through mttkrp instead.
KHATRI_RAO_ROW_CAP = 10**6


class FactorSet:
    """The K factor matrices of a rank-R decomposition.

    factors[mode] has shape (N_mode, R); row i is the latent representation
    of item i in that modality.
    """

    def __init__(self, factors, seed=None):
        factors = [np.asarray(a, dtype=np.float64) for a in factors]
        if not factors:
            raise DataFormatError("need at least one factor matrix")
        if any(a.ndim != 2 for a in factors):
            raise DataFormatError("factors must be 2-d matrices")
        rank = factors[0].shape[1]
        if any(a.shape[1] != rank for a in factors):
            raise DataFormatError("all factors must share the same rank")
        if any(not np.all(np.isfinite(a)) for a in factors):
            raise DataFormatError("factors must be finite")
        self.factors = factors
        self.rank = rank
        self.seed = seed

    @property
    def order(self):
        return len(self.factors)

    @property
    def dims(self):
        return tuple(a.shape[0] for a in self.factors)

    def copy(self):
        return FactorSet([a.copy() for a in self.factors], seed=self.seed)

    def __repr__(self):
        return f"FactorSet(dims={self.dims}, rank={self.rank})"


def init_factors(dims, rank, seed):
    """Fresh factors with entries i.i.d. uniform on [0, 1/sqrt(R)).

    The scale keeps initial reconstructions O(1) regardless of rank, and the
    non-negative support avoids sign-flip churn in the first sweeps.
    """
    if rank < 1:
        raise DataFormatError("rank must be >= 1")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(rank)
    return FactorSet([rng.uniform(0.0, scale, size=(n, rank)) for n in dims], seed=seed)


def khatri_rao(mats, row_cap=KHATRI_RAO_ROW_CAP):
    """Column-wise Kronecker product in ascending mode order.

    Row (i_1, .., i_m) lands at the ascending-stride position, matching
    unfold_column_index. Only for oracle-scale inputs; guarded by row_cap.
    """
    mats = [np.asarray(a, dtype=np.float64) for a in mats]
    if not mats:
        raise DataFormatError("khatri_rao needs at least one matrix")
    rank = mats[0].shape[1]
    if any(a.shape[1] != rank for a in mats):
        raise DataFormatError("khatri_rao inputs must share the column count")
    total_rows = 1
    for a in mats:
        total_rows *= a.shape[0]
    if total_rows > row_cap:
        raise DataFormatError(
            f"khatri_rao would materialize {total_rows} rows (cap {row_cap}); use mttkrp"
        )
    out = mats[0]
    for a in mats[1:]:
        out = (out[:, None, :] * a[None, :, :]).reshape(-1, rank)
    return out


def gram_hadamard(fs, skip):
    """Hadamard product over modes != skip of A_mode^T A_mode.

    Equals Omega^T Omega for the Khatri-Rao product Omega of the other
    factors, at R x R cost instead of prod(N) x R.
    """
    skip = check_mode(skip, fs.order)
    out = np.ones((fs.rank, fs.rank))
    for mode, a in enumerate(fs.factors):
        if mode != skip:
            out *= a.T @ a
    return out


def mttkrp(x, fs, mode, values=None):
    """Matricized-tensor-times-Khatri-Rao-product over stored entries only.

    out[i, r] = sum over entries with idx[mode] == i of
    value * prod_{k != mode} A_k[idx_k, r]. ``values`` overrides the stored
    entry values (same order), which lets callers reuse the tensor's cached
    scatter structure for residual tensors.
    """
    mode = check_mode(mode, x.order)
    if fs.order != x.order:
        raise DataFormatError(f"{fs.order} factors for order-{x.order} tensor")
    if fs.dims != x.dims:
        raise DataFormatError(f"factor dims {fs.dims} do not match tensor dims {x.dims}")
    vals = x.vals if values is None else np.asarray(values, dtype=np.float64)
    if len(vals) != x.nnz:
        raise DataFormatError("values override must match entry count")
    if x.nnz == 0:
        return np.zeros((x.dims[mode], fs.rank))
    rest = [k for k in range(x.order) if k != mode]
    table = fs.factors[rest[0]][x.idx[:, rest[0]]] * vals[:, None]
    for k in rest[1:]:
        table *= fs.factors[k][x.idx[:, k]]
    return x.scatter_matrix(mode) @ table


def save_factors(fs, path):
    """Checkpoint as TSV blocks: `#factors K R`, then per-mode row blocks."""
    with open(path, "w") as fh:
        fh.write(f"#factors {fs.order} {fs.rank}\n")
        for mode, a in enumerate(fs.factors):
            fh.write(f"#mode {mode} {a.shape[0]}\n")
            for row in a:
                fh.write("\t".join(repr(float(v)) for v in row) + "\n")


def load_factors(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "#factors":
            raise DataFormatError(f"{path}: missing #factors header")
        order, rank = int(header[1]), int(header[2])
        factors = []
        for mode in range(order):
            head = fh.readline().split()
            if len(head) != 3 or head[0] != "#mode" or int(head[1]) != mode:
                raise DataFormatError(f"{path}: bad block header for mode {mode}")
            n = int(head[2])
            block = np.empty((n, rank))
            for i in range(n):
                fields = fh.readline().split("\t")
                if len(fields) != rank:
                    raise DataFormatError(f"{path}: mode {mode} row {i} has {len(fields)} values")
                block[i] = [float(f) for f in fields]
            factors.append(block)
    return FactorSet(factors)
