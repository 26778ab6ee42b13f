"""Sparse K-mode relation tensors in coordinate form.

A tensor stores only its observed cells. With ``observed_only=True`` the
squared reconstruction error is evaluated at stored cells alone; with
``observed_only=False`` unstored cells count as zeros and the full
Frobenius error is computed through a Gram expansion, never densifying.
"""

import numpy as np
import scipy.sparse as sp

from .errors import DataFormatError
from .validation import as_index_array, check_bounds, check_mode


class SparseTensor:
    """K-mode COO tensor of observed relation tuples.

    Parameters
    ==========
    dims : sequence of K positive ints
        Size of each mode.
    idx : (n_entries, K) int array
        0-based index tuples, one row per stored cell. Duplicates are a
        load-time error.
    vals : (n_entries,) float array
        Cell values. Binary relation tuples and real ratings share this
        representation.
    observed_only : bool
        Whether error evaluation is restricted to stored cells.
    """

    def __init__(self, dims, idx, vals, observed_only=True):
        dims = tuple(int(n) for n in dims)
        if len(dims) < 2:
            raise DataFormatError(f"tensor order must be >= 2, got {len(dims)}")
        if any(n <= 0 for n in dims):
            raise DataFormatError(f"dims must be positive, got {dims}")
        idx = as_index_array(idx, order=len(dims))
        vals = np.asarray(vals, dtype=np.float64).reshape(-1)
        if len(vals) != len(idx):
            raise DataFormatError(f"{len(idx)} index tuples but {len(vals)} values")
        if not np.all(np.isfinite(vals)):
            raise DataFormatError("tensor values must be finite")
        check_bounds(idx, dims)
        if len(idx) > int(np.prod([float(n) for n in dims])):
            raise DataFormatError("more entries than cells")
        if len(idx) and len(np.unique(idx, axis=0)) != len(idx):
            raise DataFormatError("duplicate index tuples in tensor entries")

        self.dims = dims
        self.idx = idx
        self.vals = vals
        self.observed_only = bool(observed_only)
        self.idx.setflags(write=False)
        self.vals.setflags(write=False)
        self._scatter_cache = {}

    @property
    def order(self):
        return len(self.dims)

    @property
    def nnz(self):
        return len(self.vals)

    def scatter_matrix(self, mode):
        """CSR matrix S of shape (N_mode, nnz) with S[idx[e, mode], e] = 1.

        ``S @ T`` sums the rows of an (nnz, R) table into their mode-`mode`
        slots; cached because it only depends on the immutable index set.
        """
        mode = check_mode(mode, self.order)
        if mode not in self._scatter_cache:
            e = np.arange(self.nnz)
            self._scatter_cache[mode] = sp.csr_matrix(
                (np.ones(self.nnz), (self.idx[:, mode], e)),
                shape=(self.dims[mode], self.nnz),
            )
        return self._scatter_cache[mode]

    def __repr__(self):
        kind = "observed" if self.observed_only else "full"
        return f"SparseTensor(dims={self.dims}, nnz={self.nnz}, {kind})"


def unfold_column_index(dims, mode, idx):
    """Column of entry ``idx`` in the mode-`mode` matricization.

    Non-mode indices are flattened in ascending mode order, so the first
    remaining mode varies slowest: col = sum_k idx[k] * prod_{m>k} N_m over
    the non-mode modes. Accepts a single tuple or an (n, K) array.
    """
    dims = tuple(int(n) for n in dims)
    mode = check_mode(mode, len(dims))
    arr = as_index_array(idx, order=len(dims))
    check_bounds(arr, dims)
    rest = [k for k in range(len(dims)) if k != mode]
    col = np.zeros(len(arr), dtype=np.int64)
    stride = 1
    for k in reversed(rest):
        col += arr[:, k] * stride
        stride *= dims[k]
    if np.ndim(idx) == 1 or isinstance(idx, tuple):
        return int(col[0])
    return col


def _factor_list(factors):
    if hasattr(factors, "factors"):
        return factors.factors
    return list(factors)


def reconstruct_at(factors, idx):
    """Rank-R reconstruction sum_r prod_mode A_mode[idx_mode, r] at idx.

    ``factors`` is a FactorSet or a plain list of (N_mode, R) matrices.
    Accepts a single K-tuple (returns a float) or an (n, K) array.
    """
    mats = _factor_list(factors)
    arr = as_index_array(idx, order=len(mats))
    for mode, a in enumerate(mats):
        if arr.size and (arr[:, mode].min() < 0 or arr[:, mode].max() >= a.shape[0]):
            raise DataFormatError(f"index out of bounds for mode {mode}")
    prod = mats[0][arr[:, 0]].copy()
    for mode in range(1, len(mats)):
        prod *= mats[mode][arr[:, mode]]
    out = prod.sum(axis=1)
    if np.ndim(idx) == 1 or isinstance(idx, tuple):
        return float(out[0])
    return out


def masked_sq_error(x, factors):
    """Squared reconstruction error of ``factors`` against tensor ``x``.

    Stored-cell sum of (value - reconstruction)^2 when x.observed_only,
    otherwise the full Frobenius error with implicit zeros, obtained from
    ||X_hat||^2 - 2<X, X_hat> + ||X||^2 where ||X_hat||^2 collapses to the
    all-mode Hadamard product of the factor Gram matrices.
    """
    mats = _factor_list(factors)
    if len(mats) != x.order:
        raise DataFormatError(f"{len(mats)} factors for order-{x.order} tensor")
    for mode, a in enumerate(mats):
        if a.shape[0] != x.dims[mode]:
            raise DataFormatError(
                f"factor {mode} has {a.shape[0]} rows, tensor dim is {x.dims[mode]}"
            )
    recon = reconstruct_at(mats, x.idx) if x.nnz else np.zeros(0)
    if x.observed_only:
        r = recon - x.vals
        return float(r @ r)
    gram = np.ones((mats[0].shape[1], mats[0].shape[1]))
    for a in mats:
        gram *= a.T @ a
    return float(gram.sum() - 2.0 * (x.vals @ recon) + x.vals @ x.vals)


def save_relation_file(x, path):
    """Write entries as TSV with a `#dims N_1 .. N_K observed|full` header."""
    kind = "observed" if x.observed_only else "full"
    with open(path, "w") as fh:
        fh.write("#dims " + " ".join(str(n) for n in x.dims) + f" {kind}\n")
        for row, v in zip(x.idx, x.vals):
            fh.write("\t".join(str(int(i)) for i in row) + f"\t{float(v)!r}\n")


def load_relation_file(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#dims "):
            raise DataFormatError(f"{path}: missing #dims header")
        parts = header.split()
        if parts[-1] not in ("observed", "full"):
            raise DataFormatError(f"{path}: header must end with 'observed' or 'full'")
        observed_only = parts[-1] == "observed"
        try:
            dims = [int(p) for p in parts[1:-1]]
        except ValueError as exc:
            raise DataFormatError(f"{path}: bad dims in header: {exc}") from exc
        idx, vals = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != len(dims) + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(dims) + 1} fields, got {len(fields)}"
                )
            try:
                idx.append([int(f) for f in fields[:-1]])
                vals.append(float(fields[-1]))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    idx = np.array(idx, dtype=np.int64).reshape(len(vals), len(dims))
    return SparseTensor(dims, idx, np.array(vals), observed_only=observed_only)
