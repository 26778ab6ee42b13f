"""Input validation helpers used by the public entry points."""

import numpy as np

from .errors import DataFormatError


def as_index_array(idx, order=None):
    """Coerce index tuples to a 2-d int64 array of shape (n_entries, order).

    Accepts a single K-tuple, a list of K-tuples, or an (n, K) array.
    """
    arr = np.asarray(idx)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DataFormatError(f"index array must be 2-d, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise DataFormatError("indices must be integers")
    arr = arr.astype(np.int64, copy=False)
    if order is not None and arr.shape[1] != order:
        raise DataFormatError(f"expected {order}-mode indices, got {arr.shape[1]}")
    return arr


def check_bounds(idx, dims):
    """Raise if any index tuple falls outside [0, N_mode) for its mode."""
    dims = np.asarray(dims, dtype=np.int64)
    if idx.size == 0:
        return
    if idx.min() < 0 or np.any(idx >= dims[None, :]):
        bad = np.where((idx < 0) | (idx >= dims[None, :]))[0][0]
        raise DataFormatError(f"index {tuple(idx[bad])} out of bounds for dims {tuple(dims)}")


def as_float_matrix(x, name="matrix"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DataFormatError(f"{name} must be 2-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataFormatError(f"{name} contains non-finite values")
    return arr


def check_mode(mode, order):
    if not 0 <= mode < order:
        raise DataFormatError(f"mode {mode} out of range for order {order}")
    return int(mode)
