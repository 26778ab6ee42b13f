"""Per-modality similarity graphs, their normalized Laplacians, and
Chebyshev polynomial filtering on them."""

import numpy as np
import scipy.sparse as sp

from .errors import DataFormatError
from .validation import as_float_matrix


class IntraGraph:
    """Undirected similarity graph over the items of one modality.

    Parameters
    ==========
    n : int
        Node count.
    adjacency : sparse or dense (n, n) matrix
        Symmetric, non-negative weights, zero diagonal.
    """

    def __init__(self, n, adjacency):
        n = int(n)
        adj = sp.csr_matrix(adjacency, shape=(n, n), dtype=np.float64)
        adj.eliminate_zeros()
        if (abs(adj - adj.T) > 1e-12 * max(1.0, abs(adj).max() if adj.nnz else 1.0)).nnz:
            raise DataFormatError("adjacency must be symmetric")
        if adj.diagonal().any():
            raise DataFormatError("adjacency must have a zero diagonal")
        if adj.nnz and adj.data.min() < 0:
            raise DataFormatError("adjacency weights must be non-negative")
        self.n = n
        self.adjacency = adj
        self.degrees = np.asarray(adj.sum(axis=1)).reshape(-1)
        self._laplacian = None

    @property
    def laplacian(self):
        if self._laplacian is None:
            self._laplacian = normalized_laplacian(self)
        return self._laplacian

    @property
    def n_edges(self):
        return self.adjacency.nnz // 2

    def edge_set(self):
        coo = self.adjacency.tocoo()
        return {(int(i), int(j)) for i, j in zip(coo.row, coo.col) if i < j}

    def __repr__(self):
        return f"IntraGraph(n={self.n}, edges={self.n_edges})"


def graph_from_edges(n, edges, weights=None):
    """Build an IntraGraph from undirected edge pairs (each listed once)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise DataFormatError(f"edge endpoint out of range for n={n}")
    if np.any(edges[:, 0] == edges[:, 1]):
        raise DataFormatError("self-loops are not allowed")
    w = np.ones(len(edges)) if weights is None else np.asarray(weights, dtype=np.float64)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))
    return IntraGraph(n, adj)


def knn_graph(features, k):
    """Unweighted symmetrized k-nearest-neighbor graph in Euclidean distance.

    i~j iff j is among i's k nearest neighbors or vice versa. Distance ties
    are broken toward the lower node index; self edges are excluded.
    """
    feats = as_float_matrix(features, "features")
    n = feats.shape[0]
    if k < 1:
        raise DataFormatError("k must be >= 1")
    if k >= n:
        raise DataFormatError(f"k={k} requires at least k+1={k + 1} points, got {n}")
    sq = (feats * feats).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (feats @ feats.T)
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps the lower index first among equal distances
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    cols = order.reshape(-1)
    adj = sp.csr_matrix((np.ones(n * k), (rows, cols)), shape=(n, n))
    adj = adj.maximum(adj.T)  # union of neighborhoods
    adj.data[:] = 1.0
    return IntraGraph(n, adj)


def cooccurrence_graph(memberships, n):
    """Unweighted graph linking nodes that share at least one group.

    ``memberships`` is an iterable of (node, group) pairs. No transitive
    closure: nodes in disjoint groups stay unconnected.
    """
    groups = {}
    for node, group in memberships:
        node = int(node)
        if not 0 <= node < n:
            raise DataFormatError(f"node id {node} out of range for n={n}")
        groups.setdefault(group, set()).add(node)
    pairs = set()
    for members in groups.values():
        ordered = sorted(members)
        for a_pos, a in enumerate(ordered):
            for b in ordered[a_pos + 1:]:
                pairs.add((a, b))
    if not pairs:
        return IntraGraph(n, sp.csr_matrix((n, n)))
    return graph_from_edges(n, sorted(pairs))


def normalized_laplacian(g):
    """L = I - D^{-1/2} Adj D^{-1/2}; rows/columns of isolated nodes are zero.

    Eigenvalues lie in [0, 2], which the Chebyshev rescaling below relies on.
    """
    adj = g.adjacency
    if (abs(adj - adj.T) > 0).nnz:
        raise DataFormatError("adjacency must be symmetric")
    d = g.degrees
    with np.errstate(divide="ignore"):
        dinv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    scaled = sp.diags(dinv) @ adj @ sp.diags(dinv)
    eye = sp.diags((d > 0).astype(np.float64))
    lap = (eye - scaled).tocsr()
    lap.eliminate_zeros()
    return lap


def chebyshev_apply(lap, x, p):
    """Chebyshev basis [T_0(Ls) X, .., T_p(Ls) X] for Ls = L - I.

    The shift centers the normalized Laplacian's [0, 2] spectrum on [-1, 1];
    the recurrence T_j = 2 Ls T_{j-1} - T_{j-2} avoids any eigendecomposition.
    Returns a list of p + 1 arrays shaped like x.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if p < 0:
        raise DataFormatError("polynomial degree must be >= 0")
    if lap.shape[0] != lap.shape[1] or lap.shape[1] != x.shape[0]:
        raise DataFormatError(f"laplacian {lap.shape} does not match signal {x.shape}")
    out = [x]
    if p >= 1:
        out.append(lap @ x - x)
    for _ in range(2, p + 1):
        out.append(2.0 * (lap @ out[-1] - out[-1]) - out[-2])
    if squeeze:
        out = [t[:, 0] for t in out]
    return out


def save_graph_file(g, path):
    """Write the edge list as TSV with a `#nodes n` header (each edge once)."""
    coo = sp.triu(g.adjacency, k=1).tocoo()
    with open(path, "w") as fh:
        fh.write(f"#nodes {g.n}\n")
        for i, j, w in zip(coo.row, coo.col, coo.data):
            if w == 1.0:
                fh.write(f"{i}\t{j}\n")
            else:
                fh.write(f"{i}\t{j}\t{float(w)!r}\n")


def load_graph_file(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#nodes "):
            raise DataFormatError(f"{path}: missing #nodes header")
        try:
            n = int(header.split()[1])
        except (IndexError, ValueError) as exc:
            raise DataFormatError(f"{path}: bad node count: {exc}") from exc
        edges, weights = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise DataFormatError(f"{path}:{lineno}: expected 2 or 3 fields")
            try:
                edges.append((int(fields[0]), int(fields[1])))
                weights.append(float(fields[2]) if len(fields) == 3 else 1.0)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    if not edges:
        return IntraGraph(n, sp.csr_matrix((n, n)))
    return graph_from_edges(n, edges, weights)


def load_feature_file(path):
    """One node per row, d tab-separated real columns."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(f) for f in line.split("\t")])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise DataFormatError(f"{path}: empty feature file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataFormatError(f"{path}: ragged feature rows")
    return np.asarray(rows, dtype=np.float64)
