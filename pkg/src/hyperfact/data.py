"""Dataset ingestion and synthesis.

Real corpora arrive as relation/graph TSV files or MovieLens-100k
``u.data``; synthetic hypergraphs are planted from known factors so that
recovery and attribution experiments have ground truth.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .factors import FactorSet
from .graphs import IntraGraph, knn_graph, load_graph_file, save_graph_file
from .sptensor import SparseTensor, load_relation_file, reconstruct_at, save_relation_file


@dataclass
class Dataset:
    """A training tensor, held-out entries, and one graph per mode."""

    tensor: SparseTensor
    test_idx: np.ndarray  # (n_test, K) int, may be empty
    test_vals: np.ndarray
    graphs: list
    names: list

    def __post_init__(self):
        k = self.tensor.order
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64).reshape(-1, k)
        self.test_vals = np.asarray(self.test_vals, dtype=np.float64).reshape(-1)
        if len(self.test_idx) != len(self.test_vals):
            raise DataFormatError("test index/value length mismatch")
        if len(self.graphs) != k:
            raise DataFormatError(f"need {k} graphs, got {len(self.graphs)}")
        for mode, g in enumerate(self.graphs):
            if g.n != self.tensor.dims[mode]:
                raise DataFormatError(
                    f"graph {mode} has {g.n} nodes, tensor dim is {self.tensor.dims[mode]}"
                )
        if len(self.names) != k:
            raise DataFormatError("need one name per mode")
        if len(self.test_idx):
            train = {tuple(row) for row in self.tensor.idx}
            if any(tuple(row) in train for row in self.test_idx):
                raise DataFormatError("train and test entries overlap")


@dataclass(frozen=True)
class SynthSpec:
    """Planted-factor synthetic hypergraph description."""

    dims: tuple
    rank: int
    noise_std: float = 0.0
    density: float = 1.0
    graph_k: int = 10
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) < 2 or any(n < 2 for n in self.dims):
            raise DataFormatError("dims must be >= 2 entries of size >= 2")
        if self.rank < 1:
            raise DataFormatError("rank must be >= 1")
        if not 0.0 < self.density <= 1.0:
            raise DataFormatError("density must be in (0, 1]")
        if self.noise_std < 0:
            raise DataFormatError("noise_std must be >= 0")
        if self.graph_k < 1:
            raise DataFormatError("graph_k must be >= 1")


def _sample_cells(rng, dims, count):
    total = int(np.prod([float(n) for n in dims]))
    if total <= 10**7:
        flat = rng.choice(total, size=count, replace=False)
    else:
        # rejection sampling; collisions are rare at these densities
        seen = set()
        flat = []
        while len(flat) < count:
            draw = rng.integers(0, total, size=count - len(flat))
            for v in draw.tolist():
                if v not in seen:
                    seen.add(v)
                    flat.append(v)
        flat = np.asarray(flat[:count])
    flat = np.sort(flat)
    return np.stack(np.unravel_index(flat, dims), axis=1)


def generate_synthetic(spec):
    """Plant uniform factors, observe a density fraction of cells with
    Gaussian noise, and build kNN graphs over the true factor rows.

    Returns (Dataset with empty test split, ground-truth FactorSet). Every
    index of every mode must occur in the observed entries; too-sparse draws
    are rejected so that no factor row is unconstrained.
    """
    rng = np.random.default_rng(spec.seed)
    truth = FactorSet([rng.uniform(size=(n, spec.rank)) for n in spec.dims],
                      seed=spec.seed)
    total = int(np.prod([float(n) for n in spec.dims]))
    count = max(1, int(round(spec.density * total)))
    idx = _sample_cells(rng, spec.dims, count)
    for mode, n in enumerate(spec.dims):
        present = np.unique(idx[:, mode])
        if len(present) < n:
            raise DataFormatError(
                f"density {spec.density} left some mode-{mode} index unobserved; "
                "increase density or shrink dims"
            )
    vals = reconstruct_at(truth, idx)
    if spec.noise_std > 0:
        vals = vals + rng.normal(scale=spec.noise_std, size=count)
    tensor = SparseTensor(spec.dims, idx, vals, observed_only=True)
    k = [min(spec.graph_k, n - 1) for n in spec.dims]
    graphs = [knn_graph(truth.factors[m], k=k[m]) for m in range(len(spec.dims))]
    names = [f"mode{m}" for m in range(len(spec.dims))]
    ds = Dataset(tensor, np.zeros((0, len(spec.dims)), dtype=np.int64),
                 np.zeros(0), graphs, names)
    return ds, truth


def holdout_split(dataset, fraction, seed):
    """Move a random fraction of training entries into the test split."""
    if not 0.0 <= fraction < 1.0:
        raise DataFormatError("holdout fraction must be in [0, 1)")
    x = dataset.tensor
    rng = np.random.default_rng(seed)
    n_test = int(round(fraction * x.nnz))
    perm = rng.permutation(x.nnz)
    test, train = perm[:n_test], perm[n_test:]
    tensor = SparseTensor(x.dims, x.idx[train], x.vals[train],
                          observed_only=x.observed_only)
    test_idx = np.concatenate([dataset.test_idx, x.idx[test]])
    test_vals = np.concatenate([dataset.test_vals, x.vals[test]])
    return Dataset(tensor, test_idx, test_vals, dataset.graphs, dataset.names)


def _center_and_normalize(rows):
    feats = rows - rows.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    return feats / np.where(norms > 0, norms, 1.0)


def load_movielens(path, split_fraction=0.2, seed=0, k=10):
    """Load a MovieLens-100k ``u.data`` file (user, item, rating, timestamp;
    tab-separated, 1-based ids) into a 2-mode observed-only dataset.

    Splits ratings into train/test by seed, then builds unweighted k-nearest
    neighbor graphs over the mean-centered train rating vectors (cosine
    ranking via unit-normalized rows) for users and items.
    """
    users, items, ratings = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}"
                )
            try:
                u, m, r = int(fields[0]), int(fields[1]), float(fields[2])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if u < 1 or m < 1:
                raise DataFormatError(f"{path}:{lineno}: ids are 1-based, got {u}, {m}")
            users.append(u - 1)
            items.append(m - 1)
            ratings.append(r)
    if not users:
        raise DataFormatError(f"{path}: no ratings found")
    if not 0.0 < split_fraction <= 1.0:
        raise DataFormatError("split_fraction must be in (0, 1]")
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    ratings = np.asarray(ratings, dtype=np.float64)
    dims = (int(users.max()) + 1, int(items.max()) + 1)
    idx = np.stack([users, items], axis=1)
    if len(np.unique(idx, axis=0)) != len(idx):
        raise DataFormatError(f"{path}: duplicate (user, item) ratings")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ratings))
    n_train = int(round(split_fraction * len(ratings)))
    train, test = perm[:n_train], perm[n_train:]
    tensor = SparseTensor(dims, idx[train], ratings[train], observed_only=True)

    dense = np.zeros(dims)
    dense[idx[train, 0], idx[train, 1]] = ratings[train]
    user_graph = knn_graph(_center_and_normalize(dense), k=k)
    item_graph = knn_graph(_center_and_normalize(dense.T), k=k)
    return Dataset(tensor, idx[test], ratings[test], [user_graph, item_graph],
                   ["user", "item"])


def save_dataset(dataset, out_dir, manifest_name="manifest.txt"):
    """Write tensor, graphs, optional test entries, and the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    tensor_path = os.path.join(out_dir, "tensor.tsv")
    save_relation_file(dataset.tensor, tensor_path)
    lines = ["tensor=tensor.tsv"]
    for mode, g in enumerate(dataset.graphs):
        fname = f"graph_{mode}.tsv"
        save_graph_file(g, os.path.join(out_dir, fname))
        lines.append(f"graph_{mode}={fname}")
        lines.append(f"name_{mode}={dataset.names[mode]}")
    if len(dataset.test_idx):
        test = SparseTensor(dataset.tensor.dims, dataset.test_idx, dataset.test_vals,
                            observed_only=True)
        save_relation_file(test, os.path.join(out_dir, "test.tsv"))
        lines.append("test=test.tsv")
    manifest = os.path.join(out_dir, manifest_name)
    with open(manifest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def parse_keyvalue_file(path):
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def load_manifest(path):
    """Read a dataset manifest (key=value; paths relative to the manifest)."""
    kv = parse_keyvalue_file(path)
    base = os.path.dirname(os.path.abspath(path))
    if "tensor" not in kv:
        raise DataFormatError(f"{path}: manifest must name a tensor file")
    tensor = load_relation_file(os.path.join(base, kv["tensor"]))
    graphs, names = [], []
    for mode in range(tensor.order):
        key = f"graph_{mode}"
        if key not in kv:
            raise DataFormatError(f"{path}: missing {key}")
        graphs.append(load_graph_file(os.path.join(base, kv[key])))
        names.append(kv.get(f"name_{mode}", f"mode{mode}"))
    if "test" in kv:
        test = load_relation_file(os.path.join(base, kv["test"]))
        if test.dims != tensor.dims:
            raise DataFormatError(f"{path}: test dims {test.dims} != tensor dims")
        test_idx, test_vals = test.idx, test.vals
    else:
        test_idx = np.zeros((0, tensor.order), dtype=np.int64)
        test_vals = np.zeros(0)
    return Dataset(tensor, test_idx, test_vals, graphs, names)
