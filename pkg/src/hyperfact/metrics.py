"""Evaluation metrics: RMSE, Average Precision, attribution accuracy."""

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .sptensor import reconstruct_at
from .validation import as_index_array, check_mode


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    support: int
    fingerprint: str = ""

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise DataFormatError(f"non-finite metric value for {self.name}")
        if self.support < 1:
            raise DataFormatError("metric support must be >= 1")

    def csv_row(self):
        return f"{self.name},{self.value!r},{self.support},{self.fingerprint}"


def rmse(predictions):
    """Root mean squared error over (index, predicted, actual) triples."""
    rows = list(predictions)
    if not rows:
        raise DataFormatError("rmse needs at least one prediction")
    err = np.array([float(p) - float(a) for _, p, a in rows])
    return float(np.sqrt(np.mean(err * err)))


def average_precision(scores, labels):
    """Mean of precision-at-k over the positions k of positive items, after
    sorting by descending score (ties: ascending item id)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if scores.shape != labels.shape:
        raise DataFormatError("scores and labels must have equal length")
    if not labels.any():
        raise DataFormatError("average precision needs at least one positive label")
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = labels[order]
    ranks = np.arange(1, len(scores) + 1)
    precision_at = np.cumsum(hits) / ranks
    return float(precision_at[hits].mean())


def attribution_accuracy(test_idx, factors, target_mode):
    """Fraction of held-out tuples whose target-mode index is the argmax of
    the reconstruction over all candidate completions (ties: lowest index)."""
    mats = factors.factors if hasattr(factors, "factors") else list(factors)
    idx = as_index_array(test_idx, order=len(mats))
    target_mode = check_mode(target_mode, len(mats))
    if len(idx) == 0:
        raise DataFormatError("attribution needs at least one test tuple")
    prod = None
    for mode, a in enumerate(mats):
        if mode == target_mode:
            continue
        g = a[idx[:, mode]]
        prod = g.copy() if prod is None else prod * g
    scores = prod @ mats[target_mode].T  # (n_test, N_target)
    predicted = np.argmax(scores, axis=1)  # first max wins ties
    return float(np.mean(predicted == idx[:, target_mode]))


def predict_entries(factors, idx):
    """Reconstruction values at the given index tuples."""
    return reconstruct_at(factors, as_index_array(idx))
