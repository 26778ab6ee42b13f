import numpy as np
import pytest

from hyperfact.errors import DataFormatError
from hyperfact.factors import FactorSet, init_factors
from hyperfact.metrics import (
    MetricReport,
    attribution_accuracy,
    average_precision,
    predict_entries,
    rmse,
)


class TestRmse:
    def test_perfect_predictions(self):
        assert rmse([((0, 0), 3.0, 3.0), ((0, 1), 1.5, 1.5)]) == 0.0

    def test_constant_error(self):
        assert rmse([((0, 0), 5.0, 3.0), ((1, 1), 4.0, 2.0)]) == 2.0

    def test_hand_example(self):
        assert rmse([((0, 0), 3.0, 1.0), ((0, 1), 1.0, 3.0)]) == 2.0

    def test_empty_rejected(self):
        with pytest.raises(DataFormatError):
            rmse([])


class TestAveragePrecision:
    def test_all_positives_first(self):
        assert average_precision([5.0, 4.0, 1.0, 0.5], [1, 1, 0, 0]) == 1.0

    def test_single_positive_second(self):
        assert average_precision([2.0, 1.0], [0, 1]) == 0.5

    def test_hand_rank_walk(self):
        assert average_precision([3.0, 2.0, 1.0], [1, 0, 1]) == pytest.approx(5.0 / 6.0)

    def test_ties_broken_by_item_id(self):
        # equal scores: item 0 (negative) precedes item 1 (positive)
        assert average_precision([1.0, 1.0], [0, 1]) == 0.5
        assert average_precision([1.0, 1.0], [1, 0]) == 1.0

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(0)
        scores = rng.normal(size=30)
        labels = rng.random(30) < 0.3
        labels[0] = True
        base = average_precision(scores, labels)
        assert average_precision(3.0 * scores + 7.0, labels) == pytest.approx(base)
        assert average_precision(np.exp(scores), labels) == pytest.approx(base)

    def test_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            scores = rng.normal(size=10)
            labels = rng.random(10) < 0.5
            if not labels.any():
                labels[3] = True
            assert 0.0 <= average_precision(scores, labels) <= 1.0

    def test_no_positives_rejected(self):
        with pytest.raises(DataFormatError):
            average_precision([1.0, 2.0], [0, 0])


class TestAttributionAccuracy:
    def test_planted_separable_case(self):
        # target-mode rows one-hot per class; other modes match the class
        n_class = 4
        target = np.eye(n_class)
        other = np.eye(n_class)[np.array([0, 1, 2, 3, 1, 2])]
        fs = FactorSet([other, target])
        test_idx = np.array([[i, np.argmax(other[i])] for i in range(len(other))])
        assert attribution_accuracy(test_idx, fs, target_mode=1) == 1.0

    def test_random_factors_chance_level(self):
        rng = np.random.default_rng(2)
        n_class, n_test = 5, 4000
        fs = FactorSet([rng.uniform(size=(50, 3)), rng.uniform(size=(n_class, 3)),
                        rng.uniform(size=(40, 3))])
        test_idx = np.stack([
            rng.integers(0, 50, n_test),
            rng.integers(0, n_class, n_test),
            rng.integers(0, 40, n_test),
        ], axis=1)
        acc = attribution_accuracy(test_idx, fs, target_mode=1)
        p = 1.0 / n_class
        sigma = np.sqrt(p * (1 - p) / n_test)
        assert abs(acc - p) < 3 * sigma

    def test_scale_indeterminacy_invariance(self):
        rng = np.random.default_rng(3)
        fs = init_factors((6, 5, 4), 3, seed=4)
        test_idx = np.stack([rng.integers(0, 6, 50), rng.integers(0, 5, 50),
                             rng.integers(0, 4, 50)], axis=1)
        base = attribution_accuracy(test_idx, fs, target_mode=1)
        scaled = fs.copy()
        scaled.factors[0][:, 1] *= 4.0
        scaled.factors[2][:, 1] /= 4.0
        assert attribution_accuracy(test_idx, scaled, target_mode=1) == base

    def test_empty_rejected(self):
        fs = init_factors((3, 3), 2, seed=0)
        with pytest.raises(DataFormatError):
            attribution_accuracy(np.zeros((0, 2), dtype=int), fs, 0)


class TestMetricReport:
    def test_csv_row(self):
        rep = MetricReport("rmse", 0.5, 100, "seed=1")
        assert rep.csv_row() == "rmse,0.5,100,seed=1"

    def test_rejects_nan(self):
        with pytest.raises(DataFormatError):
            MetricReport("rmse", float("nan"), 10)

    def test_rejects_zero_support(self):
        with pytest.raises(DataFormatError):
            MetricReport("rmse", 1.0, 0)


def test_predict_entries_matches_reconstruct():
    fs = init_factors((4, 3), 2, seed=1)
    idx = np.array([[0, 0], [3, 2]])
    out = predict_entries(fs, idx)
    assert out.shape == (2,)
