import itertools

import numpy as np
import pytest

from hyperfact.errors import DataFormatError
from hyperfact.factors import FactorSet, init_factors
from hyperfact.sptensor import (
    SparseTensor,
    load_relation_file,
    masked_sq_error,
    reconstruct_at,
    save_relation_file,
    unfold_column_index,
)


def dense_from_factors(fs):
    """Triple-loop CP oracle: materialize the full tensor entry by entry."""
    out = np.zeros(fs.dims)
    for idx in itertools.product(*(range(n) for n in fs.dims)):
        s = 0.0
        for r in range(fs.rank):
            term = 1.0
            for mode, i in enumerate(idx):
                term *= fs.factors[mode][i, r]
            s += term
        out[idx] = s
    return out


def dense_from_tensor(x):
    out = np.zeros(x.dims)
    for row, v in zip(x.idx, x.vals):
        out[tuple(row)] = v
    return out


class TestUnfoldColumnIndex:
    def test_single_remaining_mode(self):
        assert unfold_column_index((2, 3), 0, (1, 2)) == 2

    def test_ascending_stride(self):
        # oracle: enumerate all (n1, n3) pairs in ascending order
        expected = list(itertools.product(range(2), range(4))).index((1, 3))
        assert unfold_column_index((2, 3, 4), 1, (1, 0, 3)) == expected == 7

    def test_all_zero_rest(self):
        assert unfold_column_index((2, 3, 4), 1, (0, 2, 0)) == 0

    @pytest.mark.parametrize("dims,mode", [((2, 3), 0), ((2, 3, 4), 1), ((3, 2, 2, 2), 2)])
    def test_bijection_over_non_mode_space(self, dims, mode):
        rest = [n for k, n in enumerate(dims) if k != mode]
        cols = []
        for partial in itertools.product(*(range(n) for n in rest)):
            idx = list(partial)
            idx.insert(mode, 0)
            cols.append(unfold_column_index(dims, mode, tuple(idx)))
        assert sorted(cols) == list(range(int(np.prod(rest))))

    def test_errors(self):
        with pytest.raises(DataFormatError):
            unfold_column_index((2, 3), 2, (0, 0))
        with pytest.raises(DataFormatError):
            unfold_column_index((2, 3), 0, (0, 3))


class TestReconstructAt:
    def test_rank1_scalar(self):
        fs = FactorSet([np.array([[2.0]]), np.array([[3.0]])])
        assert reconstruct_at(fs, (0, 0)) == 6.0

    def test_orthogonal_columns(self):
        fs = FactorSet([np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])])
        assert reconstruct_at(fs, (0, 0)) == 0.0

    def test_matches_dense_oracle(self):
        fs = init_factors((3, 4, 2), 2, seed=7)
        dense = dense_from_factors(fs)
        for idx in [(0, 0, 0), (2, 3, 1), (1, 2, 0)]:
            assert reconstruct_at(fs, idx) == pytest.approx(dense[idx], rel=1e-12)

    def test_vectorized_matches_scalar(self):
        fs = init_factors((3, 4, 2), 2, seed=7)
        idx = np.array([[0, 0, 0], [2, 3, 1]])
        out = reconstruct_at(fs, idx)
        assert out.shape == (2,)
        assert out[1] == reconstruct_at(fs, (2, 3, 1))

    def test_out_of_bounds(self):
        fs = init_factors((3, 4), 2, seed=0)
        with pytest.raises(DataFormatError):
            reconstruct_at(fs, (3, 0))


class TestMaskedSqError:
    def test_exact_fit_is_zero(self):
        fs = init_factors((3, 3), 2, seed=1)
        idx = np.array([[0, 1], [2, 2]])
        x = SparseTensor((3, 3), idx, reconstruct_at(fs, idx), observed_only=True)
        assert masked_sq_error(x, fs) == pytest.approx(0.0, abs=1e-15)

    def test_zero_factors_binary_tensor(self):
        m = 5
        idx = np.array([[i, i, 0] for i in range(m)])
        x = SparseTensor((5, 5, 2), idx, np.ones(m), observed_only=True)
        fs = FactorSet([np.zeros((5, 2)), np.zeros((5, 2)), np.zeros((2, 2))])
        assert masked_sq_error(x, fs) == m

    def test_full_error_matches_dense_oracle(self):
        rng = np.random.default_rng(3)
        idx = np.array(list(itertools.product(range(3), repeat=3)))
        keep = rng.random(len(idx)) < 0.4
        idx = idx[keep]
        vals = rng.random(len(idx))
        x = SparseTensor((3, 3, 3), idx, vals, observed_only=False)
        fs = init_factors((3, 3, 3), 2, seed=5)
        dense_err = float(np.sum((dense_from_tensor(x) - dense_from_factors(fs)) ** 2))
        assert masked_sq_error(x, fs) == pytest.approx(dense_err, rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gram_expansion_vs_dense_random(self, seed):
        rng = np.random.default_rng(seed)
        dims = tuple(rng.integers(2, 7, size=rng.integers(2, 5)))
        total = int(np.prod(dims))
        count = rng.integers(1, total + 1)
        flat = rng.choice(total, size=count, replace=False)
        idx = np.stack(np.unravel_index(flat, dims), axis=1)
        vals = rng.normal(size=count)
        x = SparseTensor(dims, idx, vals, observed_only=False)
        fs = init_factors(dims, int(rng.integers(1, 4)), seed=seed + 100)
        dense_err = float(np.sum((dense_from_tensor(x) - dense_from_factors(fs)) ** 2))
        assert masked_sq_error(x, fs) == pytest.approx(dense_err, rel=1e-10)

    def test_nonnegative(self):
        fs = init_factors((3, 3), 2, seed=2)
        x = SparseTensor((3, 3), [[0, 0]], [0.3])
        assert masked_sq_error(x, fs) >= 0.0


class TestSparseTensorValidation:
    def test_duplicate_entries_rejected(self):
        with pytest.raises(DataFormatError, match="duplicate"):
            SparseTensor((2, 2), [[0, 0], [0, 0]], [1.0, 2.0])

    def test_out_of_bounds_rejected(self):
        with pytest.raises(DataFormatError):
            SparseTensor((2, 2), [[0, 2]], [1.0])

    def test_order_one_rejected(self):
        with pytest.raises(DataFormatError):
            SparseTensor((4,), [[0]], [1.0])

    def test_immutable_entries(self):
        x = SparseTensor((2, 2), [[0, 1]], [1.0])
        with pytest.raises(ValueError):
            x.vals[0] = 2.0

    def test_scatter_matrix_shape(self):
        x = SparseTensor((2, 3), [[0, 1], [1, 2]], [1.0, 2.0])
        s = x.scatter_matrix(1)
        assert s.shape == (3, 2)
        assert s.toarray()[1, 0] == 1.0


class TestRelationFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        idx = np.array([[0, 1, 2], [3, 0, 1], [1, 1, 0]])
        x = SparseTensor((4, 2, 3), idx, rng.normal(size=3), observed_only=False)
        path = tmp_path / "rel.tsv"
        save_relation_file(x, path)
        y = load_relation_file(path)
        assert y.dims == x.dims
        assert y.observed_only == x.observed_only
        assert np.array_equal(y.idx, x.idx)
        assert np.array_equal(y.vals, x.vals)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("0\t0\t1.0\n")
        with pytest.raises(DataFormatError, match="header"):
            load_relation_file(path)

    def test_bad_field_count_reports_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("#dims 2 2 observed\n0\t0\t1.0\n0\t1.0\n")
        with pytest.raises(DataFormatError, match=":3"):
            load_relation_file(path)
