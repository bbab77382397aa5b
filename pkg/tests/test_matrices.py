"""CSR container invariants and the sparse-dense product against a
dense brute-force oracle."""

import numpy as np
import pytest

from gcnlab.errors import ShapeError
from gcnlab.matrices import SparseMatrix, identity_sparse, spmm, spmm_transposed


def random_csr(n_rows, n_cols, density, rng):
    mask = rng.random((n_rows, n_cols)) < density
    rows, cols = np.nonzero(mask)
    vals = rng.standard_normal(len(rows))
    return SparseMatrix.from_coo(n_rows, n_cols, rows, cols, vals)


class TestInvariants:
    def test_offsets_shape_and_monotonicity(self):
        m = SparseMatrix.from_coo(3, 3, [0, 2, 2], [1, 0, 2], [1.0, 2.0, 3.0])
        assert m.row_offsets.shape == (4,)
        assert m.row_offsets[0] == 0 and m.row_offsets[-1] == m.nnz
        assert np.all(np.diff(m.row_offsets) >= 0)

    def test_columns_strictly_increasing_within_rows(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m = random_csr(6, 5, 0.5, rng)
            for i in range(m.n_rows):
                cols, _ = m.row_slice(i)
                assert np.all(np.diff(cols) > 0)
                assert len(cols) == 0 or cols.max() < m.n_cols

    def test_rejects_nan(self):
        with pytest.raises(ShapeError):
            SparseMatrix.from_coo(2, 2, [0], [0], [np.nan])

    def test_rejects_bad_offsets(self):
        with pytest.raises(ShapeError):
            SparseMatrix(2, 2, [0, 1], [0], [1.0])

    def test_rejects_duplicate_coo_by_default(self):
        with pytest.raises(ShapeError):
            SparseMatrix.from_coo(2, 2, [0, 0], [1, 1], [1.0, 2.0])

    def test_sums_duplicates_when_asked(self):
        m = SparseMatrix.from_coo(2, 2, [0, 0], [1, 1], [1.0, 2.0], sum_duplicates=True)
        assert m.nnz == 1
        assert m.to_dense()[0, 1] == 3.0

    def test_out_of_range_column_rejected(self):
        with pytest.raises(ShapeError):
            SparseMatrix.from_coo(2, 2, [0], [2], [1.0])


class TestSpmm:
    def test_identity_times_dense(self):
        rng = np.random.default_rng(1)
        dense = rng.standard_normal((4, 3))
        assert np.array_equal(spmm(identity_sparse(4), dense), dense)

    def test_zero_row_yields_zero_row(self):
        m = SparseMatrix.from_coo(3, 3, [0, 2], [1, 2], [1.0, 2.0])
        out = spmm(m, np.ones((3, 2)))
        assert np.array_equal(out[1], np.zeros(2))

    def test_random_5x5_against_dense_oracle(self):
        rng = np.random.default_rng(7)
        m = random_csr(5, 5, 0.4, rng)
        dense = rng.standard_normal((5, 3))
        oracle = m.to_dense() @ dense
        assert np.abs(spmm(m, dense) - oracle).max() < 1e-12

    def test_hundred_random_instances_against_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(100):
            n, k, d = rng.integers(1, 9, size=3)
            m = random_csr(int(n), int(k), float(rng.uniform(0.1, 0.9)), rng)
            dense = rng.standard_normal((int(k), int(d)))
            assert np.abs(spmm(m, dense) - m.to_dense() @ dense).max() < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            spmm(identity_sparse(3), np.ones((4, 2)))

    def test_transposed_product_matches_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            m = random_csr(6, 4, 0.5, rng)
            dense = rng.standard_normal((6, 3))
            oracle = m.to_dense().T @ dense
            assert np.abs(spmm_transposed(m, dense) - oracle).max() < 1e-12

    def test_transposed_product_ignores_masked_rows_bitwise(self):
        # restricting the matrix to the rows where the dense factor is
        # nonzero must not change a single bit of the result
        rng = np.random.default_rng(11)
        m = random_csr(8, 6, 0.5, rng)
        dense = rng.standard_normal((8, 3))
        keep = np.asarray([1, 3, 4, 6])
        dense_masked = np.zeros_like(dense)
        dense_masked[keep] = dense[keep]
        assert np.array_equal(
            spmm_transposed(m, dense_masked),
            spmm_transposed(m.restrict_rows(keep), dense_masked),
        )


class TestHelpers:
    def test_transpose_matches_dense(self):
        rng = np.random.default_rng(3)
        m = random_csr(5, 7, 0.4, rng)
        assert np.array_equal(m.transpose().to_dense(), m.to_dense().T)

    def test_column_sq_norms(self):
        rng = np.random.default_rng(4)
        m = random_csr(6, 6, 0.5, rng)
        oracle = (m.to_dense() ** 2).sum(axis=0)
        assert np.abs(m.column_sq_norms() - oracle).max() < 1e-12

    def test_restrict_rows(self):
        rng = np.random.default_rng(5)
        m = random_csr(6, 6, 0.5, rng)
        sub = m.restrict_rows([1, 4])
        dense = np.zeros((6, 6))
        dense[[1, 4]] = m.to_dense()[[1, 4]]
        assert np.array_equal(sub.to_dense(), dense)
