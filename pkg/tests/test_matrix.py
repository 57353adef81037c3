import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hpcnmf.errors import ContractViolation
from hpcnmf.grid import GridShape
from hpcnmf.matrix import (
    frobenius_residual,
    gram,
    matmul_cross_left,
    matmul_cross_right,
    nnz,
    partition,
    sparse_from_entries,
    split_bounds,
)


def sparse(dense):
    rows, cols = np.nonzero(dense)
    return sparse_from_entries(np.shape(dense), rows, cols, np.asarray(dense)[rows, cols])


class TestKernels:
    def test_cross_right_dense(self):
        out, flops = matmul_cross_right(np.array([[1.0, 2], [3, 4]]), np.ones((2, 1)))
        np.testing.assert_array_equal(out, [[3], [7]])
        assert flops == 8

    def test_cross_right_empty_sparse(self):
        out, flops = matmul_cross_right(sparse(np.zeros((2, 2))), np.array([[1.5], [2.5]]))
        np.testing.assert_array_equal(out, [[0], [0]])
        assert flops == 0

    def test_cross_right_sparse(self):
        out, flops = matmul_cross_right(sparse([[1.0, 0], [0, 2]]), np.array([[5.0], [7]]))
        np.testing.assert_array_equal(out, [[5], [14]])
        assert flops == 4

    def test_cross_left_dense(self):
        out, flops = matmul_cross_left(np.array([[1.0, 1]]), np.array([[1.0, 2], [3, 4]]))
        np.testing.assert_array_equal(out, [[4, 6]])
        assert flops == 8

    def test_cross_left_identity(self):
        a = np.array([[1.0, 2], [3, 4]])
        out, _ = matmul_cross_left(np.eye(2), a)
        np.testing.assert_array_equal(out, a)

    def test_cross_left_sparse(self):
        a = sparse_from_entries((2, 2), [0], [1], [3.0])
        out, flops = matmul_cross_left(np.array([[2.0, 0]]), a)
        np.testing.assert_array_equal(out, [[0, 6]])
        assert flops == 2

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            matmul_cross_right(np.ones((2, 3)), np.ones((2, 1)))
        with pytest.raises(ContractViolation):
            matmul_cross_left(np.ones((1, 3)), np.ones((2, 2)))

    def test_gram_examples(self):
        g, flops = gram(np.eye(2))
        np.testing.assert_array_equal(g, np.eye(2))
        g, flops = gram(np.array([[1.0], [2], [3]]))
        np.testing.assert_array_equal(g, [[14]])
        assert flops == 3
        g, flops = gram(np.zeros((0, 3)))
        np.testing.assert_array_equal(g, np.zeros((3, 3)))
        assert flops == 0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 6), st.integers(0, 2**31))
    def test_gram_symmetric_psd_diagonal(self, r, k, seed):
        f = np.random.default_rng(seed).standard_normal((r, k))
        g, _ = gram(f)
        assert np.array_equal(g, g.T)
        assert np.all(np.diag(g) >= 0)
        np.testing.assert_allclose(g, f.T @ f, rtol=1e-12, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**31))
    def test_sparse_and_dense_kernels_agree(self, m, n, k, seed):
        rng = np.random.default_rng(seed)
        dense = rng.random((m, n)) * (rng.random((m, n)) < 0.4)
        a = sparse(dense)
        ht, wt = rng.random((n, k)), rng.random((k, m))
        np.testing.assert_allclose(matmul_cross_right(a, ht)[0], dense @ ht, atol=1e-13)
        np.testing.assert_allclose(matmul_cross_left(wt, a)[0], wt @ dense, atol=1e-13)
        assert matmul_cross_right(a, ht)[1] == 2 * nnz(a) * k


class TestResidual:
    def test_exact_factorization(self):
        w, h = np.array([[1.0, 2], [0, 1], [3, 1]]), np.array([[1.0, 0, 2], [1, 1, 0]])
        assert frobenius_residual(w @ h, w, h) == 0.0

    def test_scalar(self):
        assert frobenius_residual(np.array([[2.0]]), np.array([[1.0]]), np.array([[1.0]])) == 1.0

    def test_hand_value(self):
        r = frobenius_residual(np.eye(2), np.array([[1.0], [1]]), np.array([[0.5, 0.5]]))
        assert r == pytest.approx(1.0, abs=1e-15)

    def test_sparse_matches_dense(self):
        rng = np.random.default_rng(4)
        dense = rng.random((9, 7)) * (rng.random((9, 7)) < 0.5)
        w, h = rng.random((9, 3)), rng.random((3, 7))
        assert frobenius_residual(sparse(dense), w, h) == pytest.approx(
            frobenius_residual(dense, w, h), rel=1e-12)


class TestSparseConstruction:
    def test_canonical(self):
        a = sparse_from_entries((3, 3), [2, 0, 1], [0, 2, 1], [1.0, 2.0, 3.0])
        assert isinstance(a, sp.csr_array)
        assert a.has_sorted_indices and a.nnz == 3
        np.testing.assert_array_equal(a.toarray(), [[0, 0, 2], [0, 3, 0], [1, 0, 0]])

    @pytest.mark.parametrize("rows,cols,vals", [
        ([0, 0], [1, 1], [1.0, 2.0]),
        ([3], [0], [1.0]),
        ([0], [0], [0.0]),
        ([0], [0], [np.nan]),
    ])
    def test_invalid(self, rows, cols, vals):
        with pytest.raises(ContractViolation):
            sparse_from_entries((3, 3), rows, cols, vals)


class TestPartition:
    def test_even(self):
        bm = partition(6, 4, GridShape(3, 2))
        assert np.diff(bm.row_bounds).tolist() == [2, 2, 2]
        assert np.diff(bm.col_bounds).tolist() == [2, 2]

    def test_uneven_rule(self):
        assert np.diff(split_bounds(7, 3)).tolist() == [3, 2, 2]

    def test_large_even_blocks(self):
        bm = partition(172800, 115200, GridShape(20, 30))
        assert set(np.diff(bm.row_bounds)) == {8640}
        assert set(np.diff(bm.col_bounds)) == {3840}

    def test_too_many_blocks(self):
        with pytest.raises(ContractViolation):
            partition(3, 10, GridShape(4, 1))
        with pytest.raises(ContractViolation):
            partition(10, 3, GridShape(1, 4))

    def test_empty_factor_block_is_reported(self):
        assert partition(6, 4, GridShape(3, 2)).has_empty_factor_blocks
        assert not partition(6, 6, GridShape(3, 2)).has_empty_factor_blocks

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 60), st.integers(1, 60), st.integers(1, 6), st.integers(1, 6))
    def test_bounds_cover_and_balance(self, m, n, pr, pc):
        grid = GridShape(pr, pc)
        try:
            bm = partition(m, n, grid)
        except ContractViolation:
            assert pr > m or pc > n
            return
        assert bm.has_empty_factor_blocks == (m < pr * pc or n < pr * pc)
        for bounds, total in [(bm.row_bounds, m), (bm.col_bounds, n), (bm.w_bounds, m), (bm.h_bounds, n)]:
            assert bounds[0] == 0 and bounds[-1] == total
            sizes = np.diff(bounds)
            assert np.all(sizes >= 0)
        for b in (bm.row_bounds, bm.col_bounds):
            assert np.ptp(np.diff(b)) <= 1
        for i in range(pr):
            assert sum(bm.w_counts(i)) == bm.row_block(i).stop - bm.row_block(i).start
        for j in range(pc):
            assert sum(bm.h_counts(j)) == bm.col_block(j).stop - bm.col_block(j).start
