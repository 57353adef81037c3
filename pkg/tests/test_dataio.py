import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hpcnmf.dataio import (
    MatrixSource,
    counter_uniform,
    distribute,
    gather_blocks,
    gen_dense_synthetic,
    gen_sparse_er,
    init_H,
    read_matrix_market,
    write_matrix_market,
)
from hpcnmf.errors import ContractViolation, MatrixMarketError
from hpcnmf.grid import GridShape
from hpcnmf.matrix import partition, sparse_from_entries


def gather_h(blocks, bm):
    grid = bm.grid
    order = [i * grid.p_c + j for j in range(grid.p_c) for i in range(grid.p_r)]
    return np.hstack([blocks[r] for r in order])


class TestInitH:
    def test_grid_invariant(self):
        full = init_H(30, 4, seed=9)
        bm = partition(20, 30, GridShape(2, 3))
        assert np.array_equal(gather_h(init_H(30, 4, 9, bm), bm), full)

    def test_range_and_seed(self):
        h = init_H(50, 5, seed=1)
        assert h.shape == (5, 50)
        assert h.min() >= 0 and h.max() < 1
        assert not np.array_equal(h, init_H(50, 5, seed=2))

    def test_counter_uniform_mean(self):
        u = counter_uniform(3, 0, np.arange(300), np.arange(300))
        assert abs(u.mean() - 0.5) < 0.01 and abs(u.var() - 1 / 12) < 0.01


class TestGenerators:
    def test_noise_free_range(self):
        a = gen_dense_synthetic(40, 30, seed=1, noise_std=0.0)
        assert a.min() >= 0 and a.max() < 1

    @pytest.mark.parametrize("noise", [0.1, 1.0, 10.0])
    def test_clamped(self, noise):
        assert gen_dense_synthetic(40, 30, seed=5, noise_std=noise).min() >= 0

    def test_noise_spread(self):
        clean = gen_dense_synthetic(200, 200, seed=2, noise_std=0.0)
        noisy = gen_dense_synthetic(200, 200, seed=2, noise_std=0.1)
        diff = (noisy - clean)[clean > 0.5]
        assert abs(diff.std() - 0.1) < 0.005

    def test_dense_grid_invariant(self):
        full = gen_dense_synthetic(9, 7, seed=3)
        bm = partition(9, 7, GridShape(2, 2))
        blocks = [gen_dense_synthetic(9, 7, 3, rows=bm.row_block(r.i), cols=bm.col_block(r.j))
                  for r in bm.grid.ranks()]
        assert np.array_equal(gather_blocks(blocks, bm), full)

    def test_per_rank_mode(self):
        a = gen_dense_synthetic(5, 5, seed=1, rank=0)
        b = gen_dense_synthetic(5, 5, seed=1, rank=1)
        assert a.shape == (5, 5) and not np.array_equal(a, b)
        assert np.array_equal(a, gen_dense_synthetic(5, 5, seed=1, rank=0))

    def test_er_full_density(self):
        a = gen_sparse_er(13, 11, 1.0, seed=0)
        assert a.nnz == 13 * 11 and a.data.min() > 0

    def test_er_count(self):
        a = gen_sparse_er(1000, 1000, 0.001, seed=7)
        sigma = np.sqrt(1e6 * 0.001 * 0.999)
        assert abs(a.nnz - 1000) <= 5 * sigma

    def test_er_grid_invariant(self):
        full = gen_sparse_er(30, 20, 0.2, seed=4)
        bm = partition(30, 20, GridShape(3, 2))
        blocks = [gen_sparse_er(30, 20, 0.2, 4, rows=bm.row_block(r.i), cols=bm.col_block(r.j))
                  for r in bm.grid.ranks()]
        assert (gather_blocks(blocks, bm) != full).nnz == 0

    def test_er_bad_density(self):
        with pytest.raises(ContractViolation):
            gen_sparse_er(3, 3, 0.0, seed=0)

    def test_source(self):
        with pytest.raises(ContractViolation):
            MatrixSource("sparse", m=3, n=3, density=2.0)
        a = MatrixSource("dense", m=4, n=3, seed=1).load()
        assert np.array_equal(a, gen_dense_synthetic(4, 3, 1))


class TestDistribute:
    def test_single_rank(self):
        a = np.arange(12.0).reshape(3, 4)
        (block,) = distribute(a, partition(3, 4, GridShape(1, 1)))
        assert np.array_equal(block, a)

    def test_two_by_two(self):
        a = np.arange(16.0).reshape(4, 4)
        blocks = distribute(a, partition(4, 4, GridShape(2, 2)))
        assert np.array_equal(blocks[1], a[:2, 2:]) and np.array_equal(blocks[2], a[2:, :2])

    def test_naive_dual_shapes(self):
        a = np.arange(16.0).reshape(4, 4)
        pairs = distribute(a, partition(4, 4, GridShape(2, 1)), "naive-dual")
        assert [(r.shape, c.shape) for r, c in pairs] == [((2, 4), (4, 2))] * 2
        assert np.array_equal(pairs[1][1], a[:, 2:])

    def test_empty_factor_blocks_rejected(self):
        with pytest.raises(ContractViolation):
            distribute(np.ones((6, 4)), partition(6, 4, GridShape(3, 2)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.booleans(), st.integers(0, 2**31))
    def test_gather_inverts_distribute(self, pr, pc, sparse, seed):
        m, n = pr * pc + 3, pr * pc + 1
        a = gen_sparse_er(m, n, 0.3, seed) if sparse else gen_dense_synthetic(m, n, seed)
        bm = partition(m, n, GridShape(pr, pc))
        back = gather_blocks(distribute(a, bm), bm)
        if sparse:
            assert (back != a).nnz == 0
        else:
            assert np.array_equal(back, a)


class TestMatrixMarket:
    def write(self, tmp_path, text, name="m.mtx"):
        path = tmp_path / name
        path.write_text(text)
        return path

    def test_coordinate(self, tmp_path):
        a = read_matrix_market(self.write(
            tmp_path, "%%MatrixMarket matrix coordinate real general\n% c\n2 2 2\n1 1 5.0\n2 2 7.0\n"))
        assert sp.issparse(a) and a.nnz == 2
        assert a.diagonal().tolist() == [5.0, 7.0]

    def test_array(self, tmp_path):
        a = read_matrix_market(self.write(tmp_path, "%%MatrixMarket matrix array real general\n2 1\n1.0\n2.0\n"))
        assert isinstance(a, np.ndarray) and a.tolist() == [[1.0], [2.0]]

    def test_array_is_column_major(self, tmp_path):
        a = read_matrix_market(self.write(
            tmp_path, "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n"))
        assert a.tolist() == [[1, 3], [2, 4]]

    def test_symmetric_expanded(self, tmp_path):
        a = read_matrix_market(self.write(
            tmp_path, "%%MatrixMarket matrix coordinate real symmetric\n3 3 2\n2 1 4.0\n3 3 1.0\n"))
        assert a.toarray().tolist() == [[0, 4, 0], [4, 0, 0], [0, 0, 1]]
        b = read_matrix_market(self.write(
            tmp_path, "%%MatrixMarket matrix array real symmetric\n2 2\n1\n2\n3\n", "s.mtx"))
        assert b.tolist() == [[1, 2], [2, 3]]

    @pytest.mark.parametrize("body,line", [
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n0 1 1.0\n", 3),
        ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n1 1 2.0\n", 4),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 1.0\n", 3),
        ("%%MatrixMarket matrix coordinate real general\n2 2\n", 2),
        ("%%MatrixMarket vector coordinate real general\n2 2 0\n", 1),
        ("%%MatrixMarket matrix array real general\n2 2\n1\n", 4),
    ])
    def test_errors_carry_line_numbers(self, tmp_path, body, line):
        with pytest.raises(MatrixMarketError) as err:
            read_matrix_market(self.write(tmp_path, body))
        assert err.value.line == line
        assert f"line {line}" in str(err.value)

    def test_round_trip_examples(self, tmp_path):
        for a in [sparse_from_entries((2, 2), [0, 1], [0, 1], [5.0, 7.0]), np.array([[1.0], [2.0]]),
                  np.array([[0.0]]), sparse_from_entries((3, 4), [], [], [])]:
            path = tmp_path / "rt.mtx"
            write_matrix_market(a, path)
            b = read_matrix_market(path)
            assert sp.issparse(b) == sp.issparse(a) and b.shape == a.shape
            if sp.issparse(a):
                assert (a != b).nnz == 0
            else:
                assert np.array_equal(a, b)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.booleans(), st.integers(0, 2**31))
    def test_round_trip_is_exact(self, tmp_path_factory, m, n, sparse, seed):
        rng = np.random.default_rng(seed)
        dense = rng.standard_normal((m, n)) * 10.0 ** rng.integers(-300, 300, (m, n))
        if sparse:
            dense *= rng.random((m, n)) < 0.5
            rows, cols = np.nonzero(dense)
            a = sparse_from_entries((m, n), rows, cols, dense[rows, cols])
        else:
            a = dense
        path = tmp_path_factory.mktemp("mm") / "a.mtx"
        write_matrix_market(a, path)
        b = read_matrix_market(path)
        if sparse:
            assert np.array_equal(a.toarray(), b.toarray())
        else:
            assert np.array_equal(a, b)
