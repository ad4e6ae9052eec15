import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from csfuse import (
    BlockProjection,
    DimensionError,
    block_compress,
    compress,
    compress_stats,
    frobenius_ratio,
    make_orthoprojector,
)
from csfuse.errors import CovarianceError


def bp_pair(m, n, seed0=1, seed1=2):
    return BlockProjection((make_orthoprojector(m, n, seed0), make_orthoprojector(m, n, seed1)))


class TestMakeOrthoprojector:
    def test_one_by_one_is_sign(self):
        p = make_orthoprojector(1, 1, 123)
        assert p.entries.shape == (1, 1)
        assert abs(abs(p.entries[0, 0]) - 1.0) < 1e-12

    def test_rows_orthonormal(self):
        p = make_orthoprojector(2, 4, 7)
        gram = p.entries @ p.entries.T
        assert np.max(np.abs(gram - np.eye(2))) <= 1e-12

    def test_deterministic(self):
        a = make_orthoprojector(2, 4, 7)
        b = make_orthoprojector(2, 4, 7)
        assert np.array_equal(a.entries, b.entries)

    def test_distinct_seeds_differ(self):
        a = make_orthoprojector(2, 4, 7)
        b = make_orthoprojector(2, 4, 8)
        assert not np.allclose(a.entries, b.entries)

    def test_wide_rejected(self):
        with pytest.raises(DimensionError):
            make_orthoprojector(5, 4, 0)

    def test_square_allowed_for_unit_ratio(self):
        p = make_orthoprojector(6, 6, 3)
        assert p.orthonormality_defect() <= 1e-10
        assert p.ratio == 1.0

    def test_entries_read_only(self):
        p = make_orthoprojector(2, 4, 7)
        with pytest.raises(ValueError):
            p.entries[0, 0] = 0.0

    @settings(max_examples=60, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=96),
        ratio=st.floats(min_value=0.01, max_value=1.0),
        seed=st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_contract_holds_for_any_shape(self, n, ratio, seed):
        m = max(1, round(ratio * n))
        p = make_orthoprojector(m, n, seed)
        assert p.orthonormality_defect() <= 1e-10
        again = make_orthoprojector(m, n, seed)
        assert np.array_equal(p.entries, again.entries)


class TestCompress:
    def test_identity_projection_roundtrip(self):
        p = make_orthoprojector(5, 5, 11)
        x = np.arange(5.0)
        # square orthoprojector is orthogonal: A^T A x recovers x
        assert_allclose(p.entries.T @ compress(p, x), x, atol=1e-12)

    def test_zero_vector(self):
        p = make_orthoprojector(2, 4, 7)
        assert_allclose(compress(p, np.zeros(4)), np.zeros(2))

    def test_basis_vector_gives_column(self):
        p = make_orthoprojector(2, 4, 7)
        e1 = np.zeros(4)
        e1[0] = 1.0
        assert_allclose(compress(p, e1), p.entries[:, 0], atol=1e-15)

    def test_length_mismatch(self):
        p = make_orthoprojector(2, 4, 7)
        with pytest.raises(DimensionError):
            compress(p, np.zeros(5))


class TestBlockCompress:
    def test_single_block_matches_compress(self):
        p = make_orthoprojector(3, 6, 5)
        bp = BlockProjection((p,))
        x = np.linspace(-1, 1, 6)
        assert_allclose(block_compress(bp, x), compress(p, x))

    def test_block_structure_zero_segment(self):
        bp = bp_pair(3, 6)
        x = np.concatenate([np.arange(6.0), np.zeros(6)])
        y = block_compress(bp, x)
        assert_allclose(y[3:], 0.0)
        assert_allclose(y[:3], compress(bp.blocks[0], x[:6]))

    def test_matches_dense_operator(self):
        rng = np.random.default_rng(0)
        for m, n, l in [(2, 4, 2), (3, 8, 3), (4, 16, 2)]:
            blocks = tuple(make_orthoprojector(m, n, 10 + j) for j in range(l))
            bp = BlockProjection(blocks)
            x = rng.standard_normal(n * l)
            assert_allclose(block_compress(bp, x), bp.dense() @ x, atol=1e-12)

    def test_wrong_length(self):
        bp = bp_pair(3, 6)
        with pytest.raises(DimensionError):
            block_compress(bp, np.zeros(11))


class TestCompressStats:
    def test_identity_covariance_passes_through(self):
        bp = bp_pair(4, 9)
        mu, c = compress_stats(bp, np.zeros(18), np.eye(18))
        assert_allclose(mu, 0.0)
        assert_allclose(c, np.eye(8), atol=1e-12)

    def test_per_block_scale(self):
        bp = bp_pair(4, 9)
        d = np.diag(np.concatenate([np.full(9, 2.5), np.full(9, 0.5)]))
        _, c = compress_stats(bp, np.zeros(18), d)
        expected = np.diag(np.concatenate([np.full(4, 2.5), np.full(4, 0.5)]))
        assert_allclose(c, expected, atol=1e-12)

    def test_matches_dense_multiply(self):
        rng = np.random.default_rng(4)
        bp = bp_pair(3, 7)
        a = bp.dense()
        root = rng.standard_normal((14, 14))
        d = root @ root.T
        beta = rng.standard_normal(14)
        mu, c = compress_stats(bp, beta, d)
        assert_allclose(mu, a @ beta, atol=1e-12)
        assert_allclose(c, a @ d @ a.T, atol=1e-10)

    def test_symmetry_enforced(self):
        bp = bp_pair(3, 7)
        d = np.eye(14)
        d[0, 1] = 1e-3  # asymmetric beyond tolerance
        with pytest.raises(CovarianceError):
            compress_stats(bp, np.zeros(14), d)

    def test_output_symmetrized(self):
        rng = np.random.default_rng(5)
        bp = bp_pair(5, 12)
        root = rng.standard_normal((24, 24))
        d = root @ root.T
        _, c = compress_stats(bp, np.zeros(24), d)
        assert np.max(np.abs(c - c.T)) == 0.0


class TestProjectorStatistics:
    """Ensemble behavior backing the compressed-domain approximations."""

    def test_gram_concentration(self):
        # mean diagonal of A^T A near m/n, off-diagonal small, over many seeds
        m, n, seeds = 16, 64, 120
        diag_means = []
        off_means = []
        for s in range(seeds):
            a = make_orthoprojector(m, n, 1000 + s).entries
            gram = a.T @ a
            diag_means.append(np.mean(np.diag(gram)))
            off = gram[~np.eye(n, dtype=bool)]
            off_means.append(np.mean(np.abs(off)))
        ratio = m / n
        assert abs(np.mean(diag_means) - ratio) <= 0.05 * ratio
        assert np.mean(off_means) <= 3.0 / np.sqrt(n) * ratio

    def test_cross_block_shrinkage_is_ratio_squared(self):
        # dependence-carrying cross blocks lose Frobenius mass like c_r^2
        n, m, seeds = 128, 32, 100
        d_cross = np.eye(n)
        ratios = []
        for s in range(seeds):
            a1 = make_orthoprojector(m, n, 2000 + s).entries
            a2 = make_orthoprojector(m, n, 7000 + s).entries
            block = a1 @ d_cross @ a2.T
            ratios.append(np.sum(block**2) / np.sum(d_cross**2))
        c_r = m / n
        assert 0.8 * c_r**2 <= np.mean(ratios) <= 1.2 * c_r**2

    def test_diagonal_block_shrinkage_is_ratio(self):
        # same-operator quadratic blocks keep mass c_r exactly (A A^T = I)
        n, m = 96, 24
        a = make_orthoprojector(m, n, 42).entries
        block = a @ (3.0 * np.eye(n)) @ a.T
        assert_allclose(np.sum(block**2) / np.sum((3.0 * np.eye(n)) ** 2), m / n, rtol=1e-12)

    def test_frobenius_shrinkage_offdiag_dominated(self):
        # fixed non-diagonal trace-free d: full-matrix mass follows c_r^2
        n, m, seeds = 128, 32, 100
        rng = np.random.default_rng(99)
        sym = rng.standard_normal((2 * n, 2 * n))
        d = (sym + sym.T) / 2.0
        np.fill_diagonal(d, 0.0)
        ratios = []
        for s in range(seeds):
            bp = BlockProjection(
                (make_orthoprojector(m, n, 3000 + s), make_orthoprojector(m, n, 8000 + s))
            )
            ratios.append(frobenius_ratio(bp, d))
        c_r = m / n
        assert 0.8 * c_r**2 <= np.mean(ratios) <= 1.2 * c_r**2
