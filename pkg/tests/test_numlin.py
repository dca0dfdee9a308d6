"""Linear-algebra and sampling primitives."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gramlab.numlin import (
    Rng,
    fro_distance,
    frobenius_norm,
    gaussian_matrix,
    operator_norm,
    sym_eig_min,
)


class TestRng:
    def test_same_key_bit_identical(self):
        a = gaussian_matrix(2, 2, Rng(7))
        b = gaussian_matrix(2, 2, Rng(7))
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = gaussian_matrix(4, 4, Rng(7, 0))
        b = gaussian_matrix(4, 4, Rng(7, 1))
        assert not np.array_equal(a, b)

    def test_split_children_are_independent_and_reproducible(self):
        parent = Rng(3, 5)
        c1, c2 = parent.split(0), parent.split(1)
        assert (c1.seed, c1.stream) != (c2.seed, c2.stream)
        again = Rng(3, 5).split(0)
        assert np.array_equal(c1.normal(8), again.normal(8))

    def test_sample_mean_large_matrix(self):
        # law of large numbers: 10^6 entries, mean within 0.01 of 0
        w = gaussian_matrix(1000, 1000, Rng(42))
        assert abs(w.mean()) < 0.01

    def test_invalid_shape_rejected(self):
        with pytest.raises(ValueError):
            gaussian_matrix(0, 3, Rng(0))


class TestSymEigMin:
    def test_two_by_two(self):
        assert sym_eig_min(np.array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(1.0)

    def test_identity(self):
        assert sym_eig_min(np.eye(5)) == pytest.approx(1.0)

    def test_matches_characteristic_polynomial_roots(self):
        # independent oracle: smallest real root of det(A - t I)
        rng = Rng(11)
        a = rng.normal((6, 6))
        a = a @ a.T / 6.0
        coeffs = np.poly(a)
        roots = np.roots(coeffs)
        oracle = float(np.min(roots.real))
        assert sym_eig_min(a) == pytest.approx(oracle, abs=1e-9)

    def test_rayleigh_quotient_upper_bound(self):
        rng = Rng(5)
        a = rng.normal((8, 8))
        a = 0.5 * (a + a.T)
        lam = sym_eig_min(a)
        for k in range(100):
            x = rng.split(k).normal(8)
            x /= np.linalg.norm(x)
            assert lam <= x @ a @ x + 1e-10

    def test_rejects_nonfinite(self):
        bad = np.array([[1.0, np.nan], [np.nan, 1.0]])
        with pytest.raises(ValueError):
            sym_eig_min(bad)


class TestOperatorNorm:
    def test_diagonal(self):
        assert operator_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, rel=1e-7)

    def test_zero_matrix(self):
        assert operator_norm(np.zeros((4, 3))) == 0.0

    def test_matches_eigensolver_on_gram(self):
        a = Rng(2).normal((20, 20))
        oracle = float(np.sqrt(np.max(np.linalg.eigvalsh(a.T @ a))))
        assert operator_norm(a) == pytest.approx(oracle, abs=1e-7 * oracle)

    @settings(deadline=None, max_examples=25)
    @given(st.integers(0, 10_000))
    def test_norm_inequalities(self, seed):
        a = Rng(seed, 17).normal((7, 4))
        op = operator_norm(a)
        fro = frobenius_norm(a)
        assert op <= fro + 1e-9
        assert op >= fro / np.sqrt(4) - 1e-9


class TestGaussianOperatorNormBound:
    def test_width_500_never_exceeds_three_sqrt_m(self):
        m = 500
        bound = 3.0 * np.sqrt(m)
        violations = sum(
            operator_norm(gaussian_matrix(m, m, Rng(seed, 9))) > bound
            for seed in range(20)
        )
        assert violations == 0


class TestFrobenius:
    def test_identity(self):
        assert frobenius_norm(np.eye(3)) == pytest.approx(np.sqrt(3.0))

    def test_distance_to_self_zero(self):
        a = Rng(1).normal((3, 5))
        assert fro_distance(a, a) == 0.0

    def test_ones_vs_zeros(self):
        assert fro_distance(np.ones((2, 2)), np.zeros((2, 2))) == pytest.approx(2.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fro_distance(np.ones((2, 2)), np.ones((3, 2)))
