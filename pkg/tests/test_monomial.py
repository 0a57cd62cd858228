"""monomial: basis enumeration, lifting, lifted matrix, lifting Jacobian."""

import numpy as np
import pytest

from kflqr import monomial


def naive_lift(y, basis):
    """Per-monomial repeated-multiplication oracle."""
    out = np.empty(basis.size)
    for i, alpha in enumerate(basis.alphas):
        val = 1.0
        for j, e in enumerate(alpha):
            for _ in range(e):
                val *= y[j]
        out[i] = val
    return out


class TestBuildBasis:
    def test_count_d2_p10(self):
        assert monomial.build_basis(2, 10).size == 65

    def test_ordering_d2_p2(self):
        basis = monomial.build_basis(2, 2)
        assert basis.alphas.tolist() == [[1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]

    def test_ordering_d1_p3(self):
        basis = monomial.build_basis(1, 3)
        assert basis.alphas.tolist() == [[1], [2], [3]]

    def test_graded_descending_lex(self):
        basis = monomial.build_basis(3, 4)
        degrees = basis.alphas.sum(axis=1)
        assert np.all(np.diff(degrees) >= 0)
        for k in range(1, 5):
            block = [tuple(a) for a in basis.alphas[degrees == k]]
            assert block == sorted(block, reverse=True)

    def test_index_of_roundtrip(self):
        basis = monomial.build_basis(3, 5)
        for i, alpha in enumerate(basis.alphas):
            assert basis.index_of(alpha) == i

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            monomial.build_basis(0, 3)
        with pytest.raises(ValueError):
            monomial.build_basis(2, 0)


class TestLift:
    def test_hand_example(self):
        basis = monomial.build_basis(2, 2)
        assert np.allclose(monomial.lift([2.0, 3.0], basis), [2, 3, 4, 6, 9])

    def test_zero_maps_to_zero(self):
        basis = monomial.build_basis(2, 4)
        assert np.array_equal(monomial.lift(np.zeros(2), basis), np.zeros(basis.size))

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(10)
        basis = monomial.build_basis(2, 10)
        for _ in range(20):
            y = rng.uniform(-1.5, 1.5, size=2)
            z = monomial.lift(y, basis)
            ref = naive_lift(y, basis)
            assert np.allclose(z, ref, rtol=1e-12, atol=1e-300)

    def test_batched(self):
        basis = monomial.build_basis(2, 3)
        ys = np.random.default_rng(0).standard_normal((7, 2))
        batched = monomial.lift(ys, basis)
        assert batched.shape == (7, basis.size)
        for k in range(7):
            assert np.allclose(batched[k], monomial.lift(ys[k], basis))


class TestLiftJacobian:
    def test_square_monomial_row(self):
        basis = monomial.build_basis(2, 2)
        jac = monomial.lift_jacobian(np.array([1.0, 1.0]), basis)
        assert np.allclose(jac[basis.index_of((2, 0))], [2.0, 0.0])

    def test_cross_monomial_row(self):
        basis = monomial.build_basis(2, 2)
        jac = monomial.lift_jacobian(np.array([2.0, 3.0]), basis)
        assert np.allclose(jac[basis.index_of((1, 1))], [3.0, 2.0])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        basis = monomial.build_basis(3, 5)
        h = 1e-6
        for _ in range(10):
            y = rng.uniform(-1.0, 1.0, size=3)
            jac = monomial.lift_jacobian(y, basis)
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                fd = (monomial.lift(y + e, basis) - monomial.lift(y - e, basis)) / (2 * h)
                denom = np.maximum(np.abs(fd), 1.0)
                assert np.max(np.abs(jac[:, j] - fd) / denom) <= 1e-6


class TestLiftedMatrix:
    def test_d1_is_degree_scaled_diagonal(self):
        # d/dt y^k = k a y^k along ydot = a y
        basis = monomial.build_basis(1, 4)
        a = 0.7
        out = monomial.lifted_matrix(np.array([[a]]), basis)
        assert np.allclose(out, np.diag([a, 2 * a, 3 * a, 4 * a]))

    def test_identity_gives_total_degrees(self):
        basis = monomial.build_basis(2, 5)
        out = monomial.lifted_matrix(np.eye(2), basis)
        assert np.allclose(out, np.diag(basis.alphas.sum(axis=1).astype(float)))

    def test_zero_matrix(self):
        basis = monomial.build_basis(2, 4)
        out = monomial.lifted_matrix(np.zeros((2, 2)), basis)
        assert np.array_equal(out, np.zeros((basis.size, basis.size)))

    def test_linearity_exact_on_integer_entries(self):
        # with integer entries every product and sum is exact, so the
        # mathematical identity holds bitwise
        basis = monomial.build_basis(2, 5)
        rng = np.random.default_rng(12)
        a1 = rng.integers(-5, 6, size=(2, 2)).astype(float)
        a2 = rng.integers(-5, 6, size=(2, 2)).astype(float)
        lhs = monomial.lifted_matrix(a1 + a2, basis)
        rhs = monomial.lifted_matrix(a1, basis) + monomial.lifted_matrix(a2, basis)
        assert np.array_equal(lhs, rhs)

    def test_linearity_float(self):
        basis = monomial.build_basis(2, 4)
        rng = np.random.default_rng(12)
        a1 = rng.standard_normal((2, 2))
        a2 = rng.standard_normal((2, 2))
        lhs = monomial.lifted_matrix(a1 + a2, basis)
        rhs = monomial.lifted_matrix(a1, basis) + monomial.lifted_matrix(a2, basis)
        assert np.allclose(lhs, rhs, rtol=1e-14, atol=1e-14)

    def test_block_diagonal_by_degree(self):
        basis = monomial.build_basis(2, 6)
        out = monomial.lifted_matrix(np.random.default_rng(13).standard_normal((2, 2)), basis)
        deg = basis.alphas.sum(axis=1)
        off_block = deg[:, None] != deg[None, :]
        assert np.max(np.abs(out[off_block])) == 0.0

    def test_degree_one_block_is_a(self):
        basis = monomial.build_basis(3, 3)
        a = np.random.default_rng(14).standard_normal((3, 3))
        out = monomial.lifted_matrix(a, basis)
        assert np.array_equal(out[:3, :3], a)

    def test_invariance_identity(self):
        # executable core of the lifting construction:
        # J_lift(y) (A y) = A_lift y^[p]
        rng = np.random.default_rng(15)
        for _ in range(60):
            d = int(rng.integers(2, 4))
            p = int(rng.integers(2, 7))
            basis = monomial.build_basis(d, p)
            a = rng.standard_normal((d, d))
            y = rng.uniform(-1.0, 1.0, size=d)
            lhs = monomial.lift_jacobian(y, basis) @ (a @ y)
            rhs = monomial.lifted_matrix(a, basis) @ monomial.lift(y, basis)
            assert np.max(np.abs(lhs - rhs)) <= 1e-10

    def test_pattern_matches_assembly(self):
        basis = monomial.build_basis(2, 4)
        rows, cols, ii, jj, coeffs = monomial.lifted_matrix_pattern(basis)
        a = np.random.default_rng(16).standard_normal((2, 2))
        out = np.zeros((basis.size, basis.size))
        np.add.at(out, (rows, cols), coeffs * a[ii, jj])
        assert np.array_equal(out, monomial.lifted_matrix(a, basis))
