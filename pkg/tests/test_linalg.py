import numpy as np
import pytest

from orthowgan.linalg import SingularSystemError, as_matrix, solve_linear, spectral_norm, svd


class TestSpectralNorm:
    def test_diagonal(self):
        assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, rel=1e-10)

    def test_orthogonal_is_isometry(self):
        q, _ = np.linalg.qr(np.random.default_rng(3).normal(size=(4, 4)))
        assert spectral_norm(q) == pytest.approx(1.0, abs=1e-10)

    def test_rank_one_outer_product(self):
        # rank-1 norm is ||u|| * ||v||; construct with known lengths 2 and 3
        u = np.array([2.0, 0.0, 0.0]).reshape(3, 1)
        v = np.array([0.0, 3.0]).reshape(2, 1)
        assert spectral_norm(u @ v.T) == pytest.approx(6.0, rel=1e-10)

    def test_zero_matrix_returns_zero(self):
        assert spectral_norm(np.zeros((3, 5))) == 0.0

    def test_matches_svd_on_random_matrices(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            n, m = rng.integers(1, 65, size=2)
            w = rng.normal(size=(n, m))
            assert spectral_norm(w) == pytest.approx(float(svd(w).sigma.max()), rel=1e-8)

    def test_scaling_homogeneity(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(7, 5))
        base = spectral_norm(w)
        for c in (-2.5, 0.125, 17.0):
            assert spectral_norm(c * w) == pytest.approx(abs(c) * base, rel=1e-10)

    def test_validation(self):
        with pytest.raises(ValueError):
            spectral_norm(np.ones((2, 2)), max_iters=0)
        with pytest.raises(ValueError):
            spectral_norm(np.ones((2, 2)), tol=0.0)
        with pytest.raises(ValueError):
            spectral_norm(np.array([[np.nan, 1.0]]))


class TestSvd:
    def test_diagonal(self):
        r = svd(np.diag([5.0, 2.0]))
        assert np.allclose(r.sigma, [5.0, 2.0])
        assert np.allclose(r.u, np.eye(2))
        assert np.allclose(r.v, np.eye(2))

    def test_orthogonal_input_unit_sigma(self):
        q, _ = np.linalg.qr(np.random.default_rng(7).normal(size=(5, 5)))
        assert np.allclose(svd(q).sigma, 1.0, atol=1e-12)

    def test_reconstruction(self):
        rng = np.random.default_rng(11)
        m = rng.normal(size=(6, 3))
        r = svd(m)
        rec = r.u @ np.diag(r.sigma) @ r.v.T
        assert np.linalg.norm(rec - m) / np.linalg.norm(m) < 1e-9

    def test_invariants(self):
        rng = np.random.default_rng(12)
        for shape in [(4, 4), (9, 3), (3, 9)]:
            m = rng.normal(size=shape)
            r = svd(m)
            k = min(shape)
            assert np.allclose(r.u.T @ r.u, np.eye(k), atol=1e-10)
            assert np.allclose(r.v.T @ r.v, np.eye(k), atol=1e-10)
            assert np.all(np.diff(r.sigma) <= 0)
            assert np.all(r.sigma >= 0)
            # sign convention: dominant entry of each u column is nonnegative
            for j in range(k):
                assert r.u[np.argmax(np.abs(r.u[:, j])), j] >= 0

    def test_deterministic(self):
        m = np.random.default_rng(13).normal(size=(8, 5))
        a, b = svd(m), svd(m)
        assert np.array_equal(a.u, b.u) and np.array_equal(a.sigma, b.sigma)


class TestSolveLinear:
    def test_identity(self):
        b = np.random.default_rng(0).normal(size=(4, 2))
        assert np.array_equal(solve_linear(np.eye(4), b), b)

    def test_diagonal(self):
        x = solve_linear(np.diag([2.0, 4.0]), np.array([4.0, 8.0]))
        assert np.allclose(x, [2.0, 2.0])

    def test_residual(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(8, 8)) + 8 * np.eye(8)
        b = rng.normal(size=(8, 3))
        x = solve_linear(a, b)
        assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) < 1e-9

    def test_recovers_solution(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            a = rng.normal(size=(10, 10)) + 5 * np.eye(10)
            assert np.linalg.cond(a) < 1e6
            x = rng.normal(size=(10, 4))
            x_hat = solve_linear(a, a @ x)
            assert np.linalg.norm(x_hat - x) / np.linalg.norm(x) < 1e-8

    def test_singular_raises(self):
        a = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(SingularSystemError, match="singular system"):
            solve_linear(a, np.array([1.0, 1.0]))

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            solve_linear(np.ones((2, 3)), np.ones(2))
        with pytest.raises(ValueError):
            solve_linear(np.eye(3), np.ones(2))


def test_as_matrix_validation():
    with pytest.raises(ValueError):
        as_matrix(np.ones(3))
    with pytest.raises(ValueError):
        as_matrix(np.empty((0, 2)))
    with pytest.raises(ValueError):
        as_matrix(np.array([[np.inf]]))
