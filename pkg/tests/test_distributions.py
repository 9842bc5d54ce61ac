from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from rrgpssm.distributions import (
    iw_logpdf,
    mn_logpdf,
    mvn_logpdf,
    robust_cholesky,
    sample_iw,
    sample_mn,
)


def test_robust_cholesky_jitter_and_failure():
    a = np.array([[1.0, 1.0], [1.0, 1.0]])  # singular PSD: needs jitter
    L = robust_cholesky(a)
    assert_allclose(L @ L.T, a, atol=1e-6)
    with pytest.raises(np.linalg.LinAlgError):
        robust_cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(np.linalg.LinAlgError):
        robust_cholesky(np.array([[np.nan]]))


def test_mvn_logpdf_matches_scipy():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((3, 3))
    cov = B @ B.T + np.eye(3)
    x = rng.standard_normal((5, 3))
    assert_allclose(mvn_logpdf(x, np.ones(3), cov), stats.multivariate_normal(np.ones(3), cov).logpdf(x))


class TestMatrixNormal:
    def test_scalar_standard_normal(self):
        assert_allclose(mn_logpdf([[0.0]], [[0.0]], [[1.0]], [[1.0]]), -0.5 * np.log(2 * np.pi))

    def test_swap_symmetry(self):
        rng = np.random.default_rng(1)
        A, M = rng.standard_normal((2, 2, 3))
        Q = np.diag([1.0, 2.0])
        V = np.diag([0.5, 1.0, 3.0])
        assert_allclose(mn_logpdf(A, M, Q, V), mn_logpdf(M, A, Q, V))

    def test_diagonal_factorisation(self):
        rng = np.random.default_rng(2)
        A, M = rng.standard_normal((2, 2, 3))
        q = np.array([0.7, 1.9])
        v = np.array([0.5, 1.0, 3.0])
        # entry (i, j) ~ N(M_ij, q_i / v_j)
        ref = stats.norm.logpdf(A, M, np.sqrt(q[:, None] / v[None, :])).sum()
        assert_allclose(mn_logpdf(A, M, np.diag(q), np.diag(v)), ref)

    def test_matches_vec_gaussian(self):
        rng = np.random.default_rng(3)
        B = rng.standard_normal((2, 2))
        Q = B @ B.T + np.eye(2)
        C = rng.standard_normal((3, 3))
        V = C @ C.T + np.eye(3)
        A, M = rng.standard_normal((2, 2, 3))
        # vec (column-major) of A has covariance V^{-1} kron Q
        cov = np.kron(np.linalg.inv(V), Q)
        ref = stats.multivariate_normal(M.ravel(order="F"), cov).logpdf(A.ravel(order="F"))
        assert_allclose(mn_logpdf(A, M, Q, V), ref)

    def test_sampler_moments_small(self):
        rng = np.random.default_rng(4)
        M = np.array([[1.0, -2.0]])
        Q = np.array([[0.5]])
        V = np.array([[2.0, 0.5], [0.5, 1.0]])
        draws = np.stack([sample_mn(M, Q, V, rng) for _ in range(20_000)])
        cov = np.cov(draws.reshape(len(draws), -1).T)
        assert_allclose(draws.mean(axis=0), M, atol=0.03)
        assert_allclose(cov, 0.5 * np.linalg.inv(V), atol=0.03)

    def test_small_row_covariance_collapses_to_mean(self):
        rng = np.random.default_rng(5)
        M = np.array([[1.0, 2.0]])
        draw = sample_mn(M, 1e-12 * np.eye(1), np.eye(2), rng)
        assert_allclose(draw, M, atol=1e-4)

    def test_importance_identity(self):
        """E_q[p/q] = 1 with q a wider matrix normal."""
        rng = np.random.default_rng(6)
        M = np.array([[0.3, -0.2]])
        Q = np.array([[0.8]])
        V = np.array([[1.5, 0.2], [0.2, 0.7]])
        n = 20_000
        draws = [sample_mn(M, 2 * Q, V, rng) for _ in range(n)]
        lw = np.array([mn_logpdf(a, M, Q, V) - mn_logpdf(a, M, 2 * Q, V) for a in draws])
        w = np.exp(lw)
        assert abs(w.mean() - 1) < 3 * w.std() / np.sqrt(n)


class TestInverseWishart:
    def test_scalar_is_inverse_gamma(self):
        for ell, lam, q in [(3.0, 1.0, 1.0), (10.0, 2.5, 0.3), (5.5, 0.1, 4.0)]:
            ref = stats.invgamma.logpdf(q, ell / 2, scale=lam / 2)
            assert_allclose(iw_logpdf([[q]], ell, [[lam]]), ref, rtol=1e-12)

    def test_matches_scipy_invwishart(self):
        rng = np.random.default_rng(7)
        B = rng.standard_normal((3, 3))
        lam = B @ B.T + np.eye(3)
        Q = stats.invwishart(df=7, scale=lam).rvs(random_state=rng)
        assert_allclose(iw_logpdf(Q, 7, lam), stats.invwishart(df=7, scale=lam).logpdf(Q))

    @pytest.mark.parametrize("ell, lam", [(3.0, 1.0), (10.0, 1.0), (4.5, 0.3)])
    def test_integrates_to_one(self, ell, lam):
        val, _ = integrate.quad(lambda q: np.exp(iw_logpdf([[q]], ell, [[lam]])), 0, np.inf, limit=200)
        assert abs(val - 1) < 1e-4

    @pytest.mark.parametrize("ell, lam", [(3.0, 1.0), (10.0, 2.0)])
    def test_mode(self, ell, lam):
        mode = lam / (ell + 2)
        eps = 1e-5 * mode
        f = lambda q: iw_logpdf([[q]], ell, [[lam]])  # noqa: E731
        assert f(mode) > f(mode + eps) and f(mode) > f(mode - eps)

    def test_invalid_dof(self):
        with pytest.raises(ValueError):
            iw_logpdf(np.eye(2), 0.5, np.eye(2))

    def test_scalar_sampler_matches_chi_square_reduction(self):
        ell, lam = 6.0, 2.0
        a = np.array([sample_iw(ell, [[lam]], np.random.default_rng(11))[0, 0] for _ in range(1)])
        draws = np.array([sample_iw(ell, [[lam]], np.random.default_rng(s))[0, 0] for s in range(4000)])
        ks = stats.kstest(draws, stats.invgamma(ell / 2, scale=lam / 2).cdf)
        assert ks.pvalue > 1e-3
        assert np.isfinite(a).all()

    def test_draws_spd_and_mean(self):
        rng = np.random.default_rng(12)
        lam = np.array([[2.0, 0.3], [0.3, 1.0]])
        ell = 9.0
        draws = np.stack([sample_iw(ell, lam, rng) for _ in range(20_000)])
        assert np.all(np.linalg.eigvalsh(draws) > 0)
        assert_allclose(draws.mean(axis=0), lam / (ell - 3), atol=0.02)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0), st.floats(2.5, 30.0))
def test_iw_scale_covariance(q, lam, ell):
    """log IW(cQ | l, c Lam) = log IW(Q | l, Lam) - n(n+1)/2 log c (change of variables)."""
    c = 3.0
    lhs = iw_logpdf([[c * q]], ell, [[c * lam]])
    rhs = iw_logpdf([[q]], ell, [[lam]]) - np.log(c)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)
