"""Matrix-normal / inverse-Wishart densities and samplers.

Conventions used throughout the package:

* ``MN(A | M, Q, V)`` has mean ``M`` (n x m), row covariance ``Q`` (n x n)
  and column *precision* ``V`` (m x m), so ``cov(vec A) = V^-1 kron Q``.
* ``IW(Q | ell, Lambda)`` has density proportional to
  ``|Q|^-(ell+n+1)/2 exp(-tr(Q^-1 Lambda)/2)``.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import multigammaln

__all__ = [
    "robust_cholesky",
    "mvn_logpdf",
    "mn_logpdf",
    "iw_logpdf",
    "sample_mn",
    "sample_iw",
]

_LOG_2PI = np.log(2.0 * np.pi)


def robust_cholesky(a, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, retrying with diagonal jitter.

    Jitter starts at ``1e-9 * mean(diag)`` and grows by 10x up to
    ``1e-3 * mean(diag)``; past that the matrix is reported as not SPD.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{what} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise np.linalg.LinAlgError(f"{what} has non-finite entries")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    scale = max(float(np.trace(a)) / a.shape[0], np.finfo(float).tiny)
    jitter = 1e-9 * scale
    eye = np.eye(a.shape[0])
    while jitter <= 1e-3 * scale * (1 + 1e-12):
        try:
            return np.linalg.cholesky(a + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError(f"{what} is not symmetric positive definite")


def _logdet_from_chol(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def mvn_logpdf(x, mean, cov=None, *, chol=None) -> np.ndarray:
    """Gaussian log-density, batched over leading axes of ``x - mean``."""
    if chol is None:
        chol = robust_cholesky(cov, "covariance")
    r = np.asarray(x, dtype=float) - np.asarray(mean, dtype=float)
    n = chol.shape[0]
    r2 = r.reshape(-1, n)
    z = solve_triangular(chol, r2.T, lower=True)
    quad = np.sum(z * z, axis=0)
    out = -0.5 * (quad + n * _LOG_2PI + _logdet_from_chol(chol))
    return out.reshape(r.shape[:-1]) if r.ndim > 1 else out[0]


def mn_logpdf(A, M, Q, V) -> float:
    """Log matrix-normal density with row covariance ``Q`` and column precision ``V``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    n, m = A.shape
    if M.shape != (n, m) or Q.shape != (n, n) or V.shape != (m, m):
        raise ValueError(
            f"inconsistent shapes A{A.shape} M{M.shape} Q{Q.shape} V{V.shape}"
        )
    LQ = robust_cholesky(Q, "row covariance Q")
    LV = robust_cholesky(V, "column precision V")
    D = A - M
    # tr(D^T Q^-1 D V) = ||LQ^-1 D LV||_F^2
    W = solve_triangular(LQ, D, lower=True, check_finite=False) @ LV
    with np.errstate(over="ignore"):
        # an overflowing quadratic form is a zero density
        quad = np.sum(W * W)
    return float(
        0.5 * n * _logdet_from_chol(LV)
        - 0.5 * n * m * _LOG_2PI
        - 0.5 * m * _logdet_from_chol(LQ)
        - 0.5 * quad
    )


def iw_logpdf(Q, ell: float, Lambda) -> float:
    """Log inverse-Wishart density with ``ell`` degrees of freedom and scale ``Lambda``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    n = Q.shape[0]
    if Q.shape != (n, n) or Lambda.shape != (n, n):
        raise ValueError(f"inconsistent shapes Q{Q.shape} Lambda{Lambda.shape}")
    if not ell > n - 1:
        raise ValueError(f"degrees of freedom must exceed {n - 1}, got {ell}")
    LQ = robust_cholesky(Q, "Q")
    LL = robust_cholesky(Lambda, "scale matrix Lambda")
    # tr(Q^-1 Lambda) = ||LQ^-1 LL||_F^2
    W = solve_triangular(LQ, LL, lower=True, check_finite=False)
    return float(
        0.5 * ell * _logdet_from_chol(LL)
        - 0.5 * (n + ell + 1) * _logdet_from_chol(LQ)
        - 0.5 * ell * n * np.log(2.0)
        - multigammaln(0.5 * ell, n)
        - 0.5 * np.sum(W * W)
    )


def sample_mn(M, Q, V, rng: np.random.Generator) -> np.ndarray:
    """Draw from ``MN(M, Q, V)`` where ``V`` is the column precision.

    ``A = M + chol(Q) X B^T`` with ``X`` standard normal and ``B B^T = V^-1``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n, m = M.shape
    LQ = robust_cholesky(Q, "row covariance Q")
    LV = robust_cholesky(V, "column precision V")
    X = rng.standard_normal((n, m))
    # B = LV^-T, so X B^T = X LV^-1
    return M + solve_triangular(LV, (LQ @ X).T, lower=True, trans="T").T


def sample_iw(ell: float, Lambda, rng: np.random.Generator) -> np.ndarray:
    """Draw from ``IW(ell, Lambda)`` through the Bartlett decomposition of its inverse."""
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    n = Lambda.shape[0]
    if not ell > n - 1:
        raise ValueError(f"degrees of freedom must exceed {n - 1}, got {ell}")
    LL = robust_cholesky(Lambda, "scale matrix Lambda")
    # Wishart(ell, Lambda^-1) factor: G = chol(Lambda^-1) B
    Linv = solve_triangular(LL, np.eye(n), lower=True)
    S = Linv.T @ Linv
    LS = np.linalg.cholesky(0.5 * (S + S.T))
    B = np.zeros((n, n))
    B[np.diag_indices(n)] = np.sqrt(rng.chisquare(ell - np.arange(n)))
    rows, cols = np.tril_indices(n, -1)
    B[rows, cols] = rng.standard_normal(rows.size)
    G = LS @ B
    Ginv = solve_triangular(G, np.eye(n), lower=True)
    Q = Ginv.T @ Ginv
    return 0.5 * (Q + Q.T)


def spd_solve(a, b, what: str = "matrix") -> np.ndarray:
    """Solve ``a x = b`` for SPD ``a``."""
    L = robust_cholesky(a, what)
    return cho_solve((L, True), b)
