"""
Samplers and log-densities for the matrix distributions used by the model:
Wishart (Bartlett construction), singular rank-``b`` Wishart, the singular
multivariate beta, the matrix-variate normal and the multivariate Student t.

Every sampler takes an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from uwar.matrix_core import choleski_upper, pd_inverse, pd_logdet, symmetrize

__all__ = [
    "WishartParams",
    "SingularBetaParams",
    "MatrixNormalParams",
    "StudentTParams",
    "bartlett_factor",
    "sample_wishart",
    "sample_singular_wishart_rank_b",
    "sample_singular_beta",
    "singular_beta_positive_eigenvalue",
    "singular_beta_logpdf",
    "singular_beta_mean",
    "singular_beta_inverse_mean",
    "expected_log_det_beta",
    "sample_matrix_normal",
    "student_t_logpdf",
    "log_multigamma",
    "inv_wishart_mean_mode",
]


@dataclass(frozen=True)
class WishartParams:
    df: float
    scale: np.ndarray


@dataclass(frozen=True)
class SingularBetaParams:
    """``B_p(a/2, b/2)``; stored as the half-parameters."""

    a_half: float
    b_half: float
    dim: int

    @property
    def a(self) -> float:
        return 2.0 * self.a_half

    @property
    def b(self) -> int:
        return int(round(2.0 * self.b_half))


@dataclass(frozen=True)
class MatrixNormalParams:
    mean: np.ndarray
    left_cov: np.ndarray
    right_cov: np.ndarray


@dataclass(frozen=True)
class StudentTParams:
    df: float
    location: np.ndarray
    spread: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        """``df / (df - 2) * spread``; only defined for ``df > 2``."""
        if self.df <= 2:
            raise ValueError(f"predictive covariance undefined for df={self.df} <= 2")
        return self.df / (self.df - 2.0) * np.asarray(self.spread)


def bartlett_factor(rng: np.random.Generator, df: float, p: int) -> np.ndarray:
    """Lower triangular ``T`` with ``T T' ~ W_p(df, I)``."""
    if df <= p - 1:
        raise ValueError(f"Wishart df must exceed p-1={p - 1}, got {df}")
    t = np.zeros((p, p))
    t[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    rows, cols = np.tril_indices(p, -1)
    t[rows, cols] = rng.standard_normal(rows.size)
    return t


def sample_wishart(rng: np.random.Generator, params: WishartParams) -> np.ndarray:
    scale = np.atleast_2d(np.asarray(params.scale, dtype=float))
    p = scale.shape[0]
    lower = choleski_upper(scale).T
    t = bartlett_factor(rng, params.df, p)
    m = lower @ t
    return symmetrize(m @ m.T)


def sample_singular_wishart_rank_b(rng: np.random.Generator, b: int, p: int) -> np.ndarray:
    """``Y = sum_i z_i z_i'`` for ``b`` independent standard normal ``p``-vectors."""
    if not 1 <= b <= p - 1:
        raise ValueError(f"singular Wishart needs 1 <= b <= p-1, got b={b}, p={p}")
    z = rng.standard_normal((p, b))
    return z @ z.T


def _beta_from_draws(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # B = U'^{-1} X U^{-1} with U'U = X + Y, so that I - B = U'^{-1} Y U^{-1}
    u = choleski_upper(x + y)
    u_inv = np.linalg.inv(u)
    return symmetrize(u_inv.T @ x @ u_inv)


def sample_singular_beta(rng: np.random.Generator, params: SingularBetaParams) -> np.ndarray:
    """
    Draw ``B ~ B_p(a/2, b/2)``.

    ``X ~ W_p(a, I)`` and ``Y ~ W_p(b, I)`` (rank ``b``) are independent and
    ``U`` is the upper Choleski factor of ``X + Y``.  The returned matrix is
    ``U'^{-1} X U^{-1}``: symmetric, eigenvalues in ``(0, 1)``, ``I - B`` of
    rank ``b`` and ``E(B) = a / (a + b) I``.
    """
    p, a, b = params.dim, params.a, params.b
    if a <= p - 1:
        raise ValueError(f"singular beta needs a > p-1, got a={a}, p={p}")
    t = bartlett_factor(rng, a, p)
    x = t @ t.T
    y = sample_singular_wishart_rank_b(rng, b, p)
    return _beta_from_draws(x, y)


def singular_beta_positive_eigenvalue(b_mat, rank_tol: float = 1e-8) -> float:
    """
    The single positive eigenvalue ``xi`` of ``I - B`` for a rank-one shock.

    Computed as ``p - trace(B)`` and cross-checked against the eigenvalues of
    ``I - B``.  Raises ``ValueError`` if ``I - B`` is not rank one.
    """
    bm = np.atleast_2d(np.asarray(b_mat, dtype=float))
    p = bm.shape[0]
    xi = float(p - np.trace(bm))
    eig = np.sort(np.linalg.eigvalsh(np.eye(p) - symmetrize(bm)))[::-1]
    if xi <= rank_tol or eig[0] <= rank_tol:
        raise ValueError(f"degenerate beta draw: I - B has no positive eigenvalue (xi={xi:.3g})")
    if p > 1 and abs(eig[1]) > rank_tol * max(1.0, eig[0]):
        raise ValueError(f"I - B is not rank one: second eigenvalue {eig[1]:.3g}")
    if abs(eig[0] - xi) > 1e-8 * max(1.0, xi):
        raise ValueError(f"trace and eigenvalue disagree: {xi} vs {eig[0]}")
    return xi


def singular_beta_logpdf(b_mat, a: float) -> float:
    """
    Log-density of ``B_p(a/2, 1/2)`` on the Stiefel manifold (``b = 1``).

    ``log f = -(p + 1)/2 log(pi) + log G_p((a+1)/2) - log G(1/2) - log G_p(a/2)
    + (a-p-1)/2 log|B| - p/2 log(xi)``.
    """
    bm = np.atleast_2d(np.asarray(b_mat, dtype=float))
    p = bm.shape[0]
    xi = singular_beta_positive_eigenvalue(bm)
    const = (
        -(p + 1) / 2.0 * np.log(np.pi)
        + log_multigamma(p, (a + 1) / 2.0)
        - gammaln(0.5)
        - log_multigamma(p, a / 2.0)
    )
    return float(const + (a - p - 1) / 2.0 * pd_logdet(bm) - p / 2.0 * np.log(xi))


def singular_beta_mean(a: float, b: float) -> float:
    """Scalar ``a / (a + b)`` with ``E(B) = a / (a + b) I``."""
    return a / (a + b)


def singular_beta_inverse_mean(a: float, b: float, p: int) -> float:
    """Scalar with ``E(B^{-1}) = (a + b - p - 1) / (a - p - 1) I``; needs ``a > p + 1``."""
    if a <= p + 1:
        raise ValueError(f"E(B^-1) needs a > p+1, got a={a}, p={p}")
    return (a + b - p - 1) / (a - p - 1)


def expected_log_det_beta(a: float, b: float, p: int) -> float:
    """``E log|B| = E log|X| - E log|X + Y|`` by the Wishart log-determinant moments."""
    i = np.arange(p)
    return float(np.sum(digamma((a - i) / 2.0) - digamma((a + b - i) / 2.0)))


def sample_matrix_normal(rng: np.random.Generator, params: MatrixNormalParams) -> np.ndarray:
    """Draw ``A`` with ``vec(A) ~ N(vec(M), W kron V)``."""
    m = np.atleast_2d(np.asarray(params.mean, dtype=float))
    lv = choleski_upper(params.left_cov).T
    lw = choleski_upper(params.right_cov).T
    z = rng.standard_normal(m.shape)
    return m + lv @ z @ lw.T


def student_t_logpdf(y, params: StudentTParams) -> float:
    """
    Multivariate Student t log-density.

    ``log c(nu, p) - 1/2 log|S| - (nu + p)/2 log(1 + (y - mu)' S^{-1} (y - mu) / nu)``
    with ``c(nu, p) = G((nu + p)/2) / (G(nu/2) (nu pi)^{p/2})``.
    """
    nu = float(params.df)
    if nu <= 0:
        raise ValueError("Student t df must be positive")
    e = np.atleast_1d(np.asarray(y, dtype=float)) - np.atleast_1d(params.location)
    s = np.atleast_2d(params.spread)
    p = e.size
    u = choleski_upper(s)
    z = np.linalg.solve(u.T, e)
    quad = float(z @ z)
    logdet = 2.0 * np.sum(np.log(np.diag(u)))
    logc = gammaln((nu + p) / 2.0) - gammaln(nu / 2.0) - p / 2.0 * np.log(nu * np.pi)
    return float(logc - 0.5 * logdet - (nu + p) / 2.0 * np.log1p(quad / nu))


def log_multigamma(p: int, x: float) -> float:
    if x <= (p - 1) / 2.0:
        raise ValueError(f"log_multigamma needs x > (p-1)/2, got x={x}, p={p}")
    j = np.arange(1, p + 1)
    return float(p * (p - 1) / 4.0 * np.log(np.pi) + np.sum(gammaln(x + (1 - j) / 2.0)))


def inv_wishart_mean_mode(params: WishartParams):
    """
    Mean and mode of ``Sigma = Phi^{-1}`` when ``Phi ~ W_p(df, F)``.

    Returns ``(mean, mode)``; ``mean`` is ``None`` when ``df <= p + 1``.
    """
    f = np.atleast_2d(np.asarray(params.scale, dtype=float))
    p = f.shape[0]
    f_inv = pd_inverse(f)
    mode = f_inv / (params.df + p + 1)
    mean = f_inv / (params.df - p - 1) if params.df > p + 1 else None
    return mean, mode
