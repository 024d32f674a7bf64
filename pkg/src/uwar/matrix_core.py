"""
Dense matrix kernels: upper Choleski factors, vec/Kronecker machinery,
the vec-permutation matrix and positive-definite helpers.

The Choleski convention throughout the package is ``S = U'U`` with ``U``
upper triangular.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NotPositiveDefiniteError",
    "symmetrize",
    "check_symmetric",
    "choleski_upper",
    "vec",
    "unvec",
    "kron",
    "vec_permutation",
    "frobenius_distance",
    "pd_inverse",
    "pd_logdet",
]

SYMMETRY_RTOL = 1e-10


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix that must be positive definite is not."""


def _as_square(x, name="matrix") -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def symmetrize(s) -> np.ndarray:
    a = np.asarray(s, dtype=float)
    return 0.5 * (a + a.T)


def check_symmetric(s, rtol: float = SYMMETRY_RTOL) -> bool:
    """True when ``max|S_ij - S_ji| <= rtol * max|S|``."""
    a = _as_square(s)
    scale = np.max(np.abs(a))
    if scale == 0.0:
        return True
    return bool(np.max(np.abs(a - a.T)) <= rtol * scale)


def choleski_upper(s) -> np.ndarray:
    """
    Upper triangular Choleski factor.

    Parameters
    ----------
    s : array_like
        Symmetric positive definite matrix.  It is symmetrized before
        factorization.

    Returns
    -------
    ndarray
        ``U`` upper triangular with positive diagonal such that ``U'U = S``.

    Raises
    ------
    NotPositiveDefiniteError
        If the factorization fails.
    """
    a = symmetrize(_as_square(s))
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc
    return lower.T.copy()


def vec(x) -> np.ndarray:
    """Column-stacking operator."""
    return np.asarray(x, dtype=float).reshape(-1, order="F")


def unvec(v, p: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if p is None:
        p = int(round(np.sqrt(v.size)))
    if p * p != v.size:
        raise ValueError(f"cannot reshape vector of length {v.size} to square")
    return v.reshape(p, p, order="F")


def kron(a, b) -> np.ndarray:
    # vec(A X B') = (B kron A) vec(X)
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def vec_permutation(p: int) -> np.ndarray:
    """The ``p^2 x p^2`` matrix ``K_p`` with ``vec(X') = K_p vec(X)``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    idx = np.arange(p * p).reshape(p, p, order="F")
    perm = idx.T.reshape(-1, order="F")
    k = np.zeros((p * p, p * p))
    k[np.arange(p * p), perm] = 1.0
    return k


def frobenius_distance(x, y) -> float:
    a = np.asarray(x, dtype=float)
    b = np.asarray(y, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def pd_inverse(s) -> np.ndarray:
    """Inverse of a positive definite matrix through its Choleski factor."""
    u = choleski_upper(s)
    u_inv = np.linalg.inv(u)
    return symmetrize(u_inv @ u_inv.T)


def pd_logdet(s) -> float:
    u = choleski_upper(s)
    return float(2.0 * np.sum(np.log(np.diag(u))))
