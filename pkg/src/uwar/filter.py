"""
Conjugate Bayesian filter for the precision process given the AR matrix.

Given ``Phi_{t-1} | D_{t-1} ~ W_p(n + p - 1, F_{t-1})`` the prior is
``Phi_t | D_{t-1} ~ W_p(delta n + p - 1, k A F_{t-1} A' + Lambda_t)``, the
posterior is ``W_p(n + p - 1, F_t)`` with ``F_t = (R_t^{-1} + e_t e_t')^{-1}``
and the one-step forecast is Student t with ``delta n`` degrees of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from uwar import kernels
from uwar.distributions import StudentTParams, inv_wishart_mean_mode, WishartParams
from uwar.matrix_core import (
    NotPositiveDefiniteError,
    choleski_upper,
    pd_inverse,
    symmetrize,
)

__all__ = [
    "Hyperparams",
    "make_hyperparams",
    "FilterState",
    "PriorState",
    "LambdaPolicy",
    "ReturnSeries",
    "RunOutput",
    "init_state",
    "predict",
    "update",
    "forecast",
    "volatility_ar_matrix",
    "companion_embed",
    "filter_run",
    "check_nonsingular",
]


@dataclass(frozen=True)
class Hyperparams:
    delta: float
    p: int
    n: float
    a: float
    b: int
    k: float
    c: float

    @property
    def prior_df(self) -> float:
        """``delta n + p - 1``"""
        return self.delta * self.n + self.p - 1

    @property
    def post_df(self) -> float:
        """``n + p - 1``"""
        return self.n + self.p - 1

    @property
    def forecast_df(self) -> float:
        return self.delta * self.n

    @property
    def s(self) -> float:
        """Exponent ``delta n + p`` of the one-step predictive kernel."""
        return self.delta * self.n + self.p

    @property
    def k_alt(self) -> float:
        d, p = self.delta, self.p
        return (d * (1 - p) + p) / (d * (2 - p) + p - 1)


def make_hyperparams(delta: float, p: int) -> Hyperparams:
    """
    Model constants for discount factor ``delta`` and dimension ``p``.

    ``delta`` must lie in ``(2/3, 1)``: the volatility AR constant ``c``
    needs ``E(B^{-1})``, which exists only for ``a > p + 1``.
    """
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise ValueError(f"p must be a positive integer, got {p!r}")
    if not 2.0 / 3.0 < delta < 1.0:
        raise ValueError(
            f"delta={delta} outside (2/3, 1): E(B^-1) and the volatility AR "
            "constant exist only for a > p + 1, i.e. delta > 2/3"
        )
    n = 1.0 / (1.0 - delta)
    dn = delta * n
    a = dn + p - 1
    k = (n + p - 1) / (dn + p - 1)
    c = (dn - 1.0) / (k * (dn - 2.0))
    hp = Hyperparams(delta=float(delta), p=int(p), n=n, a=a, b=1, k=k, c=c)
    if abs(hp.k_alt - k) > 1e-12 * max(1.0, k):
        raise ArithmeticError(f"k closed forms disagree: {k} vs {hp.k_alt}")
    return hp


@dataclass(frozen=True)
class FilterState:
    t: int
    F: np.ndarray
    df: float


@dataclass(frozen=True)
class PriorState:
    t: int
    R: np.ndarray
    df: float


@dataclass(frozen=True)
class LambdaPolicy:
    """Additive scale term: ``"zero"`` or a fixed sequence of PSD matrices."""

    mode: str = "zero"
    matrices: np.ndarray | None = None

    @classmethod
    def zero(cls) -> "LambdaPolicy":
        return cls("zero", None)

    @classmethod
    def fixed(cls, matrices) -> "LambdaPolicy":
        m = np.asarray(matrices, dtype=float)
        if m.ndim == 2:
            m = m[None]
        for lam in m:
            if np.max(np.abs(lam - lam.T)) > 1e-10 * max(1.0, np.max(np.abs(lam))):
                raise ValueError("Lambda matrices must be symmetric")
            if np.min(np.linalg.eigvalsh(symmetrize(lam))) < -1e-10 * max(1.0, np.max(np.abs(lam))):
                raise ValueError("Lambda matrices must be positive semi-definite")
        return cls("fixed", m)

    def at(self, t: int, p: int) -> np.ndarray:
        if self.mode == "zero":
            return np.zeros((p, p))
        m = self.matrices
        return m[t] if m.shape[0] > 1 else m[0]

    def sequence(self, n: int, p: int) -> np.ndarray:
        if self.mode == "zero":
            return np.zeros((n, p, p))
        m = self.matrices
        if m.shape[0] == 1:
            return np.broadcast_to(m[0], (n, p, p)).copy()
        if m.shape[0] < n:
            raise ValueError(f"Lambda sequence has {m.shape[0]} entries, need {n}")
        return np.ascontiguousarray(m[:n])


@dataclass
class ReturnSeries:
    """Analysis returns plus the pre-sample mean and covariance."""

    values: np.ndarray
    mu_hat: np.ndarray
    sigma0_hat: np.ndarray
    dates: list = field(default_factory=list)
    return_kind: str = "log"

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.mu_hat = np.atleast_1d(np.asarray(self.mu_hat, dtype=float))
        self.sigma0_hat = np.atleast_2d(np.asarray(self.sigma0_hat, dtype=float))
        if not self.dates:
            self.dates = [str(i + 1) for i in range(self.values.shape[0])]
        if len(self.dates) != self.values.shape[0]:
            raise ValueError("dates and values have different lengths")

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass
class RunOutput:
    """Per-step filter output. Arrays are indexed by step ``t = 1..N``."""

    hp: Hyperparams
    dates: list
    A_path: np.ndarray
    R: np.ndarray
    F: np.ndarray
    forecast_df: float
    forecast_spread: np.ndarray
    forecast_cov: np.ndarray
    predicted_sigma_mode: np.ndarray
    sigma_mean: np.ndarray
    sigma_mode: np.ndarray
    log_pred: np.ndarray
    resid: np.ndarray
    mu: np.ndarray
    lam: np.ndarray

    @property
    def log_likelihood(self) -> float:
        return float(np.sum(self.log_pred))

    @property
    def n_steps(self) -> int:
        return self.R.shape[0]

    def prior_state(self, t: int) -> PriorState:
        return PriorState(t=t, R=self.R[t - 1], df=self.hp.prior_df)

    def filter_state(self, t: int) -> FilterState:
        return FilterState(t=t, F=self.F[t], df=self.hp.post_df)

    def forecast_at(self, t: int) -> StudentTParams:
        return StudentTParams(self.forecast_df, self.mu, self.forecast_spread[t - 1])


def check_nonsingular(a, tol: float = 1e-12) -> np.ndarray:
    """Reject ``A`` with ``|det A| < tol * ||A||_F^p``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    p = a.shape[0]
    norm = np.linalg.norm(a)
    if norm == 0.0 or abs(np.linalg.det(a)) < tol * norm**p:
        raise np.linalg.LinAlgError("AR matrix A is singular")
    return a


def init_state(sigma0_hat, hp: Hyperparams) -> FilterState:
    """``F_0 = sigma0_hat^{-1} / (n + p - 1)`` so that ``E(Phi_0) = sigma0_hat^{-1}``."""
    f0 = pd_inverse(sigma0_hat) / hp.post_df
    return FilterState(t=0, F=f0, df=hp.post_df)


def predict(state: FilterState, a, lambda_t, hp: Hyperparams) -> PriorState:
    a = check_nonsingular(a)
    lam = np.zeros_like(state.F) if lambda_t is None else np.asarray(lambda_t, dtype=float)
    r = symmetrize(hp.k * a @ state.F @ a.T + lam)
    choleski_upper(r)
    return PriorState(t=state.t + 1, R=r, df=hp.prior_df)


def update(prior: PriorState, e_t, hp: Hyperparams) -> FilterState:
    e = np.atleast_1d(np.asarray(e_t, dtype=float))
    re = prior.R @ e
    denom = 1.0 + float(e @ re)
    if not np.isfinite(denom) or denom <= 0.0:
        raise FloatingPointError(f"degenerate update at t={prior.t}: 1 + e'Re = {denom}")
    f = symmetrize(prior.R - np.outer(re, re) / denom)
    return FilterState(t=prior.t, F=f, df=hp.post_df)


def forecast(prior: PriorState, mu, hp: Hyperparams) -> StudentTParams:
    """One-step Student t forecast with ``delta n`` df and spread ``(delta n)^{-1} R^{-1}``."""
    nu = hp.forecast_df
    return StudentTParams(df=nu, location=np.atleast_1d(np.asarray(mu, dtype=float)),
                          spread=pd_inverse(prior.R) / nu)


def volatility_ar_matrix(a, hp: Hyperparams) -> np.ndarray:
    """``C = c^{1/2} (A')^{-1}`` with ``E(Sigma_t | Sigma_{t-1}) = C Sigma_{t-1} C'``."""
    a = check_nonsingular(a)
    return np.sqrt(hp.c) * np.linalg.inv(a.T)


def companion_embed(a_list: Sequence[np.ndarray]):
    """
    Stack ``A_1..A_d`` into the ``dp x dp`` companion matrix.

    Returns ``(A_big, J)`` where ``J = [I_p, 0, ..., 0]`` selects the leading block.
    """
    mats = [np.atleast_2d(np.asarray(m, dtype=float)) for m in a_list]
    if not mats:
        raise ValueError("need at least one AR matrix")
    p = mats[0].shape[0]
    if any(m.shape != (p, p) for m in mats):
        raise ValueError("AR blocks must all be p x p")
    d = len(mats)
    big = np.zeros((d * p, d * p))
    for j, m in enumerate(mats):
        big[:p, j * p:(j + 1) * p] = m
    for j in range(1, d):
        big[j * p:(j + 1) * p, (j - 1) * p:j * p] = np.eye(p)
    sel = np.zeros((p, d * p))
    sel[:, :p] = np.eye(p)
    return big, sel


def t_logpdf_from_scale(logdet_r, quad, hp: Hyperparams):
    """Predictive log-density in terms of ``log|R|`` and ``e'Re``; the ``delta n`` powers cancel."""
    nu, p = hp.forecast_df, hp.p
    const = gammaln((nu + p) / 2.0) - gammaln(nu / 2.0) - p / 2.0 * np.log(np.pi)
    return const + 0.5 * np.asarray(logdet_r) - (nu + p) / 2.0 * np.log1p(np.asarray(quad))


def _a_path(a, n: int, p: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        check_nonsingular(a)
        return np.ascontiguousarray(np.broadcast_to(a, (n, p, p)))
    if a.shape != (n, p, p):
        raise ValueError(f"A path must have shape {(n, p, p)}, got {a.shape}")
    return np.ascontiguousarray(a)


def filter_run(series: ReturnSeries, a, hp: Hyperparams, lam: LambdaPolicy | None = None,
               f0=None) -> RunOutput:
    """
    Run the filter over ``series`` with a fixed ``A`` (``p x p``) or a path
    of ``A`` matrices (``N x p x p``).

    ``f0`` defaults to :func:`init_state` applied to ``series.sigma0_hat``.
    """
    lam = lam or LambdaPolicy.zero()
    n, p = series.n_obs, series.p
    if p != hp.p:
        raise ValueError(f"series dimension {p} does not match hyperparameters p={hp.p}")
    if f0 is None:
        f0 = init_state(series.sigma0_hat, hp).F
    a_path = _a_path(a, n, p)
    lam_seq = lam.sequence(n, p)
    resid = np.ascontiguousarray(series.values - series.mu_hat)
    r, f, logdet_r, quad, status, step = kernels.filter_loop(
        resid, a_path, lam_seq, np.ascontiguousarray(f0, dtype=float), hp.k
    )
    if status != kernels.OK:
        what = "prior scale lost positive definiteness" if status == kernels.NOT_PD else "1 + e'Re degenerate"
        raise NotPositiveDefiniteError(f"filter aborted at step {step + 1}: {what}")
    return _assemble(series, hp, a_path, r, f, logdet_r, quad, resid, lam_seq)


def _assemble(series, hp, a_path, r, f, logdet_r, quad, resid, lam_seq) -> RunOutput:
    n, p = r.shape[0], hp.p
    nu = hp.forecast_df
    r_inv = np.linalg.inv(r) if n else np.zeros((0, p, p))
    r_inv = 0.5 * (r_inv + np.swapaxes(r_inv, 1, 2))
    spread = r_inv / nu
    cov = nu / (nu - 2.0) * spread
    pred_mode = r_inv / (hp.prior_df + p + 1)
    f_post = f[1:]
    f_inv = np.linalg.inv(f_post) if n else np.zeros((0, p, p))
    f_inv = 0.5 * (f_inv + np.swapaxes(f_inv, 1, 2))
    sig_mean = f_inv / (hp.post_df - p - 1) if hp.post_df > p + 1 else np.full_like(f_inv, np.nan)
    sig_mode = f_inv / (hp.post_df + p + 1)
    return RunOutput(
        hp=hp,
        dates=list(series.dates),
        A_path=a_path,
        R=r,
        F=f,
        forecast_df=nu,
        forecast_spread=spread,
        forecast_cov=cov,
        predicted_sigma_mode=pred_mode,
        sigma_mean=sig_mean,
        sigma_mode=sig_mode,
        log_pred=t_logpdf_from_scale(logdet_r, quad, hp),
        resid=resid,
        mu=series.mu_hat.copy(),
        lam=lam_seq,
    )


def posterior_sigma(state: FilterState):
    """Mean and mode of ``Sigma_t | D_t`` from the posterior Wishart."""
    return inv_wishart_mean_mode(WishartParams(state.df, state.F))
