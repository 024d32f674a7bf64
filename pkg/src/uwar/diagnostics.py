"""
Model comparison criteria: the log posterior of the volatility path,
sequential and average Bayes factors, and the minimum time-averaged
portfolio risk with two Sharpe ratio variants.

Everything here is a pure function of recorded filter output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from uwar.distributions import StudentTParams, student_t_logpdf
from uwar.filter import Hyperparams, RunOutput
from uwar.matrix_core import choleski_upper, pd_inverse, pd_logdet, symmetrize

logger = logging.getLogger(__name__)

__all__ = [
    "PRIOR_TRACE",
    "LogPosterior",
    "PortfolioConfig",
    "PortfolioResult",
    "DiagnosticTrace",
    "reconstruct_beta",
    "log_posterior_path",
    "log_posterior_from_run",
    "bayes_factor_step",
    "bayes_factor_path",
    "average_bayes_factor",
    "portfolio_weights",
    "portfolio_run",
    "diagnose",
]


@dataclass
class LogPosterior:
    """
    Value of the log posterior and its pieces.

    ``degenerate_steps`` lists the (1-based) steps whose reconstructed
    ``xi_t`` is not positive; the ``log xi`` term of those steps is left out
    of ``value`` and ``value`` is ``nan`` if any step is degenerate.
    """

    value: float
    terms: dict
    xi: np.ndarray
    degenerate_steps: list = field(default_factory=list)


@dataclass(frozen=True)
class PortfolioConfig:
    m: float
    mu: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if not np.any(mu != 0.0):
            raise ValueError("expected return vector mu must be non-zero")
        object.__setattr__(self, "mu", mu)


@dataclass
class PortfolioResult:
    weights: np.ndarray
    risk_path: np.ndarray
    avg_risk: float
    realized_returns: np.ndarray
    sharpe: float
    conditional_sharpe: float


@dataclass
class DiagnosticTrace:
    lp: float
    bf_path: np.ndarray
    avg_bf: float
    risk_path: np.ndarray
    avg_risk: float
    sharpe: float
    conditional_sharpe: float
    realized_returns: np.ndarray


def reconstruct_beta(phi_prev, phi_cur, a, lam, k: float) -> np.ndarray:
    """
    ``B_t = k^{-1} U(Phi_{t-1})'^{-1} A^{-1} (Phi_t - Lambda_t) A'^{-1} U(Phi_{t-1})^{-1}``.

    Inverts ``Phi_t = k A U' B U A' + Lambda_t`` for ``B``.
    """
    u = choleski_upper(phi_prev)
    a_inv = np.linalg.inv(np.asarray(a, dtype=float))
    left = np.linalg.solve(u.T, a_inv)  # U'^{-1} A^{-1}
    return symmetrize(left @ (np.asarray(phi_cur) - lam) @ left.T / k)


PRIOR_TRACE = ("face", "wishart")


def log_posterior_path(sigma_path, a, hp: Hyperparams, lam, resid, sigma0, f0,
                       phi0=None, prior_trace: str = "face") -> LogPosterior:
    """
    Log posterior of ``Sigma_1..Sigma_N`` given ``A``, up to constants::

        LP = 3Np log k - 1/2 tr(A F0 A' Sigma0^{-1}) - (2n+p)/2 log|Sigma0|
             - 1/2 sum e_t' Sigma_t^{-1} e_t - (3p+2)/2 sum log|Sigma_t|
             + (p+1) sum log|Sigma_t^{-1} - Lambda_t| - p/2 sum log xi_t

    with ``xi_t = p - tr(B_t)`` from :func:`reconstruct_beta` applied to
    consecutive precisions, starting from ``phi0`` (default
    ``Sigma0^{-1}``).  Steps where ``xi_t <= 0`` or ``Phi_t - Lambda_t`` is
    not positive definite are reported in ``degenerate_steps``.

    ``prior_trace="face"`` uses the trace term exactly as written above.
    It grows with the square of the precision scale (about ``1e8`` for
    daily returns) and then outweighs every other term, so comparisons
    across ``delta`` pick the largest ``delta``.  ``"wishart"`` uses
    ``-1/2 tr((A F0 A')^{-1} Sigma0^{-1})``, the exponent of a Wishart
    density with scale ``A F0 A'`` at ``Sigma0^{-1}``, which is free of the
    data scale.

    Parameters
    ----------
    sigma_path : (N, p, p) plug-in volatilities
    a : (p, p) or (N, p, p)
        AR matrix, fixed or the matrix used at each step.
    lam : (p, p) or (N, p, p)
        Additive term on the precision scale of ``sigma_path``.
    resid : (N, p) residuals ``y_t - mu``
    """
    sig = np.asarray(sigma_path, dtype=float).reshape(-1, hp.p, hp.p)
    n_steps, p = sig.shape[0], hp.p
    resid = np.asarray(resid, dtype=float).reshape(n_steps, p)
    a = np.asarray(a, dtype=float)
    a_seq = np.broadcast_to(a, (max(n_steps, 1), p, p)) if a.ndim == 2 else a
    lam = np.asarray(lam, dtype=float)
    lam_seq = np.broadcast_to(lam, (max(n_steps, 1), p, p)) if lam.ndim == 2 else lam
    sigma0 = np.asarray(sigma0, dtype=float)
    phi0_inv = pd_inverse(sigma0)
    phi0 = phi0_inv if phi0 is None else np.asarray(phi0, dtype=float)

    if prior_trace not in PRIOR_TRACE:
        raise ValueError(f"prior_trace must be one of {PRIOR_TRACE}, got {prior_trace!r}")
    a_first = a_seq[0]
    scale0 = a_first @ np.asarray(f0, dtype=float) @ a_first.T
    if prior_trace == "face":
        trace0 = float(np.trace(scale0 @ phi0_inv))
    else:
        trace0 = float(np.trace(np.linalg.solve(scale0, phi0_inv)))
    terms = {
        "log_k": 3.0 * n_steps * p * np.log(hp.k),
        "prior_trace": -0.5 * trace0,
        "prior_logdet": -(2.0 * hp.n + p) / 2.0 * pd_logdet(sigma0),
    }
    quad = logdet_sig = logdet_core = log_xi = 0.0
    xi = np.full(n_steps, np.nan)
    degenerate = []
    phi_prev = phi0
    for t in range(n_steps):
        phi = pd_inverse(sig[t])
        e = resid[t]
        quad += float(e @ phi @ e)
        logdet_sig += pd_logdet(sig[t])
        sign, ld_core = np.linalg.slogdet(symmetrize(phi - lam_seq[t]))
        b_t = reconstruct_beta(phi_prev, phi, a_seq[t], lam_seq[t], hp.k)
        xi[t] = p - np.trace(b_t)
        if xi[t] > 0 and sign > 0:
            logdet_core += ld_core
            log_xi += np.log(xi[t])
        else:
            degenerate.append(t + 1)
        phi_prev = phi
    terms["quadratic"] = -0.5 * quad
    terms["logdet_sigma"] = -(3.0 * p + 2.0) / 2.0 * logdet_sig
    terms["logdet_core"] = (p + 1.0) * logdet_core
    terms["log_xi"] = -p / 2.0 * log_xi
    value = float(sum(terms.values()))
    if degenerate:
        logger.warning("degenerate log posterior terms at steps %s", degenerate[:10])
        value = float("nan")
    return LogPosterior(value=value, terms=terms, xi=xi, degenerate_steps=degenerate)


def log_posterior_from_run(run: RunOutput, sigma0, estimate: str = "mode",
                           prior_trace: str = "face") -> LogPosterior:
    """
    :func:`log_posterior_path` at the plug-in posterior mean or mode of ``Sigma_t | D_t``.

    The filter carries ``Lambda`` on the scale of ``F``; it is mapped to the
    precision scale of the plug-in estimate (``n + 2p`` for the mode,
    ``n - 2`` for the mean) so that ``Phi_t - Lambda_t`` matches the
    filter's prior scale.  The starting precision is ``F_0`` on the same
    scale, so that every reconstructed ``I - B_t`` has rank one.
    """
    hp = run.hp
    if estimate == "mode":
        sig, factor = run.sigma_mode, hp.post_df + hp.p + 1
    elif estimate == "mean":
        sig, factor = run.sigma_mean, hp.post_df - hp.p - 1
    else:
        raise ValueError(f"estimate must be 'mode' or 'mean', got {estimate!r}")
    return log_posterior_path(sig, run.A_path, hp, factor * run.lam, run.resid, sigma0, run.F[0],
                              phi0=factor * run.F[0], prior_trace=prior_trace)


def bayes_factor_step(forecast1: StudentTParams, forecast2: StudentTParams, y_t) -> float:
    """``f(y_t | M1) / f(y_t | M2)`` from the two one-step Student t forecasts."""
    return float(np.exp(student_t_logpdf(y_t, forecast1) - student_t_logpdf(y_t, forecast2)))


def bayes_factor_path(run1: RunOutput, run2: RunOutput) -> np.ndarray:
    """Sequential Bayes factors of two runs on the same observations."""
    if run1.log_pred.shape != run2.log_pred.shape:
        raise ValueError("runs cover different numbers of steps")
    return np.exp(run1.log_pred - run2.log_pred)


def average_bayes_factor(bf_path) -> float:
    bf = np.asarray(bf_path, dtype=float)
    if bf.size == 0:
        raise ValueError("empty Bayes factor path")
    return float(np.mean(bf))


def portfolio_weights(sigma_hat, cfg: PortfolioConfig) -> np.ndarray:
    """Minimum-variance weights ``m S^{-1} mu / (mu' S^{-1} mu)`` with ``w' mu = m``."""
    u = choleski_upper(sigma_hat)
    s_inv_mu = np.linalg.solve(u, np.linalg.solve(u.T, cfg.mu))
    return cfg.m * s_inv_mu / float(cfg.mu @ s_inv_mu)


def portfolio_run(cov_path, returns, cfg: PortfolioConfig) -> PortfolioResult:
    """
    Sequential unconstrained mean-variance allocation without transaction costs.

    ``cov_path[t]`` is the one-step forecast covariance of ``returns[t]``.
    ``sharpe`` is mean over sd of the realized returns ``w_t' y_t``;
    ``conditional_sharpe`` averages ``w_t' mu / sqrt(w_t' S_t w_t)``.
    """
    cov = np.asarray(cov_path, dtype=float)
    y = np.asarray(returns, dtype=float).reshape(cov.shape[0], -1)
    w = np.array([portfolio_weights(s, cfg) for s in cov]).reshape(cov.shape[0], -1)
    risk = np.einsum("ti,tij,tj->t", w, cov, w)
    realized = np.einsum("ti,ti->t", w, y)
    sd = float(np.std(realized, ddof=1)) if realized.size > 1 else 0.0
    sharpe = float(np.mean(realized) / sd) if sd > 0 else float("nan")
    cond = float(np.mean((w @ cfg.mu) / np.sqrt(risk))) if risk.size else float("nan")
    return PortfolioResult(
        weights=w,
        risk_path=risk,
        avg_risk=float(np.mean(risk)) if risk.size else float("nan"),
        realized_returns=realized,
        sharpe=sharpe,
        conditional_sharpe=cond,
    )


def diagnose(run: RunOutput, returns, sigma0, portfolio: PortfolioConfig,
             reference: RunOutput | None = None, estimate: str = "mode",
             prior_trace: str = "face") -> DiagnosticTrace:
    """
    All criteria for one run.  Bayes factors are against ``reference``
    (the run itself when omitted, giving ``BF_t = 1``).
    """
    lp = log_posterior_from_run(run, sigma0, estimate, prior_trace)
    bf = bayes_factor_path(run, reference if reference is not None else run)
    pr = portfolio_run(run.forecast_cov, returns, portfolio)
    return DiagnosticTrace(
        lp=lp.value,
        bf_path=bf,
        avg_bf=average_bayes_factor(bf) if bf.size else float("nan"),
        risk_path=pr.risk_path,
        avg_risk=pr.avg_risk,
        sharpe=pr.sharpe,
        conditional_sharpe=pr.conditional_sharpe,
        realized_returns=pr.realized_returns,
    )
