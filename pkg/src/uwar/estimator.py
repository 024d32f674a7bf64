"""
Posterior-mode estimation of the AR matrix ``A``.

The log-posterior is the matrix-normal prior kernel plus a sum over the
recorded history ``(F_{j-1}, e_j, Lambda_j)``.  With
``R_j = k A F_{j-1} A' + Lambda_j`` and ``s = delta n + p`` each history term
is

    -s/2 log(1 + e_j' R_j e_j) + gamma/2 log|R_j|

* ``form="predictive"`` (default): ``gamma = 1``.  This is the log of the
  one-step Student t predictive density ``f(y_j | A, D_{j-1})``.
* ``form="kernel"``: ``gamma = s``, i.e. ``-s/2 log|e e' + R^{-1}|``.  This
  kernel omits the ``|R|^{-(delta n + p - 1)/2}`` normalizer of the Wishart
  prior, so for ``p > 1`` it increases without bound along ``A -> c A``; it is
  kept for comparison only.

The mode is found by Newton-Raphson on ``vec(A)`` with a backtracking line
search that never accepts a decrease of the log-posterior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from uwar import kernels
from uwar.filter import (
    Hyperparams,
    LambdaPolicy,
    ReturnSeries,
    RunOutput,
    _assemble,
    check_nonsingular,
    init_state,
)
from uwar.matrix_core import NotPositiveDefiniteError, pd_inverse, symmetrize, unvec, vec

logger = logging.getLogger(__name__)

__all__ = [
    "ARPrior",
    "EstimationHistory",
    "NewtonReport",
    "RefitSchedule",
    "SequentialFit",
    "log_posterior_A",
    "dlogdet_quadratic",
    "dlogdet_quadratic_commuting",
    "grad_log_posterior_A",
    "hessian_log_posterior_A",
    "estimate_mode",
    "fit_sequential",
]

FORMS = {"predictive", "kernel"}


@dataclass(frozen=True)
class ARPrior:
    """Matrix-normal prior ``A ~ N(M, V, W)``."""

    M: np.ndarray
    V: np.ndarray
    W: np.ndarray

    @classmethod
    def vague(cls, p: int, scale: float = 1000.0, mean: float = 0.0) -> "ARPrior":
        return cls(M=mean * np.eye(p), V=scale * np.eye(p), W=scale * np.eye(p))

    def inverses(self):
        return pd_inverse(self.V), pd_inverse(self.W)


@dataclass
class EstimationHistory:
    """Stacked ``(F_{j-1}, e_j, Lambda_j)`` triples, ``j = 1..t``."""

    F: np.ndarray
    e: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        self.F = np.ascontiguousarray(self.F, dtype=float).reshape(-1, *np.shape(self.F)[-2:])
        p = self.F.shape[-1]
        self.e = np.ascontiguousarray(self.e, dtype=float).reshape(-1, p)
        if self.lam is None:
            self.lam = np.zeros_like(self.F)
        self.lam = np.ascontiguousarray(self.lam, dtype=float).reshape(-1, p, p)
        if not (self.F.shape[0] == self.e.shape[0] == self.lam.shape[0]):
            raise ValueError("history arrays have inconsistent lengths")

    @classmethod
    def empty(cls, p: int) -> "EstimationHistory":
        return cls(np.zeros((0, p, p)), np.zeros((0, p)), np.zeros((0, p, p)))

    def __len__(self) -> int:
        return self.F.shape[0]

    def head(self, t: int) -> "EstimationHistory":
        return EstimationHistory(self.F[:t], self.e[:t], self.lam[:t])


@dataclass
class NewtonReport:
    A_hat: np.ndarray
    iterations: int
    final_step_norm: float
    converged: bool
    log_posterior_trace: list = field(default_factory=list)
    gradient_fallbacks: int = 0


def _gamma(form: str, hp: Hyperparams) -> float:
    if form not in FORMS:
        raise ValueError(f"unknown log-posterior form {form!r}; expected one of {sorted(FORMS)}")
    return 1.0 if form == "predictive" else hp.s


def _prior_terms(a, prior: ARPrior):
    v_inv, w_inv = prior.inverses()
    d = a - prior.M
    value = -0.5 * np.trace(v_inv @ d @ w_inv @ d.T)
    grad = -v_inv @ d @ w_inv
    hess = -np.kron(w_inv, v_inv)
    return value, grad, hess


def _evaluate(a, hist: EstimationHistory, prior: ARPrior, hp: Hyperparams, form: str, want_hess: bool):
    a = np.ascontiguousarray(a, dtype=float)
    pv, pg, ph = _prior_terms(a, prior)
    if len(hist) == 0:
        return pv, pg, ph, True
    val, grad, hess, ok = kernels.history_terms(
        a, hist.F, hist.e, hist.lam, hp.k, hp.s, _gamma(form, hp), want_hess
    )
    if not ok:
        return -np.inf, pg, ph, False
    return pv + val, pg + grad, ph + hess, True


def log_posterior_A(a, hist: EstimationHistory, prior: ARPrior, hp: Hyperparams,
                    form: str = "predictive") -> float:
    """Log-posterior of ``A`` up to an additive constant."""
    check_nonsingular(a)
    value, _, _, ok = _evaluate(a, hist, prior, hp, form, False)
    if not ok:
        raise NotPositiveDefiniteError("k A F A' + Lambda is not positive definite")
    return float(value)


def grad_log_posterior_A(a, hist: EstimationHistory, prior: ARPrior, hp: Hyperparams,
                         form: str = "predictive") -> np.ndarray:
    """Gradient as a ``p x p`` matrix; ``vec`` of it is the gradient in ``vec(A)``."""
    check_nonsingular(a)
    _, grad, _, ok = _evaluate(a, hist, prior, hp, form, False)
    if not ok:
        raise NotPositiveDefiniteError("k A F A' + Lambda is not positive definite")
    return grad


def hessian_log_posterior_A(a, hist: EstimationHistory, prior: ARPrior, hp: Hyperparams,
                            form: str = "predictive") -> np.ndarray:
    """``p^2 x p^2`` Hessian with respect to ``vec(A)``."""
    check_nonsingular(a)
    _, _, hess, ok = _evaluate(a, hist, prior, hp, form, True)
    if not ok:
        raise NotPositiveDefiniteError("k A F A' + Lambda is not positive definite")
    return symmetrize(hess)


def dlogdet_quadratic(x, b, c, g) -> np.ndarray:
    """
    Matrix derivative of ``log|B X C X' + B G + I|`` with respect to ``X``
    for symmetric ``B``, ``C`` and ``G``.

    With ``M = B X C X' + B G + I`` the derivative is
    ``B M'^{-1} X C + M^{-1} B X C``.  When ``B`` and ``G`` commute this
    equals the compact form ``2 B (X C X' B + B G + I)^{-1} X C``; without
    that condition the compact form is not the derivative.
    """
    x, b, c, g = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (x, b, c, g))
    p = x.shape[0]
    m = b @ x @ c @ x.T + b @ g + np.eye(p)
    bxc = b @ x @ c
    return b @ np.linalg.solve(m.T, x @ c) + np.linalg.solve(m, bxc)


def dlogdet_quadratic_commuting(x, b, c, g) -> np.ndarray:
    """Compact form ``2 B (X C X' B + B G + I)^{-1} X C``; valid only when ``B G = G B``."""
    x, b, c, g = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (x, b, c, g))
    p = x.shape[0]
    inner = x @ c @ x.T @ b + b @ g + np.eye(p)
    return 2.0 * b @ np.linalg.solve(inner, x @ c)


def _damped_direction(h, g, floor: float = 1e-8):
    # Newton step on -|H|: positive curvature is flipped and tiny curvature
    # floored, so the direction is always an ascent direction
    lam, vecs = np.linalg.eigh(h)
    top = np.max(np.abs(lam))
    if not top > 0:
        return g
    mod = np.maximum(np.abs(lam), floor * top)
    return vecs @ ((vecs.T @ g) / mod)


def estimate_mode(a0, hist: EstimationHistory, prior: ARPrior, hp: Hyperparams,
                  tol: float = 1e-4, max_iter: int = 50, form: str = "predictive",
                  max_halvings: int = 40) -> NewtonReport:
    """
    Newton-Raphson ascent to the posterior mode of ``A``.

    The step is ``-H^{-1} g`` in ``vec(A)`` coordinates.  When ``H`` is not
    negative definite the step uses ``|H|`` (eigenvalues replaced by their
    absolute values, floored relative to the largest) in place of ``-H``,
    which is a damped ascent direction.  Each step is halved until the
    log-posterior does not decrease and ``A`` stays non-singular without
    crossing the singular set (the sign of ``det A`` is kept, so the
    iteration stays in the basin of ``a0`` rather than jumping to a mirror
    mode).  Converged means the accepted step has
    Frobenius norm ``<= tol``.
    """
    a = check_nonsingular(np.array(a0, dtype=float))
    p = a.shape[0]
    value, grad, hess, ok = _evaluate(a, hist, prior, hp, form, True)
    if not ok:
        raise NotPositiveDefiniteError("starting value gives a non positive definite prior scale")
    trace = [float(value)]
    det_sign = np.sign(np.linalg.det(a))
    fallbacks = 0
    step_norm = np.inf
    for it in range(1, max_iter + 1):
        g = vec(grad)
        h = symmetrize(hess)
        try:
            np.linalg.cholesky(-h)
            direction = -np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            fallbacks += 1
            direction = _damped_direction(h, g)
        d = unvec(direction, p)
        t = 1.0
        accepted = False
        for _ in range(max_halvings):
            cand = a + t * d
            norm = np.linalg.norm(cand)
            det = np.linalg.det(cand)
            if norm > 0 and abs(det) >= 1e-12 * norm**p and np.sign(det) == det_sign:
                c_val, c_grad, c_hess, c_ok = _evaluate(cand, hist, prior, hp, form, True)
                if c_ok and np.isfinite(c_val) and c_val >= value:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            # no ascent left at working precision; converged only if the proposed step is negligible
            full = float(np.linalg.norm(d))
            logger.debug("line search failed at iteration %d (step %.3g)", it, full)
            return NewtonReport(a, it, full, full <= tol, trace, fallbacks)
        step_norm = float(np.linalg.norm(cand - a))
        a, value, grad, hess = cand, c_val, c_grad, c_hess
        trace.append(float(value))
        if step_norm <= tol:
            return NewtonReport(a, it, step_norm, True, trace, fallbacks)
    return NewtonReport(a, max_iter, step_norm, False, trace, fallbacks)


@dataclass(frozen=True)
class RefitSchedule:
    """
    When to re-estimate ``A`` during a sequential run.

    ``every=None`` never refits (``A`` stays at ``a0``).  Otherwise ``A`` is
    re-estimated before step ``t`` whenever at least ``min_history`` past
    observations exist and ``(t - 1 - min_history) % every == 0``.
    """

    every: int | None = 1
    min_history: int = 20

    @classmethod
    def never(cls) -> "RefitSchedule":
        return cls(every=None)

    def due(self, t: int) -> bool:
        past = t - 1
        if self.every is None or past < self.min_history:
            return False
        return (past - self.min_history) % self.every == 0


@dataclass
class SequentialFit:
    run: RunOutput
    reports: list
    refit_steps: list

    @property
    def A_path(self) -> np.ndarray:
        return self.run.A_path

    @property
    def iterations(self) -> list:
        return [r.iterations for r in self.reports]


def fit_sequential(series: ReturnSeries, prior: ARPrior, hp: Hyperparams,
                   schedule: RefitSchedule | None = None, a0=None,
                   lam: LambdaPolicy | None = None, tol: float = 1e-4, max_iter: int = 50,
                   form: str = "predictive", f0=None) -> SequentialFit:
    """
    Plug-in filtering with sequential re-estimation of ``A``.

    Before step ``t`` the mode ``A_t`` is computed from the history up to
    ``t - 1`` (warm-started at the previous estimate), then the filter step
    at ``t`` uses ``A_t``.  The recorded ``A_path[t-1]`` is the matrix used
    for step ``t``.
    """
    schedule = schedule or RefitSchedule()
    lam = lam or LambdaPolicy.zero()
    n, p = series.n_obs, series.p
    a_cur = check_nonsingular(np.eye(p) if a0 is None else np.array(a0, dtype=float))
    if f0 is None:
        f0 = init_state(series.sigma0_hat, hp).F
    lam_seq = lam.sequence(n, p)
    resid = np.ascontiguousarray(series.values - series.mu_hat)
    a_path = np.zeros((n, p, p))
    r = np.zeros((n, p, p))
    f = np.zeros((n + 1, p, p))
    logdet_r = np.zeros(n)
    quad = np.zeros(n)
    f[0] = f0
    reports, refit_steps = [], []
    for t in range(1, n + 1):
        if schedule.due(t):
            hist = EstimationHistory(f[: t - 1], resid[: t - 1], lam_seq[: t - 1])
            try:
                rep = estimate_mode(a_cur, hist, prior, hp, tol=tol, max_iter=max_iter, form=form)
            except (np.linalg.LinAlgError, FloatingPointError) as exc:
                logger.warning("refit before step %d failed (%s); keeping previous A", t, exc)
            else:
                a_cur = rep.A_hat
                reports.append(rep)
                refit_steps.append(t)
        a_path[t - 1] = a_cur
        rt, ft, ld, q, status, _ = kernels.filter_loop(
            resid[t - 1:t], a_path[t - 1:t], lam_seq[t - 1:t], f[t - 1], hp.k
        )
        if status != kernels.OK:
            raise NotPositiveDefiniteError(f"filter aborted at step {t}")
        r[t - 1], f[t], logdet_r[t - 1], quad[t - 1] = rt[0], ft[1], ld[0], q[0]
    run = _assemble(series, hp, a_path, r, f, logdet_r, quad, resid, lam_seq)
    return SequentialFit(run=run, reports=reports, refit_steps=refit_steps)
