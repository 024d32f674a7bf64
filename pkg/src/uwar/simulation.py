"""
Scenario generators and the Monte Carlo harness.

Three scenarios are supported:

1. ``precision-uwar1``: ``Sigma_t^{-1}`` follows a UWAR(1) process,
2. ``precision-uwar2``: ``Sigma_t^{-1}`` follows a UWAR(2) process, simulated
   through the companion block recursion,
3. ``volatility-uwar1``: ``Sigma_t`` itself follows a UWAR(1) process.

Each replicate simulates a path, calibrates ``mu``, ``Sigma_0`` and ``F_0`` on
the burn-in observations, fits the UWAR(1) model sequentially and scores the
out-of-sample predictive mode of ``Sigma_t`` by Frobenius distance to truth.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from uwar import kernels
from uwar.diagnostics import (
    PortfolioConfig,
    average_bayes_factor,
    bayes_factor_path,
    portfolio_run,
)
from uwar.distributions import MatrixNormalParams, expected_log_det_beta, sample_matrix_normal
from uwar.estimator import ARPrior, RefitSchedule, fit_sequential
from uwar.filter import (
    LambdaPolicy,
    ReturnSeries,
    check_nonsingular,
    companion_embed,
    filter_run,
    make_hyperparams,
    volatility_ar_matrix,
)
from uwar.io import sig4
from uwar.matrix_core import NotPositiveDefiniteError, pd_inverse, symmetrize

logger = logging.getLogger(__name__)

__all__ = [
    "SCENARIOS",
    "ScenarioConfig",
    "EstimatorConfig",
    "MCResult",
    "ReplicateResult",
    "neutral_scale",
    "generate_A",
    "generate_precision_uwar",
    "generate_volatility_uwar",
    "generate_returns",
    "default_sigma0",
    "SimulatedPath",
    "simulate_scenario",
    "calibrate",
    "run_replicate",
    "ComparisonResult",
    "compare_with_rw",
    "replicate_seeds",
    "summarize",
    "run_monte_carlo",
]

SCENARIOS = ("precision-uwar1", "precision-uwar2", "volatility-uwar1")


def neutral_scale(delta: float, p: int) -> float:
    """
    Scalar ``s`` such that ``|det(s Q)|`` with ``Q`` orthogonal gives a UWAR(1)
    path whose log-determinant has zero expected increment (``Lambda = 0``).

    The increment of ``log|Phi_t|`` is ``p log k + 2 log|det A| + log|B_t|``.
    """
    hp = make_hyperparams(delta, p)
    drift = p * np.log(hp.k) + expected_log_det_beta(hp.a, hp.b, p)
    return float(np.exp(-drift / (2.0 * p)))


def _polar_orthogonal(g: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(g)
    q = u @ vt
    if np.linalg.det(q) < 0:
        u[:, -1] *= -1
        q = u @ vt
    return q


def generate_A(rng: np.random.Generator, p: int, delta: float = 0.8, mean=None, left_cov=None,
               right_cov=None, policy: str = "balanced", scale: float = 0.97,
               max_radius: float = 0.999, max_tries: int = 10_000) -> np.ndarray:
    """
    Random AR matrix from a matrix-variate normal draw ``G ~ N(M, V, W)``.

    Defaults: ``M = I``, ``V = W = 0.01 I``.

    policy
        ``"balanced"``: ``A = scale * s0 * Q`` with ``Q`` the orthogonal polar
        factor of ``G`` and ``s0 = neutral_scale(delta, p)``.  With
        ``scale = 1`` and ``Lambda = 0`` the log-determinant of the path has
        no drift; ``scale < 1`` gives a slow downward drift that a small
        ``Lambda`` floor balances.  An orthogonal direction keeps every
        direction of the precision at the same rate.
        ``"radius"``: ``A = G``, re-drawn until the volatility AR matrix
        ``c^{1/2} (A')^{-1}`` has spectral radius ``<= max_radius``.
        ``"raw"``: ``A = G``, re-drawn only if singular.
    """
    if policy not in ("balanced", "radius", "raw"):
        raise ValueError(f"unknown policy {policy!r}")
    m = np.eye(p) if mean is None else np.asarray(mean, dtype=float)
    v = 0.01 * np.eye(p) if left_cov is None else np.asarray(left_cov, dtype=float)
    w = 0.01 * np.eye(p) if right_cov is None else np.asarray(right_cov, dtype=float)
    hp = make_hyperparams(delta, p)
    params = MatrixNormalParams(m, v, w)
    for _ in range(max_tries):
        g = sample_matrix_normal(rng, params)
        try:
            check_nonsingular(g)
        except np.linalg.LinAlgError:
            continue
        if policy == "balanced":
            return scale * neutral_scale(delta, p) * _polar_orthogonal(g)
        if policy == "raw":
            return g
        c_mat = volatility_ar_matrix(g, hp)
        if np.max(np.abs(np.linalg.eigvals(c_mat))) <= max_radius:
            return g
    raise RuntimeError(f"no admissible A after {max_tries} draws (policy={policy})")


def _beta_draws(rng: np.random.Generator, a: float, m: int, n_steps: int):
    chi = rng.chisquare(a - np.arange(m), size=(n_steps, m))
    tri = rng.standard_normal((n_steps, m * (m - 1) // 2))
    z = rng.standard_normal((n_steps, m))
    return chi, tri, z


def generate_precision_uwar(rng: np.random.Generator, a_list, delta: float, phi0, n_steps: int,
                            lam=None, shock: str = "lagged") -> np.ndarray:
    """
    Simulate ``Phi_1..Phi_N`` from a UWAR(d) process, ``d = len(a_list)``.

    For ``d = 1``: ``Phi_t = k A U(Phi_{t-1})' B_t U(Phi_{t-1}) A' + Lambda_t``
    with ``B_t ~ B_p(a/2, 1/2)``, whatever ``shock`` is.  For ``d > 1`` both
    variants give ``E(Phi_t | past) = sum_j A_j Phi_{t-j} A_j' + Lambda_t``:

    ``"lagged"``
        A ``p``-dimensional shock on the lag-weighted state, the same shock
        law as ``d = 1`` (see :func:`uwar.kernels.uwar_lagged_path_py`).
    ``"companion"``
        The recursion runs on the block diagonal
        ``Psi_{t-1} = diag(Phi_{t-1}, .., Phi_{t-d})`` with the companion
        matrix and a ``dp``-dimensional shock; ``Phi_t`` is the leading
        block of the draw.  Averaging over ``dp`` dimensions makes this path
        smoother than a first-order one.

    ``phi0`` initializes every lag.
    """
    if shock not in ("lagged", "companion"):
        raise ValueError(f"shock must be 'lagged' or 'companion', got {shock!r}")
    if isinstance(a_list, np.ndarray) and a_list.ndim == 2:
        a_list = [a_list]
    a_list = [np.asarray(a, dtype=float) for a in a_list]
    d = len(a_list)
    phi0 = symmetrize(np.atleast_2d(np.asarray(phi0, dtype=float)))
    p = phi0.shape[0]
    lam_seq = (LambdaPolicy.zero() if lam is None else
               lam if isinstance(lam, LambdaPolicy) else LambdaPolicy.fixed(lam)).sequence(n_steps, p)
    if shock == "lagged" or d == 1:
        hp = make_hyperparams(delta, p)
        a1 = check_nonsingular(a_list[0])
        g = np.ascontiguousarray(np.array([np.linalg.solve(a1, a) for a in a_list]))
        g[0] = np.eye(p)
        chi, tri, z = _beta_draws(rng, hp.a, p, n_steps)
        path, status, step = kernels.uwar_lagged_path(phi0, np.ascontiguousarray(a1), g, hp.k, chi, tri,
                                                      z, lam_seq, d, p)
    else:
        a_big, _ = companion_embed(a_list)
        m = d * p
        hp_m = make_hyperparams(delta, m)
        psi0 = np.kron(np.eye(d), phi0)
        chi, tri, z = _beta_draws(rng, hp_m.a, m, n_steps)
        path, status, step = kernels.uwar_path(psi0, np.ascontiguousarray(a_big), hp_m.k, chi, tri, z,
                                               lam_seq, d, p)
    if status != kernels.OK:
        raise NotPositiveDefiniteError(f"simulated matrix lost positive definiteness at step {step + 1}")
    for t in range(n_steps):
        if np.min(np.linalg.eigvalsh(path[t])) <= 0:
            raise NotPositiveDefiniteError(f"simulated matrix not positive definite at step {t + 1}")
    return path


def generate_volatility_uwar(rng: np.random.Generator, a, delta: float, sigma0, n_steps: int,
                             lam=None) -> np.ndarray:
    """UWAR(1) recursion applied to ``Sigma_t`` directly rather than its inverse."""
    return generate_precision_uwar(rng, [a], delta, sigma0, n_steps, lam)


def generate_returns(rng: np.random.Generator, mu, sigma_path) -> np.ndarray:
    """``y_t = mu + L_t z_t`` with ``L_t L_t' = Sigma_t`` (``L_t = U(Sigma_t)'``)."""
    sig = np.asarray(sigma_path, dtype=float)
    n, p = sig.shape[0], sig.shape[1]
    lower = np.linalg.cholesky(0.5 * (sig + np.swapaxes(sig, 1, 2)))
    z = rng.standard_normal((n, p))
    return np.asarray(mu, dtype=float) + np.einsum("tij,tj->ti", lower, z)


def default_sigma0(p: int, variance: float = 1e-4, corr: float = 0.5) -> np.ndarray:
    """Equicorrelated starting covariance at daily-return scale."""
    return variance * ((1.0 - corr) * np.eye(p) + corr * np.ones((p, p)))


@dataclass(frozen=True)
class ScenarioConfig:
    """
    One Monte Carlo cell.

    ``N`` counts every simulated observation; the first ``burn_in`` are used
    only to calibrate ``mu``, ``Sigma_0`` and ``F_0``.  ``floor`` sets the
    additive term of the generator as a fraction of the starting matrix and
    ``a_cov`` is the scalar ``V = W = a_cov I`` of the draw for ``A``.
    """

    scenario: str
    p: int
    N: int
    delta_true: float = 0.8
    mc_reps: int = 20
    seed: int = 0
    burn_in: int = 100
    floor: float = 0.01
    a_cov: float = 0.3
    a_scale: float = 0.97
    lag_weight: float = 0.7
    uwar2_shock: str = "lagged"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if not self.N > self.burn_in >= 1:
            raise ValueError(f"need N > burn_in >= 1, got N={self.N}, burn_in={self.burn_in}")
        if self.mc_reps < 1:
            raise ValueError("mc_reps must be >= 1")
        if not 2.0 / 3.0 < self.delta_true < 1.0:
            raise ValueError(f"delta_true must lie in (2/3, 1), got {self.delta_true}")
        if self.burn_in < self.p + 1:
            raise ValueError("burn_in must exceed p for a non-singular sample covariance")
        if not 0.0 < self.lag_weight < 1.0:
            raise ValueError("lag_weight must lie in (0, 1)")


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings of the sequential UWAR(1) fit applied to every replicate."""

    prior_scale: float = 1000.0
    prior_mean: float = 0.0
    refit_every: int = 1
    min_history: int = 20
    tol: float = 1e-4
    max_iter: int = 50
    form: str = "predictive"
    lambda_floor: float = 0.01

    def prior(self, p: int) -> ARPrior:
        return ARPrior.vague(p, scale=self.prior_scale, mean=self.prior_mean)

    def schedule(self) -> RefitSchedule:
        return RefitSchedule(every=self.refit_every, min_history=self.min_history)

    def lambda_policy(self, sigma0_hat, hp) -> LambdaPolicy:
        """
        ``floor * sigma0_hat^{-1} / (delta n + p - 1)``: the generator's
        floor expressed in the filter's scale units, so that the prior mean
        ``(delta n + p - 1) R`` carries ``floor * sigma0_hat^{-1}``.
        """
        if self.lambda_floor == 0.0:
            return LambdaPolicy.zero()
        return LambdaPolicy.fixed(self.lambda_floor * pd_inverse(sigma0_hat) / hp.prior_df)


@dataclass
class SimulatedPath:
    sigma: np.ndarray
    y: np.ndarray
    a_list: list
    lam: np.ndarray
    level: float = 1.0


@dataclass
class ReplicateResult:
    rep: int
    distance: float = np.nan
    a_hat: np.ndarray | None = None
    a_true: np.ndarray | None = None
    max_iterations: int = 0
    all_converged: bool = True
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class MCResult:
    mean_distance: float
    sd_distance: float
    per_rep: list = field(default_factory=list)
    n_failed: int = 0

    def cell(self) -> str:
        """Table cell ``"mean (sd)"``, four significant digits each."""
        return f"{sig4(self.mean_distance)} ({sig4(self.sd_distance)})"


def simulate_scenario(rng: np.random.Generator, cfg: ScenarioConfig) -> SimulatedPath:
    """
    Draw ``A``, the covariance path ``Sigma_1..Sigma_N`` and the returns (``mu = 0``).

    The raw path starts at ``default_sigma0(p)`` with ``Lambda = floor`` times
    the starting matrix, then is multiplied by the scalar ``level`` that
    makes the time average of ``||Sigma_t||_F`` equal ``||Sigma_0||_F``.  The
    distances of different scenarios are then on the same scale.
    """
    p = cfg.p
    a = generate_A(rng, p, cfg.delta_true, left_cov=cfg.a_cov * np.eye(p),
                   right_cov=cfg.a_cov * np.eye(p), scale=cfg.a_scale)
    sigma0 = default_sigma0(p)
    if cfg.scenario == "volatility-uwar1":
        lam = cfg.floor * sigma0
        sigma = generate_volatility_uwar(rng, a, cfg.delta_true, sigma0, cfg.N, lam)
        a_list = [a]
    else:
        phi0 = pd_inverse(sigma0)
        lam = cfg.floor * phi0
        if cfg.scenario == "precision-uwar1":
            a_list = [a]
        else:
            w = cfg.lag_weight
            a_list = [np.sqrt(w) * a, np.sqrt(1.0 - w) * a]
        phi = generate_precision_uwar(rng, a_list, cfg.delta_true, phi0, cfg.N, lam, cfg.uwar2_shock)
        sigma = np.linalg.inv(phi)
        sigma = 0.5 * (sigma + np.swapaxes(sigma, 1, 2))
    # congruence by a scalar maps a path with Lambda to one with c * Lambda, so
    # every scenario is put at the size of sigma0 without leaving its model
    c = float(np.linalg.norm(sigma0) / np.mean(np.linalg.norm(sigma, axis=(1, 2))))
    sigma = c * sigma
    lam = c * lam if cfg.scenario == "volatility-uwar1" else lam / c
    y = generate_returns(rng, np.zeros(p), sigma)
    return SimulatedPath(sigma=sigma, y=y, a_list=a_list, lam=lam, level=c)


def calibrate(y, burn_in: int) -> ReturnSeries:
    """Sample mean and covariance of the first ``burn_in`` rows; the rest is the analysis series."""
    head = y[:burn_in]
    sigma0_hat = np.atleast_2d(np.cov(head, rowvar=False))
    return ReturnSeries(y[burn_in:], head.mean(axis=0), sigma0_hat,
                        dates=[str(t) for t in range(burn_in + 1, y.shape[0] + 1)])


def run_replicate(rep: int, seed_seq: np.random.SeedSequence, cfg: ScenarioConfig,
                  est: EstimatorConfig) -> ReplicateResult:
    """
    Simulate, calibrate on the burn-in, fit sequentially and return the mean
    Frobenius distance between the one-step-ahead mode of ``Sigma_t`` and the
    truth over ``t = burn_in + 1..N``.
    """
    rng = np.random.default_rng(seed_seq)
    try:
        path = simulate_scenario(rng, cfg)
        series = calibrate(path.y, cfg.burn_in)
        hp = make_hyperparams(cfg.delta_true, cfg.p)
        fit = fit_sequential(series, est.prior(cfg.p), hp, est.schedule(),
                             lam=est.lambda_policy(series.sigma0_hat, hp),
                             tol=est.tol, max_iter=est.max_iter, form=est.form)
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        logger.warning("replicate %d (%s) failed: %s", rep, cfg.scenario, exc)
        return ReplicateResult(rep=rep, error=f"{type(exc).__name__}: {exc}")
    truth = path.sigma[cfg.burn_in:]
    diff = fit.run.predicted_sigma_mode - truth
    dist = float(np.mean(np.sqrt(np.sum(diff**2, axis=(1, 2)))))
    iters = fit.iterations
    return ReplicateResult(
        rep=rep,
        distance=dist,
        a_hat=fit.A_path[-1].copy(),
        a_true=path.a_list[0].copy(),
        max_iterations=int(max(iters)) if len(iters) else 0,
        all_converged=all(r.converged for r in fit.reports),
    )


@dataclass
class ComparisonResult:
    """UWAR (estimated ``A``) against RW (``A = I``) on one simulated path."""

    rep: int
    avg_bf: float = float("nan")
    risk_uwar: float = float("nan")
    risk_rw: float = float("nan")
    error: str | None = None

    @property
    def uwar_wins(self) -> bool:
        return self.error is None and self.avg_bf > 1.0 and self.risk_uwar < self.risk_rw


def compare_with_rw(rep: int, seed_seq: np.random.SeedSequence, cfg: ScenarioConfig,
                    est: EstimatorConfig, target_return: float = 0.001) -> ComparisonResult:
    """
    Fit UWAR and RW to the same simulated path with the same ``Lambda``.

    ``avg_bf`` averages ``f(y_t | UWAR) / f(y_t | RW)``; the risks are the
    time-averaged minimum-variance portfolio risks with ``mu`` set to the
    burn-in sample mean.
    """
    rng = np.random.default_rng(seed_seq)
    try:
        path = simulate_scenario(rng, cfg)
        series = calibrate(path.y, cfg.burn_in)
        hp = make_hyperparams(cfg.delta_true, cfg.p)
        lam = est.lambda_policy(series.sigma0_hat, hp)
        fit = fit_sequential(series, est.prior(cfg.p), hp, est.schedule(), lam=lam,
                             tol=est.tol, max_iter=est.max_iter, form=est.form)
        rw = filter_run(series, np.eye(cfg.p), hp, lam)
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        return ComparisonResult(rep=rep, error=f"{type(exc).__name__}: {exc}")
    pcfg = PortfolioConfig(target_return, series.mu_hat)
    return ComparisonResult(
        rep=rep,
        avg_bf=average_bayes_factor(bayes_factor_path(fit.run, rw)),
        risk_uwar=portfolio_run(fit.run.forecast_cov, series.values, pcfg).avg_risk,
        risk_rw=portfolio_run(rw.forecast_cov, series.values, pcfg).avg_risk,
    )


def replicate_seeds(seed: int, mc_reps: int) -> list:
    """One independent stream per replicate; the same ``seed`` gives matched streams across scenarios."""
    return np.random.SeedSequence(seed).spawn(mc_reps)


def summarize(results) -> MCResult:
    ok = [r for r in results if not r.failed]
    d = np.array([r.distance for r in ok])
    if d.size == 0:
        return MCResult(np.nan, np.nan, list(results), len(results))
    sd = float(np.std(d, ddof=1)) if d.size > 1 else 0.0
    return MCResult(float(np.mean(d)), sd, list(results), len(results) - len(ok))


def run_monte_carlo(cfg: ScenarioConfig, est: EstimatorConfig | None = None,
                    workers: int = 1) -> MCResult:
    """
    Run ``cfg.mc_reps`` replicates and aggregate their distances.

    Failed replicates are kept in ``per_rep`` with their error message and
    counted in ``n_failed``; they are excluded from the mean and sd.  Results
    do not depend on ``workers``.
    """
    est = est or EstimatorConfig()
    seeds = replicate_seeds(cfg.seed, cfg.mc_reps)
    args = [(i, s, cfg, est) for i, s in enumerate(seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_star, args))
    else:
        results = [run_replicate(*a) for a in args]
    out = summarize(results)
    if out.n_failed:
        logger.warning("%s: %d of %d replicates failed", cfg.scenario, out.n_failed, cfg.mc_reps)
    return out


def _replicate_star(args):
    return run_replicate(*args)
