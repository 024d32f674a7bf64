import numpy as np
import pytest

from conftest import random_pd
from uwar.distributions import expected_log_det_beta
from uwar.filter import make_hyperparams, volatility_ar_matrix
from uwar.simulation import (
    EstimatorConfig,
    MCResult,
    ReplicateResult,
    ScenarioConfig,
    compare_with_rw,
    default_sigma0,
    generate_A,
    generate_precision_uwar,
    generate_returns,
    neutral_scale,
    replicate_seeds,
    run_monte_carlo,
    simulate_scenario,
    summarize,
)

FAST = EstimatorConfig(refit_every=10, max_iter=30)


def test_generate_A_reproducible_and_nonsingular():
    for policy in ("balanced", "radius", "raw"):
        a1 = generate_A(np.random.default_rng(5), 3, mean=1.3 * np.eye(3), policy=policy)
        a2 = generate_A(np.random.default_rng(5), 3, mean=1.3 * np.eye(3), policy=policy)
        assert np.array_equal(a1, a2)
        assert abs(np.linalg.det(a1)) > 1e-6


def test_generate_A_balanced_is_scaled_rotation(rng):
    p, delta, scale = 3, 0.8, 0.97
    a = generate_A(rng, p, delta, left_cov=0.3 * np.eye(p), right_cov=0.3 * np.eye(p), scale=scale)
    q = a / (scale * neutral_scale(delta, p))
    assert np.allclose(q @ q.T, np.eye(p), atol=1e-12)
    assert np.linalg.det(q) == pytest.approx(1.0, abs=1e-12)


def test_generate_A_radius_policy(rng):
    hp = make_hyperparams(0.8, 2)
    # near A = I the volatility AR matrix has radius sqrt(c) > 1
    with pytest.raises(RuntimeError):
        generate_A(rng, 2, 0.8, policy="radius", max_tries=50)
    for _ in range(10):
        a = generate_A(rng, 2, 0.8, mean=1.3 * np.eye(2), left_cov=0.1 * np.eye(2), policy="radius",
                       max_radius=0.99)
        assert np.max(np.abs(np.linalg.eigvals(volatility_ar_matrix(a, hp)))) <= 0.99


def test_generate_A_raw_mean(rng):
    draws = np.array([generate_A(rng, 2, policy="raw") for _ in range(4000)])
    # V = W = 0.01 I: each entry has sd 0.01
    assert np.allclose(draws.mean(axis=0), np.eye(2), atol=4 * 0.01 / np.sqrt(4000))


def test_generate_A_unknown_policy(rng):
    with pytest.raises(ValueError):
        generate_A(rng, 2, policy="other")


def test_neutral_scale_gives_zero_log_det_drift():
    p, delta = 3, 0.8
    hp = make_hyperparams(delta, p)
    s = neutral_scale(delta, p)
    drift = p * np.log(hp.k) + 2 * p * np.log(s) + expected_log_det_beta(hp.a, hp.b, p)
    assert abs(drift) < 1e-12
    # Monte Carlo: one-step increments of log|Phi| average to zero
    rng = np.random.default_rng(11)
    phi0 = random_pd(rng, p)
    a = s * np.eye(p)
    inc = []
    for _ in range(4000):
        phi1 = generate_precision_uwar(rng, [a], delta, phi0, 1)[0]
        inc.append(np.linalg.slogdet(phi1)[1] - np.linalg.slogdet(phi0)[1])
    inc = np.array(inc)
    assert abs(inc.mean()) < 4 * inc.std() / np.sqrt(inc.size)


@pytest.mark.parametrize("shock", ["lagged", "companion"])
@pytest.mark.parametrize("d", [1, 2])
def test_precision_conditional_mean(d, shock):
    rng = np.random.default_rng(100 + d)
    p, delta, reps = 2, 0.8, 10000
    phi0 = np.array([[2.0, 0.5], [0.5, 1.0]])
    a1 = np.array([[0.8, 0.2], [-0.1, 0.9]])
    a_list = [a1] if d == 1 else [np.sqrt(0.7) * a1, np.sqrt(0.3) * np.array([[0.9, 0.0], [0.3, 0.7]])]
    lam = 0.1 * np.eye(p)
    draws = np.array([generate_precision_uwar(rng, a_list, delta, phi0, 1, lam, shock)[0]
                      for _ in range(reps)])
    expected = sum(a @ phi0 @ a.T for a in a_list) + lam
    rel = np.linalg.norm(draws.mean(axis=0) - expected) / np.linalg.norm(expected)
    assert rel < 0.03


def test_lagged_reduces_to_first_order_when_second_lag_vanishes():
    p, delta, n = 3, 0.8, 50
    a = generate_A(np.random.default_rng(3), p, delta, left_cov=0.3 * np.eye(p), right_cov=0.3 * np.eye(p))
    phi0 = np.linalg.inv(default_sigma0(p))
    lam = 0.01 * phi0
    one = generate_precision_uwar(np.random.default_rng(9), [a], delta, phi0, n, lam)
    two = generate_precision_uwar(np.random.default_rng(9), [a, 0.0 * a], delta, phi0, n, lam)
    assert np.array_equal(one, two)


def test_precision_path_rejects_unknown_shock(rng):
    with pytest.raises(ValueError):
        generate_precision_uwar(rng, [np.eye(2)], 0.8, np.eye(2), 3, shock="other")


def test_generate_returns_moments(rng):
    sig = random_pd(rng, 3)
    mu = np.array([0.1, -0.2, 0.3])
    y = generate_returns(rng, mu, np.broadcast_to(sig, (40000, 3, 3)))
    assert np.allclose(y.mean(axis=0), mu, atol=4 * np.sqrt(np.diag(sig).max() / 40000))
    assert np.allclose(np.cov(y, rowvar=False), sig, atol=0.05 * np.abs(sig).max())


@pytest.mark.parametrize("scenario", ["precision-uwar1", "precision-uwar2", "volatility-uwar1"])
def test_simulated_paths_normalized_and_reproducible(scenario):
    cfg = ScenarioConfig(scenario, 2, 300)
    p1 = simulate_scenario(np.random.default_rng(4), cfg)
    p2 = simulate_scenario(np.random.default_rng(4), cfg)
    assert np.array_equal(p1.sigma, p2.sigma) and np.array_equal(p1.y, p2.y)
    norms = np.linalg.norm(p1.sigma, axis=(1, 2))
    assert norms.mean() == pytest.approx(np.linalg.norm(default_sigma0(2)), rel=1e-12)
    assert np.all(np.linalg.eigvalsh(p1.sigma) > 0)
    assert p1.y.shape == (300, 2)


def test_scenario_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig("nope", 2, 300)
    with pytest.raises(ValueError):
        ScenarioConfig("precision-uwar1", 2, 50, burn_in=100)
    with pytest.raises(ValueError):
        ScenarioConfig("precision-uwar1", 2, 300, delta_true=0.5)
    with pytest.raises(ValueError):
        ScenarioConfig("precision-uwar1", 2, 300, mc_reps=0)


def test_replicate_seeds_are_matched_across_calls():
    s1 = replicate_seeds(7, 3)
    s2 = replicate_seeds(7, 3)
    for a, b in zip(s1, s2):
        assert np.array_equal(np.random.default_rng(a).random(4), np.random.default_rng(b).random(4))


def test_single_replicate_has_zero_sd():
    res = run_monte_carlo(ScenarioConfig("precision-uwar1", 2, 200, mc_reps=1, seed=2), FAST)
    assert res.sd_distance == 0.0
    assert res.n_failed == 0
    assert np.isfinite(res.mean_distance)


def test_monte_carlo_deterministic_and_worker_independent():
    cfg = ScenarioConfig("precision-uwar1", 2, 200, mc_reps=2, seed=3)
    r1 = run_monte_carlo(cfg, FAST)
    r2 = run_monte_carlo(cfg, FAST)
    r3 = run_monte_carlo(cfg, FAST, workers=2)
    d = [[r.distance for r in x.per_rep] for x in (r1, r2, r3)]
    assert d[0] == d[1] == d[2]
    assert r1.cell() == r3.cell()


def test_summarize_excludes_failures():
    results = [ReplicateResult(0, distance=1.0), ReplicateResult(1, distance=3.0),
               ReplicateResult(2, error="LinAlgError: boom")]
    out = summarize(results)
    assert out.mean_distance == 2.0
    assert out.sd_distance == pytest.approx(np.sqrt(2.0))
    assert out.n_failed == 1
    assert len(out.per_rep) == 3
    empty = summarize([ReplicateResult(0, error="x")])
    assert np.isnan(empty.mean_distance) and empty.n_failed == 1


def test_cell_format():
    assert MCResult(0.000123456, 0.0000456789).cell() == "0.0001235 (0.00004568)"


def test_compare_with_rw_deterministic():
    cfg = ScenarioConfig("precision-uwar1", 2, 250)
    seed = replicate_seeds(1, 1)[0]
    c1 = compare_with_rw(0, seed, cfg, FAST)
    c2 = compare_with_rw(0, seed, cfg, FAST)
    assert c1.error is None
    assert (c1.avg_bf, c1.risk_uwar, c1.risk_rw) == (c2.avg_bf, c2.risk_uwar, c2.risk_rw)
    assert c1.avg_bf > 0 and c1.risk_uwar > 0 and c1.risk_rw > 0
