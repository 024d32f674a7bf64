"""The compiled kernels and the pure-numpy fallback agree."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_pd
from uwar import kernels
from uwar.filter import make_hyperparams

SCRIPT = r"""
import json, sys
import numpy as np
import uwar
from uwar.estimator import ARPrior, RefitSchedule, fit_sequential
from uwar.filter import LambdaPolicy, make_hyperparams
from uwar.simulation import ScenarioConfig, calibrate, generate_precision_uwar, simulate_scenario

cfg = ScenarioConfig("precision-uwar2", 2, 220)
path = simulate_scenario(np.random.default_rng(12), cfg)
ser = calibrate(path.y, 60)
hp = make_hyperparams(0.8, 2)
lam = LambdaPolicy.fixed(0.01 * np.linalg.inv(ser.sigma0_hat) / hp.prior_df)
fit = fit_sequential(ser, ARPrior.vague(2), hp, RefitSchedule(every=5, min_history=20), lam=lam)
comp = generate_precision_uwar(np.random.default_rng(3), path.a_list, 0.8, np.eye(2), 30, 0.01 * np.eye(2),
                               shock="companion")
json.dump({"backend": uwar.BACKEND, "sigma": path.sigma.tolist(), "a": fit.A_path.tolist(),
           "log_pred": fit.run.log_pred.tolist(), "iters": list(fit.iterations),
           "companion": comp.tolist()}, sys.stdout)
"""


def _run(disable: bool) -> dict:
    env = dict(os.environ)
    env["UWAR_DISABLE_NUMBA"] = "1" if disable else "0"
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, check=True, capture_output=True,
                         text=True, timeout=600)
    return json.loads(out.stdout)


def test_env_flag_selects_backend_and_results_agree():
    fast = _run(disable=False)
    slow = _run(disable=True)
    assert slow["backend"] == "numpy"
    assert fast["backend"] == kernels.BACKEND
    assert np.allclose(fast["sigma"], slow["sigma"], rtol=1e-10, atol=0)
    assert np.allclose(fast["companion"], slow["companion"], rtol=1e-10, atol=0)
    # Newton stops at ||step|| < 1e-4; summation order moves the mode far less than that
    assert np.max(np.abs(np.array(fast["a"]) - np.array(slow["a"]))) < 1e-5
    assert np.max(np.abs(np.array(fast["log_pred"]) - np.array(slow["log_pred"]))) < 1e-4
    assert fast["iters"] == slow["iters"]


@pytest.mark.skipif(kernels.BACKEND != "numba", reason="numba not active")
def test_compiled_filter_matches_python_loop(rng):
    p, n = 3, 40
    resid = 0.01 * rng.standard_normal((n, p))
    a_path = np.broadcast_to(0.9 * np.eye(p) + 0.05 * rng.standard_normal((p, p)), (n, p, p)).copy()
    lam = np.broadcast_to(0.1 * np.eye(p), (n, p, p)).copy()
    f0 = random_pd(rng, p)
    k = make_hyperparams(0.8, p).k
    got = kernels.filter_loop(resid, a_path, lam, f0, k)
    ref = kernels.filter_loop_py(resid, a_path, lam, f0, k)
    for x, y in zip(got[:4], ref[:4]):
        assert np.allclose(x, y, rtol=1e-12, atol=0)
    assert got[4:] == ref[4:]


def test_history_terms_loop_matches_numpy(rng):
    p, t_len = 3, 25
    hp = make_hyperparams(0.85, p)
    a = np.eye(p) + 0.1 * rng.standard_normal((p, p))
    fs = np.array([random_pd(rng, p) for _ in range(t_len)])
    es = rng.standard_normal((t_len, p))
    lams = np.array([0.05 * random_pd(rng, p) for _ in range(t_len)])
    for gamma in (1.0, hp.s):
        loop = kernels.history_terms_loop(a, fs, es, lams, hp.k, hp.s, gamma, True)
        vec = kernels.history_terms_numpy(a, fs, es, lams, hp.k, hp.s, gamma, True)
        compiled = kernels.history_terms(a, fs, es, lams, hp.k, hp.s, gamma, True)
        for ref in (vec, compiled):
            assert ref[3] and loop[3]
            assert ref[0] == pytest.approx(loop[0], rel=1e-12)
            assert np.allclose(ref[1], loop[1], rtol=1e-10, atol=1e-12)
            assert np.allclose(ref[2], loop[2], rtol=1e-10, atol=1e-12)


def test_history_terms_flags_non_pd(rng):
    p = 2
    fs = np.array([np.eye(p)])
    lams = np.array([-10.0 * np.eye(p)])
    es = np.ones((1, p))
    for fn in (kernels.history_terms_loop, kernels.history_terms_numpy):
        assert not fn(np.eye(p), fs, es, lams, 1.2, 5.0, 1.0, False)[3]
