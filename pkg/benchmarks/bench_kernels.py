"""
Time the hot kernels under both backends.

Each backend runs in its own interpreter because the backend is chosen at
import time from ``UWAR_DISABLE_NUMBA``.  Numba compilation is excluded by a
warm-up call.

    python3 benchmarks/bench_kernels.py --repeat 5
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, timeit
import numpy as np
from uwar import kernels
from uwar.filter import LambdaPolicy, ReturnSeries, filter_run, make_hyperparams
from uwar.simulation import generate_precision_uwar

n_obs, p, t_hist, repeat = (int(x) for x in sys.argv[1:5])
rng = np.random.default_rng(0)
hp = make_hyperparams(0.8, p)
ser = ReturnSeries(0.01 * rng.standard_normal((n_obs, p)), np.zeros(p), 1e-4 * np.eye(p))
lam = LambdaPolicy.fixed(np.eye(p))
a = 0.98 * np.eye(p)
m = rng.standard_normal((t_hist, p, p))
fs = np.einsum("tji,tjk->tik", m, m) + np.eye(p)
es = rng.standard_normal((t_hist, p))
lams = np.broadcast_to(0.1 * np.eye(p), (t_hist, p, p)).copy()
phi0 = np.eye(p)

cases = {
    "filter_run": lambda: filter_run(ser, a, hp, lam),
    "history_terms+hessian": lambda: kernels.history_terms(a, fs, es, lams, hp.k, hp.s, 1.0, True),
    "uwar1_path": lambda: generate_precision_uwar(np.random.default_rng(1), [a], 0.8, phi0, n_obs, 0.01 * phi0),
    "uwar2_path": lambda: generate_precision_uwar(np.random.default_rng(1), [0.8 * a, 0.6 * a], 0.8, phi0,
                                                  n_obs, 0.01 * phi0),
}
out = {"backend": kernels.BACKEND}
for name, fn in cases.items():
    fn()
    out[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
json.dump(out, sys.stdout)
"""


def run_backend(disable: bool, args) -> dict:
    env = dict(os.environ, UWAR_DISABLE_NUMBA="1" if disable else "0")
    argv = [sys.executable, "-c", WORKER, str(args.n_obs), str(args.p), str(args.history), str(args.repeat)]
    res = subprocess.run(argv, env=env, check=True, capture_output=True, text=True)
    return json.loads(res.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n-obs", type=int, default=5000, help="steps for the filter and path kernels")
    ap.add_argument("--p", type=int, default=3, help="dimension")
    ap.add_argument("--history", type=int, default=1000, help="history length for the estimator sums")
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats (best is reported)")
    args = ap.parse_args()
    fast = run_backend(False, args)
    slow = run_backend(True, args)
    print(f"n_obs={args.n_obs} p={args.p} history={args.history} (best of {args.repeat})")
    print(f"{'kernel':<24}{fast['backend'] + ' [ms]':>14}{slow['backend'] + ' [ms]':>14}{'speed-up':>10}")
    for name in (k for k in fast if k != "backend"):
        f, s = 1e3 * fast[name], 1e3 * slow[name]
        print(f"{name:<24}{f:>14.2f}{s:>14.2f}{s / f:>10.1f}")


if __name__ == "__main__":
    main()
