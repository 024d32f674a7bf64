"""
Command line interface.

Subcommands
-----------
fit        filter and estimate a return file for one or more discount factors
simulate   Monte Carlo distance table for the simulation scenarios
compare    criteria table for two or more saved fit runs
diagnose   recompute the criteria of one saved fit run

Every option may also be given in a ``--config`` file of ``key = value``
lines (keys are option names without the leading dashes; ``#`` starts a
comment).  Command line options override the file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from uwar import __version__
from uwar.diagnostics import (
    PortfolioConfig,
    average_bayes_factor,
    log_posterior_from_run,
    portfolio_run,
)
from uwar.estimator import ARPrior, RefitSchedule, fit_sequential
from uwar.filter import LambdaPolicy, filter_run, make_hyperparams
from uwar.io import (
    RETURN_KINDS,
    fmt,
    ingest_prices,
    read_csv,
    sig4,
    write_csv,
    write_json,
    write_run_files,
)
from uwar.simulation import SCENARIOS, EstimatorConfig, ScenarioConfig, run_monte_carlo

logger = logging.getLogger("uwar")

COMPARE_COLUMNS = ("run", "lp", "avg_bf", "avg_risk", "sharpe", "conditional_sharpe")


def parse_delta_grid(text: str) -> list:
    vals = [float(v) for v in str(text).split(",") if v.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty delta grid")
    for d in vals:
        if not 2.0 / 3.0 < d < 1.0:
            raise argparse.ArgumentTypeError(f"delta {d} outside (2/3, 1)")
    return vals


def parse_int_list(text: str) -> list:
    return [int(v) for v in str(text).split(",") if v.strip()]


def parse_scenarios(text: str) -> list:
    if text == "all":
        return list(SCENARIOS)
    out = [s.strip() for s in text.split(",") if s.strip()]
    for s in out:
        if s not in SCENARIOS:
            raise argparse.ArgumentTypeError(f"unknown scenario {s!r}; choose from {', '.join(SCENARIOS)}")
    return out


def read_config(path) -> dict:
    out = {}
    for i, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{i}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _estimation_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prior-mean", type=float, default=0.0, help="prior mean M = value * I (default 0)")
    p.add_argument("--prior-scale", type=float, default=1000.0,
                   help="prior covariances V = W = value * I (default 1000, a vague prior)")
    p.add_argument("--tol", type=float, default=1e-4, help="Newton stopping tolerance on ||step||_F (default 1e-4)")
    p.add_argument("--max-iter", type=int, default=50, help="Newton iterations per refit (default 50)")
    p.add_argument("--refit-every", type=int, default=1,
                   help="re-estimate A every m steps; 0 never refits (default 1, every step)")
    p.add_argument("--min-history", type=int, default=20,
                   help="observations required before the first refit (default 20)")
    p.add_argument("--form", choices=("predictive", "kernel"), default="predictive",
                   help="log posterior of A used by Newton (default predictive)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uwar", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="filter a price or return file")
    fit.add_argument("input", help="CSV: header row, date column, one column per series")
    fit.add_argument("--config", help="key = value file with defaults for these options")
    fit.add_argument("--delta", type=parse_delta_grid, default=[0.8],
                     help="discount factor or comma separated grid, each in (2/3, 1) (default 0.8)")
    fit.add_argument("--ar-order", type=int, default=1, help="AR order d; only d = 1 is fitted (default 1)")
    fit.add_argument("--model", choices=("uwar", "rw"), default="uwar",
                     help="uwar estimates A; rw fixes A = I (default uwar)")
    fit.add_argument("--burn-in", type=int, default=100,
                     help="returns used for the mean and covariance estimates (default 100)")
    fit.add_argument("--lambda", dest="lam", default="zero",
                     help="'zero' or a CSV file with a p x p matrix added to every prior scale (default zero)")
    fit.add_argument("--target-return", type=float, default=0.001,
                     help="portfolio target expected return per step (default 0.001)")
    fit.add_argument("--returns", choices=RETURN_KINDS, default="log",
                     help="log or arith returns from prices, or precomputed returns (default log)")
    fit.add_argument("--lp-trace", choices=("face", "wishart"), default="face",
                     help="prior trace term of the log posterior: 'face' as printed, 'wishart' "
                          "scale-free (default face)")
    fit.add_argument("--seed", type=int, default=0, help="recorded in the summary; fitting uses no randomness")
    fit.add_argument("--out", required=True, help="output directory")
    _estimation_options(fit)

    sim = sub.add_parser("simulate", help="Monte Carlo distance table")
    sim.add_argument("--config", help="key = value file with defaults for these options")
    sim.add_argument("--scenario", type=parse_scenarios, default=list(SCENARIOS),
                     help=f"comma separated subset of {', '.join(SCENARIOS)} or 'all' (default all)")
    sim.add_argument("--p", type=parse_int_list, default=[3], help="dimension(s), comma separated (default 3)")
    sim.add_argument("--N", type=int, default=1000, help="observations per path including burn-in (default 1000)")
    sim.add_argument("--reps", type=int, default=20, help="replicates per cell (default 20)")
    sim.add_argument("--delta", type=float, default=0.8, help="true and fitted discount factor (default 0.8)")
    sim.add_argument("--burn-in", type=int, default=100, help="calibration observations (default 100)")
    sim.add_argument("--floor", type=float, default=0.01,
                     help="Lambda of the generator as a fraction of the starting matrix (default 0.01)")
    sim.add_argument("--seed", type=int, default=0, help="master seed; replicates are matched across scenarios")
    sim.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    sim.add_argument("--out", required=True, help="output directory")
    _estimation_options(sim)

    cmp_ = sub.add_parser("compare", help="criteria table for saved fit runs")
    cmp_.add_argument("runs", nargs="+", help="run directories written by 'fit' (at least two)")
    cmp_.add_argument("--out", required=True, help="output CSV file")

    dia = sub.add_parser("diagnose", help="recompute criteria of one saved run")
    dia.add_argument("run", help="run directory written by 'fit'")
    dia.add_argument("--against", help="second run directory for Bayes factors")
    dia.add_argument("--out", help="output JSON file (default: <run>/diagnostics.json)")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    cfg_path = getattr(args, "config", None)
    if not cfg_path:
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, val in read_config(cfg_path).items():
        if key not in known or key in ("config", "help"):
            raise SystemExit(f"{cfg_path}: unknown option {key!r} for '{args.command}'")
        action = known[key]
        defaults[key] = action.type(val) if action.type else val
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _prior(args, p: int) -> ARPrior:
    return ARPrior.vague(p, scale=args.prior_scale, mean=args.prior_mean)


def _schedule(args) -> RefitSchedule:
    if args.refit_every == 0:
        return RefitSchedule.never()
    if args.refit_every < 0:
        raise ValueError("--refit-every must be >= 0")
    return RefitSchedule(every=args.refit_every, min_history=args.min_history)


def _lambda_policy(spec: str, p: int) -> LambdaPolicy:
    if spec == "zero":
        return LambdaPolicy.zero()
    lam = np.atleast_2d(np.loadtxt(spec, delimiter=",", dtype=float))
    if lam.shape != (p, p):
        raise ValueError(f"{spec}: Lambda must be {p} x {p}, got {lam.shape}")
    return LambdaPolicy.fixed(lam)


def _delta_label(d: float) -> str:
    return f"delta_{d:g}"


def cmd_fit(args) -> int:
    if args.ar_order != 1:
        raise ValueError("only --ar-order 1 can be fitted; higher orders are available in 'simulate'")
    series, report = ingest_prices(args.input, args.burn_in, args.returns)
    p = series.p
    lam = _lambda_policy(args.lam, p)
    pcfg = PortfolioConfig(args.target_return, series.mu_hat)
    out = Path(args.out)
    logger.info("fit: %d rows in, %d analyzed, p=%d", report.rows_in, report.rows_analyzed, p)
    results = []
    for delta in args.delta:
        hp = make_hyperparams(delta, p)
        if args.model == "rw":
            run = filter_run(series, np.eye(p), hp, lam)
            reports = []
        else:
            fit = fit_sequential(series, _prior(args, p), hp, _schedule(args), lam=lam,
                                 tol=args.tol, max_iter=args.max_iter, form=args.form)
            run, reports = fit.run, fit.reports
        lp = log_posterior_from_run(run, series.sigma0_hat, prior_trace=args.lp_trace)
        port = portfolio_run(run.forecast_cov, series.values, pcfg)
        results.append((delta, run, lp, port, reports))
    anchor = results[0][1]
    table = {}
    for delta, run, lp, port, reports in results:
        bf = np.exp(run.log_pred - anchor.log_pred)
        iters = [r.iterations for r in reports]
        summary = {
            "delta": delta,
            "p": p,
            "model": args.model,
            "n_obs": series.n_obs,
            "rows_in": report.rows_in,
            "burn_in": args.burn_in,
            "columns": list(report.columns),
            "lp": lp.value,
            "lp_degenerate_steps": len(lp.degenerate_steps),
            "log_likelihood": float(np.sum(run.log_pred)),
            "avg_bf_vs_first": average_bayes_factor(bf),
            "avg_risk": port.avg_risk,
            "sharpe": port.sharpe,
            "conditional_sharpe": port.conditional_sharpe,
            "refits": len(reports),
            "iterations_min": min(iters) if iters else 0,
            "iterations_max": max(iters) if iters else 0,
            "iterations_mean": float(np.mean(iters)) if iters else 0.0,
            "not_converged": sum(not r.converged for r in reports),
            "A_final": run.A_path[-1].tolist(),
            "seed": args.seed,
            "config": _echo(args),
        }
        steps = {
            "log_pred": run.log_pred,
            "risk": port.risk_path,
            "realized_return": port.realized_returns,
        }
        write_run_files(out / _delta_label(delta), list(report.columns), run, steps, summary)
        table[delta] = summary
    if len(results) > 1:
        deltas = [r[0] for r in results]
        rows = [
            ["LP", *[table[d]["lp"] for d in deltas]],
            ["Risk", *[table[d]["avg_risk"] for d in deltas]],
            ["avg BF", *[table[d]["avg_bf_vs_first"] for d in deltas]],
            ["Sharpe", *[table[d]["sharpe"] for d in deltas]],
            ["conditional Sharpe", *[table[d]["conditional_sharpe"] for d in deltas]],
        ]
        write_csv(out / "comparison.csv", ["criterion", *[repr(d) for d in deltas]], rows)
    for d in table:
        print(f"delta={d:g}  LP={sig4(table[d]['lp'])}  Risk={sig4(table[d]['avg_risk'])}  "
              f"Sharpe={sig4(table[d]['sharpe'])}")
    return 0


def _echo(args) -> dict:
    skip = {"func", "verbose", "out", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def cmd_simulate(args) -> int:
    est = EstimatorConfig(prior_scale=args.prior_scale, prior_mean=args.prior_mean,
                          refit_every=args.refit_every or 10**9, min_history=args.min_history,
                          tol=args.tol, max_iter=args.max_iter, form=args.form, lambda_floor=args.floor)
    out = Path(args.out)
    cells, per_rep, failed = {}, [], {}
    for p in args.p:
        for sc in args.scenario:
            cfg = ScenarioConfig(sc, p, args.N, args.delta, args.reps, seed=args.seed,
                                 burn_in=args.burn_in, floor=args.floor)
            res = run_monte_carlo(cfg, est, workers=args.workers)
            cells[(p, sc)] = res
            failed[f"{sc}/p={p}"] = res.n_failed
            for r in res.per_rep:
                per_rep.append([sc, str(p), str(r.rep), r.distance, str(r.max_iterations),
                                str(r.all_converged).lower(), r.error or ""])
            logger.info("%s p=%d: %s", sc, p, res.cell())
    rows = [[str(p), *[f"{sig4(cells[(p, s)].mean_distance)} ({sig4(cells[(p, s)].sd_distance)})"
                       for s in args.scenario]] for p in args.p]
    write_csv(out / "table.csv", ["p", *args.scenario], rows)
    write_csv(out / "per_rep.csv",
              ["scenario", "p", "rep", "distance", "max_iterations", "all_converged", "error"], per_rep)
    write_json(out / "summary.json", {
        "cells": {f"{s}/p={p}": {"mean": r.mean_distance, "sd": r.sd_distance, "n_failed": r.n_failed}
                  for (p, s), r in cells.items()},
        "failed": failed,
        "seed": args.seed,
        "config": _echo(args),
    })
    for row in rows:
        print(", ".join(row))
    return 0


def _load_run(path):
    import json

    d = Path(path)
    summary = json.loads((d / "summary.json").read_text(encoding="utf-8"))
    header, dates, values = read_csv(d / "steps.csv")
    cols = {h: values[:, i] for i, h in enumerate(header[1:])}
    return summary, dates, cols


def _criteria(summary, cols, anchor_cols) -> dict:
    bf = np.exp(cols["log_pred"] - anchor_cols["log_pred"])
    realized = cols["realized_return"]
    sd = float(np.std(realized, ddof=1)) if realized.size > 1 else 0.0
    m = summary["config"]["target_return"]
    return {
        "lp": summary["lp"] if summary["lp"] is not None else float("nan"),
        "avg_bf": average_bayes_factor(bf),
        "avg_risk": float(np.mean(cols["risk"])),
        "sharpe": float(np.mean(realized) / sd) if sd > 0 else float("nan"),
        # w' mu = m for every step, so the conditional ratio only needs the risk path
        "conditional_sharpe": float(np.mean(m / np.sqrt(cols["risk"]))),
    }


def cmd_compare(args) -> int:
    if len(args.runs) < 2:
        raise ValueError("compare needs at least two run directories")
    loaded = [_load_run(r) for r in args.runs]
    s0, d0, c0 = loaded[0]
    for path, (s, d, _) in zip(args.runs[1:], loaded[1:]):
        if s["p"] != s0["p"] or d != d0:
            raise ValueError(f"{path} does not share dimension and dates with {args.runs[0]}")
    crit = [_criteria(s, c, c0) for s, _, c in loaded]
    best = {
        "lp": int(np.nanargmax([c["lp"] for c in crit])),
        "avg_bf": int(np.nanargmax([c["avg_bf"] for c in crit])),
        "avg_risk": int(np.nanargmin([c["avg_risk"] for c in crit])),
        "sharpe": int(np.nanargmax([c["sharpe"] for c in crit])),
    }
    header = [*COMPARE_COLUMNS, "best_lp", "best_bf", "best_risk", "best_sharpe"]
    rows = []
    for i, (path, c) in enumerate(zip(args.runs, crit)):
        flags = ["*" if best[k] == i else "" for k in ("lp", "avg_bf", "avg_risk", "sharpe")]
        rows.append([str(path), *[c[k] for k in COMPARE_COLUMNS[1:]], *flags])
    write_csv(args.out, header, rows)
    for r in rows:
        print(r[0], *[sig4(x) for x in r[1:6]], *r[6:])
    return 0


def cmd_diagnose(args) -> int:
    summary, dates, cols = _load_run(args.run)
    anchor = cols
    if args.against:
        s2, d2, c2 = _load_run(args.against)
        if d2 != dates or s2["p"] != summary["p"]:
            raise ValueError(f"{args.against} does not share dimension and dates with {args.run}")
        anchor = c2
    crit = _criteria(summary, cols, anchor)
    crit["against"] = args.against
    out = args.out or str(Path(args.run) / "diagnostics.json")
    write_json(out, crit)
    for k in COMPARE_COLUMNS[1:]:
        print(f"{k}: {sig4(crit[k])}")
    return 0


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "compare": cmd_compare, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"uwar {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
