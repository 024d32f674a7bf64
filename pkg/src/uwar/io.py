"""
File input and output: price ingestion, atomic CSV/JSON writers and the
per-run output set.

Numbers are written with 17 significant digits so every CSV value reads
back to the same double.  Files are written to a temporary name in the
target directory and renamed into place, so a failed command never leaves a
partial file behind.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from uwar.filter import ReturnSeries

__all__ = [
    "RETURN_KINDS",
    "IngestReport",
    "fmt",
    "sig4",
    "parse_float",
    "ingest_prices",
    "series_from_returns",
    "atomic_write_text",
    "write_csv",
    "read_csv",
    "write_json",
    "volatility_rows",
    "correlation_rows",
    "a_path_rows",
    "write_run_files",
]

RETURN_KINDS = ("log", "arith", "precomputed")
_MISSING = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class IngestReport:
    rows_in: int
    burn_in: int
    rows_analyzed: int
    return_kind: str
    columns: tuple


def fmt(x) -> str:
    """Full-precision decimal text; ``nan``/``inf`` spelled as Python does."""
    x = float(x)
    if not math.isfinite(x):
        return repr(x)
    return format(x, ".17g")


def sig4(x) -> str:
    """Four significant digits without exponent notation, for display tables."""
    x = float(x)
    if not math.isfinite(x):
        return repr(x)
    return np.format_float_positional(x, precision=4, unique=False, fractional=False, trim="-")


def parse_float(text: str, where: str) -> float:
    s = text.strip()
    if s.lower() in _MISSING:
        raise ValueError(f"missing value at {where}")
    try:
        return float(s)
    except ValueError as exc:
        raise ValueError(f"not a number at {where}: {text!r}") from exc


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header row and at least one data row")
    header = [c.strip() for c in rows[0]]
    if len(header) < 2:
        raise ValueError(f"{path}: need a date column and at least one value column")
    dates, values = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}: line {i} has {len(row)} fields, expected {len(header)}")
        dates.append(row[0].strip())
        values.append([parse_float(c, f"{path}:{i}:{j + 2}") for j, c in enumerate(row[1:])])
    return header, dates, np.array(values, dtype=float)


def series_from_returns(returns, dates, burn_in: int, return_kind: str) -> ReturnSeries:
    """Split returns into a calibration head (mean, covariance) and the analysis series."""
    r = np.atleast_2d(np.asarray(returns, dtype=float))
    if burn_in < 2:
        raise ValueError("burn_in must be at least 2 to estimate a covariance")
    if r.shape[0] <= burn_in:
        raise ValueError(f"{r.shape[0]} returns leave nothing to analyze after burn_in={burn_in}")
    head = r[:burn_in]
    sigma0 = np.atleast_2d(np.cov(head, rowvar=False))
    if np.min(np.linalg.eigvalsh(sigma0)) <= 0:
        raise ValueError("burn-in sample covariance is not positive definite; use a longer burn-in")
    return ReturnSeries(r[burn_in:], head.mean(axis=0), sigma0, dates=list(dates[burn_in:]),
                        return_kind=return_kind)


def ingest_prices(path, burn_in: int, return_kind: str = "log"):
    """
    Read a price (or return) CSV and build the analysis series.

    The first column holds date labels and the remaining columns the
    series.  With ``"log"`` or ``"arith"`` the file holds positive prices
    and one row is lost to differencing, so
    ``rows_in = burn_in + 1 + rows_analyzed``.  With ``"precomputed"`` the
    values are returns already.

    Returns
    -------
    series : ReturnSeries
    report : IngestReport
    """
    if return_kind not in RETURN_KINDS:
        raise ValueError(f"return_kind must be one of {RETURN_KINDS}, got {return_kind!r}")
    header, dates, values = _read_table(path)
    if return_kind == "precomputed":
        returns, ret_dates = values, dates
    else:
        if np.any(values <= 0):
            bad = np.argwhere(values <= 0)[0]
            raise ValueError(f"{path}: non-positive price on line {bad[0] + 2}, column {bad[1] + 2}")
        if return_kind == "log":
            returns = np.diff(np.log(values), axis=0)
        else:
            returns = values[1:] / values[:-1] - 1.0
        ret_dates = dates[1:]
    series = series_from_returns(returns, ret_dates, burn_in,
                                 "arithmetic" if return_kind == "arith" else "log")
    report = IngestReport(rows_in=len(dates), burn_in=burn_in, rows_analyzed=series.n_obs,
                          return_kind=return_kind, columns=tuple(header[1:]))
    return series, report


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    atomic_write_text(path, buf.getvalue())


def read_csv(path):
    """``(header, dates, values)`` of a CSV written by :func:`write_csv`."""
    return _read_table(path)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def volatility_rows(dates, cov_path):
    sd = np.sqrt(np.diagonal(cov_path, axis1=1, axis2=2))
    return [[d, *row] for d, row in zip(dates, sd)]


def correlation_rows(dates, cov_path):
    """Upper-triangle correlations in row-major order ``(1,2), (1,3), .., (p-1,p)``."""
    p = cov_path.shape[1]
    iu = np.triu_indices(p, 1)
    sd = np.sqrt(np.diagonal(cov_path, axis1=1, axis2=2))
    corr = cov_path / (sd[:, :, None] * sd[:, None, :])
    return [[d, *c[iu]] for d, c in zip(dates, corr)]


def a_path_rows(dates, a_path):
    """``vec(A_t)`` (column-major) per step."""
    n = a_path.shape[0]
    flat = np.transpose(a_path, (0, 2, 1)).reshape(n, -1)
    return [[d, *row] for d, row in zip(dates, flat)]


def write_run_files(out_dir, names, run, steps: dict, summary: dict) -> None:
    """
    Write ``volatilities.csv``, ``correlations.csv``, ``A_path.csv``,
    ``steps.csv`` and ``summary.json`` for one run.

    ``steps`` maps column names to per-step arrays (log predictive density,
    portfolio risk, realized return, ...).
    """
    out = Path(out_dir)
    p = run.R.shape[1]
    dates = run.dates
    write_csv(out / "volatilities.csv", ["date", *[f"vol_{n}" for n in names]],
              volatility_rows(dates, run.forecast_cov))
    pairs = [f"corr_{names[i]}_{names[j]}" for i, j in zip(*np.triu_indices(p, 1))]
    write_csv(out / "correlations.csv", ["date", *pairs], correlation_rows(dates, run.forecast_cov))
    a_cols = [f"A_{r + 1}_{c + 1}" for c in range(p) for r in range(p)]
    write_csv(out / "A_path.csv", ["date", *a_cols], a_path_rows(dates, run.A_path))
    keys = list(steps)
    cols = [np.asarray(steps[k], dtype=float) for k in keys]
    write_csv(out / "steps.csv", ["date", *keys], [[d, *[c[i] for c in cols]] for i, d in enumerate(dates)])
    write_json(out / "summary.json", summary)
