"""Monte Carlo experiments: estimator tables, tuning curves, histograms and
asymptotic variance curves.

Replication ``r`` of every experiment draws from ``RngStream(seed, r)``, so
results do not depend on how replications are spread over worker processes.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .estimators import EstimationResult, H_star, h0_estimate, iterate
from .likelihood import asymptotic_variance_H
from .model import SamplingScheme, Theta
from .simulate import RngStream, synthesize

HIST_BINS = 50


def _practical(obs, nu0):
    return H_star(obs, nu0)


def _guess(obs, nu0):
    return h0_estimate(obs)


def _iterative(obs, nu0):
    return iterate(obs)


ESTIMATORS: Dict[str, Callable] = {
    "practical": _practical,
    "guess": _guess,
    "iterative": _iterative,
}


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte Carlo design; every ``Theta`` in ``theta_grid`` is run with the
    same ``reps`` replication streams."""

    theta_grid: Tuple[Theta, ...]
    scheme: SamplingScheme
    reps: int = 500
    estimator: str = "practical"
    nu0: Tuple[float, ...] = (2.0,)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "theta_grid", tuple(self.theta_grid))
        object.__setattr__(self, "nu0", tuple(float(v) for v in self.nu0))
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not self.theta_grid or not self.nu0:
            raise ValueError("theta grid and nu0 list must be non-empty")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator '{self.estimator}'; choose from {sorted(ESTIMATORS)}")


@dataclass(frozen=True)
class SummaryRow:
    H: float
    tau: float
    estimator: str
    reps: int
    bias: float
    std: float
    rmse: float
    nan_pct: float


# --------------------------------------------------------------------------
# replication engine

def _one_rep(args) -> Tuple[float, bool]:
    theta, scheme, estimator, nu0, seed, rep = args
    obs = synthesize(theta, scheme, RngStream(seed, rep))
    res: EstimationResult = ESTIMATORS[estimator](obs, nu0)
    return res.H, res.failed


def _replicate(theta: Theta, spec: ExperimentSpec, estimator: str, nu0: float,
               pool: Optional[ProcessPoolExecutor]) -> Tuple[np.ndarray, np.ndarray]:
    jobs = [(theta, spec.scheme, estimator, nu0, spec.seed, r) for r in range(spec.reps)]
    if pool is None:
        out = [_one_rep(j) for j in jobs]
    else:
        out = list(pool.map(_one_rep, jobs, chunksize=max(1, spec.reps // (4 * spec.threads))))
    values = np.array([v for v, _ in out], dtype=float)
    failed = np.array([f for _, f in out], dtype=bool)
    return values, failed


class _Pool:
    """Process pool when ``threads > 1``, nothing otherwise."""

    def __init__(self, threads: int):
        self.threads = max(1, int(threads))
        self.pool = None

    def __enter__(self):
        if self.threads > 1:
            self.pool = ProcessPoolExecutor(max_workers=self.threads)
        return self.pool

    def __exit__(self, *exc):
        if self.pool is not None:
            self.pool.shutdown()


def summarize(values: np.ndarray, failed: np.ndarray, truth: float) -> Tuple[float, float, float, float]:
    """(bias, std, rmse, nan_pct) over the non-failed replications.

    ``std`` uses the ``1/N`` normalisation so that ``rmse^2 = bias^2 + std^2``.
    """
    ok = values[~failed] - truth
    nan_pct = 100.0 * failed.mean()
    if ok.size == 0:
        return float("nan"), float("nan"), float("nan"), nan_pct
    bias = float(ok.mean())
    std = float(ok.std())
    rmse = float(np.sqrt(np.mean(ok ** 2)))
    return bias, std, rmse, float(nan_pct)


# --------------------------------------------------------------------------
# experiments

def run_table(spec: ExperimentSpec) -> List[SummaryRow]:
    rows = []
    with _Pool(spec.threads) as pool:
        for theta in spec.theta_grid:
            values, failed = _replicate(theta, spec, spec.estimator, spec.nu0[0], pool)
            bias, std, rmse, nan_pct = summarize(values, failed, theta.H)
            rows.append(SummaryRow(theta.H, theta.tau, spec.estimator, spec.reps,
                                   bias, std, rmse, nan_pct))
    return rows


def run_mae_tuning(spec: ExperimentSpec) -> List[Tuple[float, float, float]]:
    """Rows ``(nu0, tau, mae)``; the error is pooled over the ``H`` values sharing a ``tau``."""
    taus = sorted({t.tau for t in spec.theta_grid})
    rows = []
    with _Pool(spec.threads) as pool:
        for nu0 in spec.nu0:
            for tau in taus:
                errs = []
                for theta in (t for t in spec.theta_grid if t.tau == tau):
                    values, failed = _replicate(theta, spec, spec.estimator, nu0, pool)
                    errs.append(np.abs(values[~failed] - theta.H))
                pooled = np.concatenate(errs)
                rows.append((nu0, tau, float(pooled.mean()) if pooled.size else float("nan")))
    return rows


def run_histogram(spec: ExperimentSpec, estimators: Optional[Sequence[str]] = None,
                  ) -> List[Tuple[float, str, float, float, int]]:
    """Rows ``(H, estimator, bin_lo, bin_hi, count)`` over 50 equal bins of [0, 1]."""
    names = [spec.estimator] if estimators is None else list(estimators)
    edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
    rows = []
    with _Pool(spec.threads) as pool:
        for theta in spec.theta_grid:
            for name in names:
                values, failed = _replicate(theta, spec, name, spec.nu0[0], pool)
                counts, _ = np.histogram(values[~failed], bins=edges)
                rows.extend((theta.H, name, float(lo), float(hi), int(c))
                            for lo, hi, c in zip(edges[:-1], edges[1:], counts))
    return rows


def run_variance_curve(H_grid: Iterable[float], K_list: Iterable[int]) -> List[Tuple[float, int, float]]:
    return [(float(H), int(K), asymptotic_variance_H(float(H), int(K)))
            for K in K_list for H in H_grid]


# --------------------------------------------------------------------------
# CSV output

TABLE_FIELDS = ("H", "tau", "estimator", "reps", "bias", "std", "rmse", "nan_pct")
TUNING_FIELDS = ("nu0", "tau", "mae")
HIST_FIELDS = ("H", "estimator", "bin_lo", "bin_hi", "count")
VARIANCE_FIELDS = ("H", "K", "variance")


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def write_rows(dest: TextIO, fields: Sequence[str], rows: Iterable[Sequence],
               header: Sequence[str] = ()) -> None:
    """Comment header lines, then a CSV with the given field order."""
    for line in header:
        dest.write(f"# {line}\n")
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        if isinstance(row, SummaryRow):
            row = [getattr(row, f) for f in fields]
        writer.writerow([_fmt(v) for v in row])


def rows_to_csv(fields: Sequence[str], rows: Iterable[Sequence], header: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    write_rows(buf, fields, rows, header)
    return buf.getvalue()


# --------------------------------------------------------------------------
# presets

TABLE_H = (0.05, 0.15, 0.3, 0.5, 0.7, 0.85)
TABLE_TAU = (0.1, 0.5, 1.0)


def preset(name: str, reps: Optional[int] = None, seed: int = 0, threads: int = 1,
           fast: bool = False) -> ExperimentSpec:
    """Experiment designs at ``n = 2^14``, ``sigma = 1``, ``K = 0``.

    ``fast`` lowers the default replication count from 500 to 100.
    """
    default_reps = 100 if fast else 500
    reps = default_reps if reps is None else reps
    scheme = SamplingScheme(2 ** 14)
    if name == "paper-table":
        grid = [Theta(H, 1.0, tau) for H in TABLE_H for tau in TABLE_TAU]
        return ExperimentSpec(grid, scheme, reps, "practical", (2.0,), seed, threads)
    if name == "paper-tuning":
        grid = [Theta(H, 1.0, tau) for tau in (0.1, 1.0) for H in TABLE_H]
        return ExperimentSpec(grid, scheme, reps, "practical", (2.0, 3.0, 4.0, 5.0, 6.0),
                              seed, threads)
    if name == "paper-histograms":
        grid = [Theta(H, 1.0, 0.1) for H in (0.15, 0.5, 0.85)]
        return ExperimentSpec(grid, scheme, reps, "practical", (2.0,), seed, threads)
    raise ValueError(f"unknown preset '{name}'")


PRESETS = ("paper-table", "paper-tuning", "paper-histograms")
VARCURVE_H = tuple(round(0.01 * i, 2) for i in range(1, 100))
VARCURVE_K = (0, 1, 2)
