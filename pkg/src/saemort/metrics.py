"""Simulation performance measures on log mortality rates."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

MEASURES = ("bias", "empSE", "RMSE", "covCI", "widCI")
LONG_COLUMNS = ["method", "dk", "exposure", "region", "year", "age_or_group", "measure", "value", "n_effective"]
WIDTH_DEFINITION = "mean over replicates of |upper - lower| with bounds on the log-rate scale"


def _vec(x, min_size: int = 1, name: str = "estimates") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] < min_size:
        raise ValueError(f"need at least {min_size} {name}, got {x.shape[0]}")
    return x


def bias(estimates, truth):
    """Mean of ``estimate - truth`` over replicates (axis 0)."""
    return np.mean(_vec(estimates) - truth, axis=0)


def emp_se(estimates):
    """Sample standard deviation over replicates (divisor n - 1)."""
    return np.std(_vec(estimates, 2), axis=0, ddof=1)


def rmse(estimates, truth):
    return np.sqrt(np.mean((_vec(estimates) - truth) ** 2, axis=0))


def _bounds(lowers, uppers):
    lo = _vec(lowers, 1, "intervals")
    hi = _vec(uppers, 1, "intervals")
    if lo.shape != hi.shape:
        raise ValueError("lower and upper bounds differ in shape")
    if np.any(lo > hi):
        raise ValueError("interval lower bound exceeds upper bound")
    return lo, hi


def coverage(lowers, uppers, truth):
    """Fraction of closed intervals ``[lower, upper]`` containing the truth."""
    lo, hi = _bounds(lowers, uppers)
    return np.mean((lo <= truth) & (truth <= hi), axis=0)


def width(lowers, uppers):
    lo, hi = _bounds(lowers, uppers)
    return np.mean(np.abs(hi - lo), axis=0)


@dataclass(frozen=True)
class E0Summary:
    """Boxplot statistics (Tukey whiskers) of a life-expectancy sample."""

    minimum: float
    whisker_low: float
    q1: float
    median: float
    q3: float
    whisker_high: float
    maximum: float
    truth: float
    n: int

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def summarize_e0(values, truth: float) -> E0Summary:
    v = np.sort(_vec(values, 1, "values"))
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return E0Summary(
        minimum=float(v[0]), whisker_low=float(inside.min()), q1=float(q1), median=float(med),
        q3=float(q3), whisker_high=float(inside.max()), maximum=float(v[-1]), truth=float(truth), n=int(v.size),
    )


def performance(estimates, lowers, uppers, truth, include=None) -> dict:
    """All five measures per target, over the included replicates.

    Parameters
    ----------
    estimates, lowers, uppers : array_like, shape (n_sim, n_targets)
    truth : array_like, shape (n_targets,)
    include : array_like of bool, shape (n_sim,), optional
        Replicates to keep (e.g. converged fits).
    """
    est = np.asarray(estimates, dtype=float)
    lo = np.asarray(lowers, dtype=float)
    hi = np.asarray(uppers, dtype=float)
    if include is not None:
        keep = np.asarray(include, dtype=bool)
        est, lo, hi = est[keep], lo[keep], hi[keep]
    n = est.shape[0]
    nan = np.full(np.shape(truth), np.nan)
    out = {
        "bias": bias(est, truth) if n >= 1 else nan,
        "empSE": emp_se(est) if n >= 2 else nan,
        "RMSE": rmse(est, truth) if n >= 1 else nan,
        "covCI": coverage(lo, hi, truth) if n >= 1 else nan,
        "widCI": width(lo, hi) if n >= 1 else nan,
    }
    out["n_effective"] = n
    return out


@dataclass
class PerformanceReport:
    """Long-format rows of performance measures."""

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=lambda: {"widCI": WIDTH_DEFINITION})

    def add(self, method: str, dk: str, exposure, region, year, labels, perf: dict) -> None:
        for m in MEASURES:
            vals = np.atleast_1d(perf[m])
            for lab, v in zip(labels, vals):
                self.rows.append((method, dk, exposure, region, year, lab, m, float(v), perf["n_effective"]))

    def select(self, **crit) -> list:
        idx = {k: i for i, k in enumerate(LONG_COLUMNS)}
        return [r for r in self.rows if all(r[idx[k]] == v for k, v in crit.items())]

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LONG_COLUMNS)
        for r in self.rows:
            w.writerow(list(r[:7]) + [repr(r[7]), r[8]])
