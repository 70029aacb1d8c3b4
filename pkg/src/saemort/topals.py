"""Frequentist TOPALS regression: ``log m = lambda_std + B alpha``."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .knowledge import StandardSchedule
from .lifetable import CANONICAL_GROUPING, OMEGA, AgeGrouping
from .optim import ConvergenceError, PoissonProblem, newton_maximize, spd_inverse
from .splines import difference_matrix, linear_bspline_basis

Z95 = 1.959964
DEFAULT_KNOTS = (0, 1, 10, 20, 40, 70, 99)


@dataclass(frozen=True)
class TopalsBasis:
    knots: tuple = DEFAULT_KNOTS
    kappa: float = 1.0
    B: np.ndarray = field(init=False, repr=False)
    P: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        B = linear_bspline_basis(np.arange(OMEGA), self.knots)
        if np.linalg.matrix_rank(B) < B.shape[1]:
            raise ValueError("TOPALS basis is rank deficient for these knots")
        D = difference_matrix(B.shape[1], 1)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "P", self.kappa * D.T @ D)

    @property
    def S(self) -> int:
        return self.B.shape[1]


@dataclass
class FitResult:
    """Point estimates and Wald intervals for single-year log rates."""

    coef: np.ndarray
    log_rates: np.ndarray
    cov: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    iterations: int
    converged: bool
    objective_trace: list = field(default_factory=list)
    method: str = "topals"
    estimator: str = ""

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def wald_bounds(point, cov, z: float = Z95):
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return point - z * se, point + z * se


def topals_problem(d, n, std: StandardSchedule, basis: TopalsBasis, scheme: AgeGrouping | None = None) -> PoissonProblem:
    A = None if scheme is None else scheme.averaging()
    return PoissonProblem(basis.B, d, n, offset=std.log_rates, P=basis.P, A=A)


def _fit(problem: PoissonProblem, X: np.ndarray, max_iter: int, gtol: float, strict: bool, method: str, start) -> FitResult:
    res = newton_maximize(problem, start, max_iter=max_iter, gtol=gtol)
    if strict and not res.converged:
        raise ConvergenceError(f"{method} fit did not converge in {max_iter} iterations")
    try:
        cov_coef = spd_inverse(res.information)
    except np.linalg.LinAlgError:
        if strict:
            raise np.linalg.LinAlgError("penalized information is singular") from None
        cov_coef = np.full_like(res.information, np.nan)
        res.converged = False
    point = problem.log_rates(res.theta)
    cov = X @ cov_coef @ X.T
    lo, hi = wald_bounds(point, cov)
    return FitResult(
        coef=res.theta, log_rates=point, cov=cov, lower=lo, upper=hi,
        iterations=res.iterations, converged=res.converged, objective_trace=res.trace, method=method,
    )


def fit_topals_single(d, n, std: StandardSchedule, basis: TopalsBasis = TopalsBasis(),
                      max_iter: int = 100, gtol: float = 1e-8, strict: bool = False) -> FitResult:
    """Penalized ML fit on single-year counts (ages 0..99).

    With ``strict=False`` a non-converged fit is returned with
    ``converged=False`` instead of raising.
    """
    problem = topals_problem(d, n, std, basis)
    return _fit(problem, basis.B, max_iter, gtol, strict, "topals", np.zeros(basis.S))


def fit_topals_grouped(d_g, n_g, std: StandardSchedule, basis: TopalsBasis = TopalsBasis(),
                       scheme: AgeGrouping = CANONICAL_GROUPING, max_iter: int = 100,
                       gtol: float = 1e-8, strict: bool = False) -> FitResult:
    """Fit on grouped counts; group rates are unweighted means of single-year rates."""
    problem = topals_problem(d_g, n_g, std, basis, scheme)
    return _fit(problem, basis.B, max_iter, gtol, strict, "topals", np.zeros(basis.S))


FIT_COLUMNS = ["region", "year", "age", "point", "se", "lower", "upper", "converged", "iterations"]


def write_fits_csv(rows, fh, with_estimator: bool = False) -> None:
    """``rows`` are ``(region, year, FitResult)`` triples."""
    w = csv.writer(fh, lineterminator="\n")
    cols = FIT_COLUMNS + (["estimator"] if with_estimator else [])
    w.writerow(cols)
    for region, year, fit in rows:
        se = fit.se
        for x in range(fit.log_rates.size):
            row = [region, year, x, repr(float(fit.log_rates[x])), repr(float(se[x])),
                   repr(float(fit.lower[x])), repr(float(fit.upper[x])), int(fit.converged), fit.iterations]
            if with_estimator:
                row.append(fit.estimator)
            w.writerow(row)
