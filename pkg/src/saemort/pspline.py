"""Poisson P-spline smoothing of single-year death rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lifetable import MortalitySchedule
from .optim import ConvergenceError, PoissonProblem, newton_maximize
from .splines import bspline_basis, difference_matrix


@dataclass(frozen=True)
class SmootherConfig:
    basis_knot_spacing: int = 5
    spline_degree: int = 3
    penalty_order: int = 2
    lambda_grid: tuple = tuple(np.logspace(-2, 7, 37))
    selection: str = "BIC"
    fixed_lambda: float = 10.0
    max_iter: int = 50

    def __post_init__(self):
        grid = np.asarray(self.lambda_grid, dtype=float)
        if grid.size == 0 or np.any(grid <= 0):
            raise ValueError("lambda_grid must be non-empty and strictly positive")
        if self.selection not in ("BIC", "fixed_lambda"):
            raise ValueError(f"unknown selection rule {self.selection!r}")
        object.__setattr__(self, "lambda_grid", tuple(grid))


@dataclass
class SmoothFit:
    log_rates: np.ndarray
    theta: np.ndarray
    lam: float
    bic: float
    edf: float
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)


def smoother_problem(d, n, lam: float, cfg: SmootherConfig = SmootherConfig()) -> PoissonProblem:
    ages = np.arange(len(d))
    S = bspline_basis(ages, cfg.basis_knot_spacing, cfg.spline_degree, 0.0, float(len(d)))
    Dk = difference_matrix(S.shape[1], cfg.penalty_order)
    return PoissonProblem(S, d, n, P=lam * Dk.T @ Dk)


def _start(problem: PoissonProblem) -> np.ndarray:
    d, n = problem.d, problem.n
    z = np.log((d + 0.5) / (n + 1.0))
    theta, *_ = np.linalg.lstsq(problem.X, z, rcond=None)
    return theta


def fit_fixed_lambda(d, n, lam: float, cfg: SmootherConfig = SmootherConfig(), theta0=None) -> SmoothFit:
    """Penalized Poisson fit at one smoothing parameter."""
    problem = smoother_problem(d, n, lam, cfg)
    if theta0 is None:
        theta0 = _start(problem)
    res = newton_maximize(problem, theta0, max_iter=cfg.max_iter)
    mu = np.exp(problem.log_rates(res.theta)) * problem.n
    dd = problem.d
    with np.errstate(divide="ignore", invalid="ignore"):
        dev_terms = np.where(dd > 0, dd * np.log(dd / mu), 0.0) - (dd - mu)
    deviance = 2.0 * float(dev_terms.sum())
    W = (problem.X.T * mu) @ problem.X
    edf = float(np.trace(np.linalg.solve(res.information, W)))
    bic = deviance + np.log(dd.size) * edf
    return SmoothFit(
        log_rates=problem.log_rates(res.theta),
        theta=res.theta,
        lam=lam,
        bic=bic,
        edf=edf,
        converged=res.converged,
        iterations=res.iterations,
        trace=res.trace,
    )


def smooth_schedule(d, n, cfg: SmootherConfig = SmootherConfig(), provenance=None) -> MortalitySchedule:
    """Smooth one year of single-age counts into a log-rate schedule.

    The smoothing parameter is the BIC minimizer over ``cfg.lambda_grid``
    unless ``cfg.selection == 'fixed_lambda'``.

    Raises
    ------
    ValueError
        If all deaths are zero or exposures are not positive.
    ConvergenceError
        If the selected fit did not converge within ``cfg.max_iter`` steps.
    """
    d = np.asarray(d, dtype=float)
    n = np.asarray(n, dtype=float)
    if d.shape != n.shape:
        raise ValueError("deaths and exposures differ in length")
    if np.any(n <= 0):
        raise ValueError("exposures must be strictly positive")
    if np.any(d < 0):
        raise ValueError("deaths must be non-negative")
    if not np.any(d > 0):
        raise ValueError("cannot smooth a schedule with no deaths")

    if cfg.selection == "fixed_lambda":
        best = fit_fixed_lambda(d, n, cfg.fixed_lambda, cfg)
    else:
        best = None
        theta = None
        # from smooth to rough so each fit warm-starts the next
        for lam in sorted(cfg.lambda_grid, reverse=True):
            fit = fit_fixed_lambda(d, n, lam, cfg, theta0=theta)
            theta = fit.theta
            if fit.converged and (best is None or fit.bic < best.bic):
                best = fit
        if best is None:
            raise ConvergenceError("no smoothing parameter on the grid gave a converged fit")
    if not best.converged:
        raise ConvergenceError(f"P-spline fit did not converge in {cfg.max_iter} iterations")
    prov = dict(provenance or {})
    prov.update(smoothing_lambda=best.lam, edf=best.edf)
    return MortalitySchedule(best.log_rates, ages=np.arange(d.size), provenance=prov)


def smooth_sequence(y, lam: float = 10.0, order: int = 2) -> np.ndarray:
    """Gaussian penalized smoother with one coefficient per element.

    Minimizes ``||y - z||^2 + lam * ||D z||^2`` with ``D`` the differencing
    matrix of the given order.
    """
    y = np.asarray(y, dtype=float)
    D = difference_matrix(y.size, order)
    return np.linalg.solve(np.eye(y.size) + lam * D.T @ D, y)
