"""D-splines: P-spline fits with a penalty calibrated on a schedule database.

The fitted log rates are ``S theta`` and the objective is

    Q(theta) = logL(theta) - 0.5 * e' V^{-1} e,   e = D S theta - c.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .knowledge import DSPLINE_KINDS, DsplineCalibration
from .lifetable import CANONICAL_GROUPING, OMEGA, AgeGrouping
from .optim import PoissonProblem
from .splines import bspline_basis
from .topals import FitResult, _fit

INPUT_KINDS = ("single_year", "grouped")


@dataclass(frozen=True)
class DsplineBasis:
    spacing: float = 5.0
    degree: int = 3
    S: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        S = bspline_basis(np.arange(OMEGA), self.spacing, self.degree, 0.0, float(OMEGA))
        if np.linalg.matrix_rank(S) < S.shape[1]:
            raise ValueError("D-spline basis is rank deficient")
        object.__setattr__(self, "S", S)

    @property
    def K(self) -> int:
        return self.S.shape[1]


def dspline_problem(d, n, calib: DsplineCalibration, basis: DsplineBasis, input_kind: str = "single_year",
                    scheme: AgeGrouping = CANONICAL_GROUPING, precision=None, penalty_scale: float = 1.0) -> PoissonProblem:
    if input_kind not in INPUT_KINDS:
        raise ValueError(f"unknown input kind {input_kind!r}")
    W = penalty_scale * (calib.precision() if precision is None else np.asarray(precision, float))
    DS = calib.D @ basis.S
    P = DS.T @ W @ DS
    p = DS.T @ W @ calib.c
    A = scheme.averaging() if input_kind == "grouped" else None
    return PoissonProblem(basis.S, d, n, P=0.5 * (P + P.T), p=p, A=A)


def penalty_residual(theta, calib: DsplineCalibration, basis: DsplineBasis) -> np.ndarray:
    return calib.D @ (basis.S @ theta) - calib.c


def starting_value(problem: PoissonProblem, calib: DsplineCalibration, basis: DsplineBasis) -> np.ndarray:
    """Least-squares coefficients of the database mean, level-shifted to the observed deaths."""
    theta, *_ = np.linalg.lstsq(basis.S, calib.mean_schedule, rcond=None)
    total = problem.d.sum()
    if total > 0:
        expected = float(problem.n @ problem.group_rates(theta))
        # B-splines sum to one, so a constant shift in theta shifts every log rate
        theta = theta + np.log(total / expected)
    return theta


def fit_dspline(d, n, calib: DsplineCalibration, basis: DsplineBasis = DsplineBasis(), input_kind: str = "single_year",
                scheme: AgeGrouping = CANONICAL_GROUPING, max_iter: int = 100, gtol: float = 1e-8,
                strict: bool = False, precision=None, penalty_scale: float = 1.0) -> FitResult:
    """Maximize the D-spline penalized likelihood.

    Parameters
    ----------
    d, n : array_like
        Deaths and exposures on single ages (length 100) or groups.
    calib : DsplineCalibration
    input_kind : {'single_year', 'grouped'}
    precision : ndarray, optional
        Replaces ``calib.precision()``.
    penalty_scale : float
        Multiplier on the precision; 0 switches the penalty off.
    """
    problem = dspline_problem(d, n, calib, basis, input_kind, scheme, precision, penalty_scale)
    fit = _fit(problem, basis.S, max_iter, gtol, strict, "dspline", starting_value(problem, calib, basis))
    fit.estimator = calib.kind
    return fit


def compare_estimators(d, n, calibs: dict, basis: DsplineBasis = DsplineBasis(), input_kind: str = "single_year",
                       **kwargs) -> dict:
    """Fit D1, D2 and DLC on the same data."""
    return {k: fit_dspline(d, n, calibs[k], basis, input_kind, **kwargs) for k in DSPLINE_KINDS if k in calibs}
