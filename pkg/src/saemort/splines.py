"""B-spline bases and difference operators shared by the estimators."""

import numpy as np
from scipy.interpolate import BSpline


def difference_matrix(n: int, order: int = 1) -> np.ndarray:
    """Dense ``(n - order) x n`` differencing matrix.

    Order 1 rows are ``(-1, 1)`` stencils, order 2 rows ``(1, -2, 1)``.
    """
    if order < 0 or order >= n:
        raise ValueError(f"difference order {order} invalid for length {n}")
    return np.diff(np.eye(n), n=order, axis=0)


def equispaced_knots(xmin: float, xmax: float, spacing: float, degree: int = 3) -> np.ndarray:
    """Knot vector with ``degree`` padding knots beyond each boundary."""
    nseg = int(np.ceil((xmax - xmin) / spacing - 1e-9))
    return xmin + spacing * np.arange(-degree, nseg + degree + 1)


def bspline_basis(x, spacing: float = 5.0, degree: int = 3, xmin: float = 0.0, xmax: float = 100.0):
    """Design matrix of equally spaced B-splines evaluated at ``x``.

    With the defaults (ages 0..99, knots every 5 years over [0, 100]) this
    gives 23 cubic B-splines that sum to one everywhere on the age range.
    """
    x = np.asarray(x, dtype=float)
    if x.min() < xmin or x.max() > xmax:
        raise ValueError("evaluation points outside the basis range")
    t = equispaced_knots(xmin, xmax, spacing, degree)
    return BSpline.design_matrix(x, t, degree).toarray()


def linear_bspline_basis(x, knots) -> np.ndarray:
    """Hat-function (degree 1) B-splines anchored at ``knots``.

    Column ``j`` equals 1 at ``knots[j]`` and falls linearly to 0 at the
    neighbouring knots. The columns sum to one on ``[knots[0], knots[-1]]``.
    """
    x = np.asarray(x, dtype=float)
    k = np.asarray(knots, dtype=float)
    if np.any(np.diff(k) <= 0):
        raise ValueError("knots must be strictly increasing")
    B = np.zeros((x.size, k.size))
    for j in range(k.size):
        if j > 0:
            left = (x >= k[j - 1]) & (x <= k[j])
            B[left, j] = (x[left] - k[j - 1]) / (k[j] - k[j - 1])
        if j < k.size - 1:
            right = (x >= k[j]) & (x <= k[j + 1])
            B[right, j] = (k[j + 1] - x[right]) / (k[j + 1] - k[j])
        B[x == k[j], j] = 1.0
    return B
