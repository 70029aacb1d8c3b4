"""Newton-Raphson with step halving for penalized Poisson likelihoods.

The model is ``log m = offset + X @ theta`` on single ages. Observations are
either single-year counts or group counts whose rate is a fixed linear
combination of the single-year rates, ``m_g = A @ m`` (``A`` averages the
ages in each group). The penalty is the quadratic
``0.5 * theta' P theta - p' theta`` (constant terms dropped).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gammaln


class ConvergenceError(RuntimeError):
    """Raised when a fit cannot make progress and the caller asked to fail."""


@dataclass
class NewtonResult:
    theta: np.ndarray
    objective: float
    gradient: np.ndarray
    information: np.ndarray
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


class PoissonProblem:
    """Penalized Poisson log-likelihood, gradient and information.

    Parameters
    ----------
    X : ndarray, shape (n_ages, K)
    deaths, exposure : ndarray
        Single-year (length n_ages) or grouped (length G) counts.
    offset : ndarray, optional
        Fixed log-rate offset on single ages.
    P, p : ndarray, optional
        Penalty matrix (K x K) and linear term (K,).
    A : ndarray, optional
        ``(G, n_ages)`` map from single-year rates to group rates.
    """

    def __init__(self, X, deaths, exposure, offset=None, P=None, p=None, A=None):
        self.X = np.asarray(X, dtype=float)
        self.d = np.asarray(deaths, dtype=float)
        self.n = np.asarray(exposure, dtype=float)
        n_ages, K = self.X.shape
        self.offset = np.zeros(n_ages) if offset is None else np.asarray(offset, dtype=float)
        self.P = np.zeros((K, K)) if P is None else np.asarray(P, dtype=float)
        self.p = np.zeros(K) if p is None else np.asarray(p, dtype=float)
        self.A = None if A is None else np.asarray(A, dtype=float)
        n_obs = n_ages if self.A is None else self.A.shape[0]
        if self.d.shape != (n_obs,) or self.n.shape != (n_obs,):
            raise ValueError(f"expected {n_obs} deaths and exposures")
        if np.any(self.n <= 0):
            raise ValueError("exposures must be strictly positive")
        if np.any(self.d < 0):
            raise ValueError("deaths must be non-negative")
        self._const = float(np.sum(self.d * np.log(self.n)) - np.sum(gammaln(self.d + 1)))

    def log_rates(self, theta):
        return self.offset + self.X @ theta

    def group_rates(self, theta):
        mu = np.exp(self.log_rates(theta))
        return mu if self.A is None else self.A @ mu

    def loglik(self, theta) -> float:
        """Poisson log-likelihood including the terms constant in theta."""
        m = self.group_rates(theta)
        with np.errstate(divide="ignore"):
            logm = np.log(m)
        dl = np.where(self.d > 0, self.d * logm, 0.0)
        return float(dl.sum() - np.sum(self.n * m) + self._const)

    def penalty(self, theta) -> float:
        return float(0.5 * theta @ self.P @ theta - self.p @ theta)

    def objective(self, theta) -> float:
        return self.loglik(theta) - self.penalty(theta)

    def gradient(self, theta) -> np.ndarray:
        mu = np.exp(self.log_rates(theta))
        if self.A is None:
            g = self.X.T @ (self.d - self.n * mu)
        else:
            m = self.A @ mu
            J = (self.A * mu) @ self.X
            g = J.T @ (self.d / m - self.n)
        return g - (self.P @ theta - self.p)

    def information(self, theta, observed: bool = True) -> np.ndarray:
        """Negative Hessian of the penalized objective.

        For grouped data ``observed=False`` gives the Fisher information,
        which is always positive semi-definite.
        """
        mu = np.exp(self.log_rates(theta))
        if self.A is None:
            H = (self.X.T * (self.n * mu)) @ self.X
        else:
            m = self.A @ mu
            J = (self.A * mu) @ self.X
            H = (J.T * (self.n / m)) @ J
            if observed:
                r = self.d / m - self.n
                # curvature of m_g in theta, weighted by the residual r_g
                H = (J.T * (self.d / m**2)) @ J - (self.X.T * ((r @ self.A) * mu)) @ self.X
        return H + self.P


def newton_maximize(
    problem: PoissonProblem,
    theta0,
    max_iter: int = 100,
    gtol: float = 1e-8,
    max_halvings: int = 40,
) -> NewtonResult:
    """Maximize ``problem.objective`` by Newton steps with step halving.

    Each accepted step does not decrease the objective. A step whose
    predicted gain is below the floating-point resolution of the objective is
    accepted without the halving test (this only happens at convergence).

    Convergence is declared when ``max|g| < gtol * max(1, sum(d))``; the
    scaling keeps the test above the rounding floor for large death counts
    and reduces to the absolute test when there are few deaths.
    """
    theta = np.array(theta0, dtype=float)
    obj = problem.objective(theta)
    if not np.isfinite(obj):
        raise ValueError("objective is not finite at the starting point")
    trace = [obj]
    grouped = problem.A is not None
    tol = gtol * max(1.0, float(problem.d.sum()))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = problem.gradient(theta)
        if np.max(np.abs(g)) < tol:
            converged = True
            it -= 1
            break
        H = problem.information(theta, observed=True)
        try:
            cho = linalg.cho_factor(H)
        except linalg.LinAlgError:
            if not grouped:
                raise
            cho = linalg.cho_factor(problem.information(theta, observed=False))
        step = linalg.cho_solve(cho, g)
        gain = float(g @ step)
        if gain <= 1e-14 * max(1.0, abs(obj)):
            theta = theta + step
            obj = problem.objective(theta)
            trace.append(obj)
            continue
        t = 1.0
        for _ in range(max_halvings):
            cand = theta + t * step
            new = problem.objective(cand)
            if np.isfinite(new) and new >= obj:
                break
            t *= 0.5
        else:
            break
        theta, obj = cand, new
        trace.append(obj)
    g = problem.gradient(theta)
    if not converged and np.max(np.abs(g)) < tol:
        converged = True
    info = problem.information(theta, observed=True)
    return NewtonResult(
        theta=theta,
        objective=obj,
        gradient=g,
        information=info,
        iterations=it,
        converged=converged,
        trace=trace,
    )


def spd_inverse(H) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via Cholesky."""
    c = linalg.cho_factor(H)
    return linalg.cho_solve(c, np.eye(H.shape[0]))
