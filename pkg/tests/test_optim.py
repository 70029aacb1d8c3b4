import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import poisson

from saemort.lifetable import CANONICAL_GROUPING
from saemort.optim import PoissonProblem, newton_maximize, spd_inverse
from saemort.splines import bspline_basis, difference_matrix


def _problem(seed, grouped=False):
    rng = np.random.default_rng(seed)
    X = bspline_basis(np.arange(100))
    K = X.shape[1]
    truth = -9 + 0.085 * np.arange(100)
    n = rng.uniform(100, 2000, 100)
    d = rng.poisson(np.exp(truth) * n).astype(float)
    P = 10.0 * difference_matrix(K, 2).T @ difference_matrix(K, 2)
    p = rng.normal(0, 0.1, K)
    if grouped:
        A = CANONICAL_GROUPING.averaging()
        W = CANONICAL_GROUPING.membership()
        return PoissonProblem(X, W @ d, W @ n, P=P, p=p, A=A), K
    return PoissonProblem(X, d, n, offset=rng.normal(0, 0.1, 100), P=P, p=p), K


def _fd_grad(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("grouped", [False, True])
def test_loglik_matches_scipy_poisson(grouped):
    prob, K = _problem(0, grouped)
    theta = np.linspace(-8, -1, K)
    lam = prob.n * prob.group_rates(theta)
    assert prob.loglik(theta) == pytest.approx(poisson.logpmf(prob.d, lam).sum(), rel=1e-12)


@pytest.mark.parametrize("grouped", [False, True])
def test_gradient_and_information_match_finite_differences(grouped):
    prob, K = _problem(1, grouped)
    theta = np.linspace(-8, -1, K) + 0.05 * np.sin(np.arange(K))
    g = prob.gradient(theta)
    fd = _fd_grad(prob.objective, theta)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(g)) < 1e-6
    H = prob.information(theta, observed=True)
    Hfd = -np.column_stack([_fd_grad(lambda t: prob.gradient(t)[j], theta) for j in range(K)]).T
    assert np.max(np.abs(H - Hfd)) / np.max(np.abs(H)) < 1e-5


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), grouped=st.booleans())
def test_newton_is_monotone_and_reaches_stationarity(seed, grouped):
    prob, K = _problem(seed, grouped)
    res = newton_maximize(prob, np.full(K, -4.0))
    assert res.converged
    tr = np.asarray(res.trace)
    assert np.all(np.diff(tr) >= -1e-12 * np.abs(tr[1:]))
    assert np.max(np.abs(res.gradient)) < 1e-8 * max(1.0, prob.d.sum())


def test_input_validation():
    X = np.ones((3, 1))
    with pytest.raises(ValueError, match="positive"):
        PoissonProblem(X, [1, 1, 1], [1, 0, 1])
    with pytest.raises(ValueError, match="non-negative"):
        PoissonProblem(X, [1, -1, 1], [1, 1, 1])
    with pytest.raises(ValueError, match="expected 3"):
        PoissonProblem(X, [1, 1], [1, 1])


def test_nonfinite_start_rejected():
    prob = PoissonProblem(np.ones((2, 1)), [1.0, 1.0], [1.0, 1.0])
    with np.errstate(all="ignore"), pytest.raises(ValueError):
        newton_maximize(prob, [1e6])


def test_spd_inverse(rng):
    A = rng.normal(size=(5, 5))
    H = A @ A.T + 5 * np.eye(5)
    np.testing.assert_allclose(spd_inverse(H) @ H, np.eye(5), atol=1e-12)
