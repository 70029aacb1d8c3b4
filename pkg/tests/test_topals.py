import io

import numpy as np
import pytest
from scipy.optimize import minimize

from saemort.knowledge import StandardSchedule
from saemort.lifetable import CANONICAL_GROUPING, aggregate_counts
from saemort.optim import ConvergenceError
from saemort.topals import TopalsBasis, fit_topals_grouped, fit_topals_single, topals_problem, wald_bounds, write_fits_csv

STD = StandardSchedule(np.log(0.0005 * np.exp(0.09 * np.arange(100)) + 0.0003))


def test_expected_counts_give_zero_offset():
    n = np.full(100, 1e4)
    d = np.exp(STD.log_rates) * n
    fit = fit_topals_single(d, n, STD)
    assert fit.converged
    np.testing.assert_allclose(fit.coef, 0.0, atol=1e-8)
    np.testing.assert_allclose(fit.log_rates, STD.log_rates, atol=1e-8)


def test_matches_generic_optimizer(rng):
    n = np.full(100, 5e3)
    d = rng.poisson(np.exp(STD.log_rates + 0.2) * n)
    basis = TopalsBasis()
    prob = topals_problem(d, n, STD, basis)
    ref = minimize(lambda t: -prob.objective(t), np.zeros(basis.S), jac=lambda t: -prob.gradient(t),
                   method="BFGS", options=dict(gtol=1e-9, maxiter=1000))
    fit = fit_topals_single(d, n, STD, basis)
    np.testing.assert_allclose(fit.coef, ref.x, atol=1e-5)


def test_intervals_are_wald(rng):
    n = np.full(100, 2e3)
    d = rng.poisson(np.exp(STD.log_rates) * n)
    fit = fit_topals_single(d, n, STD)
    lo, hi = wald_bounds(fit.log_rates, fit.cov)
    np.testing.assert_allclose(fit.lower, lo)
    np.testing.assert_allclose(hi - fit.log_rates, fit.log_rates - lo)
    assert np.all(fit.upper > fit.lower)
    np.testing.assert_allclose(fit.se, (hi - lo) / (2 * 1.959964))


def test_grouped_fit_recovers_level_shift(rng):
    n = np.full(100, 2e4)
    d = rng.poisson(np.exp(STD.log_rates - 0.3) * n)
    dg, ng = aggregate_counts(d, n, CANONICAL_GROUPING)
    fit = fit_topals_grouped(dg, ng, STD)
    assert fit.converged
    assert fit.log_rates.shape == (100,)
    assert np.mean(fit.log_rates[30:90] - STD.log_rates[30:90]) == pytest.approx(-0.3, abs=0.05)


def test_strict_nonconvergence_raises(rng):
    n = np.full(100, 1e3)
    d = rng.poisson(np.exp(STD.log_rates + 1.0) * n)
    with pytest.raises(ConvergenceError):
        fit_topals_single(d, n, STD, max_iter=1, strict=True)
    assert not fit_topals_single(d, n, STD, max_iter=1).converged


def test_basis_validation_and_penalty():
    b = TopalsBasis()
    assert b.S == 7
    np.testing.assert_allclose(b.P @ np.ones(7), 0.0)
    with pytest.raises(ValueError):
        TopalsBasis(knots=(0, 50, 40, 99))
    with pytest.raises(ValueError):
        StandardSchedule(np.zeros(50))


def test_fits_csv_layout(rng):
    n = np.full(100, 1e3)
    fit = fit_topals_single(rng.poisson(np.exp(STD.log_rates) * n), n, STD)
    buf = io.StringIO()
    write_fits_csv([(1, 2000, fit)], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == ["region", "year", "age", "point", "se", "lower", "upper", "converged", "iterations"]
    assert len(lines) == 101
