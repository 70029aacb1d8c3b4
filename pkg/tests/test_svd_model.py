import numpy as np
import pytest
from scipy import stats

from saemort.svd.model import (
    SvdData,
    SvdState,
    log_posterior,
    log_prior_beta,
    log_prior_hyper,
    log_prior_mu,
    log_prior_u,
    loglik,
    simulate_from_model,
)


def _toy(seed=0, A=3, T=5, G=6, P=2):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(G), rng.normal(size=(G, P - 1))])
    V = np.linalg.qr(X)[0].T
    V *= np.sign(V[:, :1])
    data, state = simulate_from_model(V, A, T, 1e4, seed, beta_mean=np.array([-5.0 * np.sqrt(G), 0.5]))
    state.sig_beta = rng.uniform(0.05, 0.3, (P, T))
    state.sig_mu = rng.uniform(0.05, 0.3, P)
    state.sig_g = rng.uniform(0.02, 0.2, G)
    return data, state


def test_loglik_matches_scipy():
    data, s = _toy()
    lam = data.exposure * np.exp(s.beta @ data.V + s.u)
    assert loglik(s, data) == pytest.approx(stats.poisson.logpmf(data.deaths, lam).sum(), rel=1e-12)


def test_prior_terms_match_scipy():
    _, s = _toy(1)
    A, T, P = s.beta.shape
    ref_beta = sum(stats.norm.logpdf(s.beta[a, t, p], s.mu[p, t], s.sig_beta[p, t])
                   for a in range(A) for t in range(T) for p in range(P))
    assert log_prior_beta(s) == pytest.approx(ref_beta, rel=1e-12)
    ref_mu = stats.norm.logpdf(s.mu[:, :2], 0, 10).sum()
    for t in range(2, T):
        ref_mu += stats.norm.logpdf(s.mu[:, t], 2 * s.mu[:, t - 1] - s.mu[:, t - 2], s.sig_mu).sum()
    assert log_prior_mu(s) == pytest.approx(ref_mu, rel=1e-12)
    assert log_prior_u(s) == pytest.approx(stats.norm.logpdf(s.u, 0, s.sig_g).sum(), rel=1e-12)
    ref_h = (stats.lognorm.logpdf(s.sig_mu, 0.5, scale=np.exp(-1.5)).sum()
             + stats.halfnorm.logpdf(s.sig_beta, scale=1.0).sum()
             + stats.halfnorm.logpdf(s.sig_g, scale=0.25).sum())
    assert log_prior_hyper(s) == pytest.approx(ref_h, rel=1e-12)


def test_log_posterior_is_sum_and_checks_support():
    data, s = _toy(2)
    total = loglik(s, data) + log_prior_beta(s) + log_prior_mu(s) + log_prior_u(s) + log_prior_hyper(s)
    assert log_posterior(s, data) == pytest.approx(total)
    bad = s.copy()
    bad.sig_g[0] = 0.0
    with pytest.raises(ValueError):
        log_posterior(bad, data)


def test_data_validation():
    V = np.eye(2, 4)
    with pytest.raises(ValueError):
        SvdData(np.ones((2, 3, 4)), np.ones((2, 3, 3)), V)
    d = SvdData(np.ones((2, 3, 4)), np.ones((2, 3, 4)), V)
    assert d.shape == (2, 3, 4, 2)


def test_simulate_from_model_shapes_and_random_walk():
    V = np.eye(3, 21)
    data, s = simulate_from_model(V, 4, 11, 100.0, 0, beta_mean=np.array([-20, 1, 0.5]), sig_mu=1e-9)
    assert data.deaths.shape == (4, 11, 21)
    # with a negligible innovation sd mu stays on the initial line
    np.testing.assert_allclose(np.diff(s.mu, 2, axis=1), 0.0, atol=1e-7)
    assert isinstance(s, SvdState)
