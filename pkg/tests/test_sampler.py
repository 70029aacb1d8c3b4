import json

import numpy as np
import pytest

from saemort.svd.model import SvdState, log_posterior, log_prior_beta, log_prior_mu, simulate_from_model
from saemort.svd.sampler import (
    BLOCKS,
    PARAMETERIZATION,
    SamplerConfig,
    _Chain,
    initial_state,
    default_iterations,
    parameter_names,
    run_chain,
    sample_posterior,
    write_summary,
)

A, T, G, P = 3, 6, 5, 2


def _basis(G=G, P=P):
    X = np.column_stack([np.ones(G), np.linspace(-1, 1, G), np.linspace(-1, 1, G) ** 2])[:, :P]
    V = np.linalg.qr(X)[0].T.copy()
    return V * np.sign(V[:, :1])


@pytest.fixture(scope="module")
def toy():
    V = _basis()
    data, state = simulate_from_model(V, A, T, 2e3, 4, beta_mean=np.array([-4.0 * np.sqrt(G), 0.8]))
    st = SvdState(beta=state.beta + 0.01, u=state.u, mu=state.mu, sig_beta=np.full((P, T), 0.15),
                  sig_mu=np.full(P, 0.1), sig_g=np.full(G, 0.08))
    return data, st


def _chain(data, st):
    ch = _Chain(data, SamplerConfig(iterations=10, warmup=1), np.random.default_rng(0), st.copy())
    ch.it = 5  # past warmup: no adaptation
    return ch


def _state(ch):
    return SvdState(beta=ch.b.copy(), u=ch.uu.copy(), mu=ch.mu.copy(), sig_beta=ch.sig_beta.copy(),
                    sig_mu=ch.sig_mu.copy(), sig_g=ch.sig_g.copy())


def _ratio(a, b, name):
    return float(np.sum(np.log(getattr(b, name) / getattr(a, name))))


# block -> (method, draw shape, log Jacobian of the accepted transformation)
MOVES = {
    "sig_beta": (lambda c: c.sig_beta_rw(), (P, T), lambda a, b: _ratio(a, b, "sig_beta")),
    "scale_beta": (lambda c: c.scale_beta(), (P, T), lambda a, b: (A + 1) * _ratio(a, b, "sig_beta")),
    "trade_beta": (lambda c: c.trade_beta(), (P, T), lambda a, b: (A + 1) * _ratio(a, b, "sig_beta")),
    "trade_mu": (lambda c: c._shift("trade_mu", True), (P, T), lambda a, b: 0.0),
    "shift_mu": (lambda c: c._shift("shift_mu", False), (P, T), lambda a, b: 0.0),
    "sig_mu": (lambda c: c.sig_mu_rw(), (P,), lambda a, b: _ratio(a, b, "sig_mu")),
    "sig_g": (lambda c: c.sig_g_rw(), (G,), lambda a, b: _ratio(a, b, "sig_g")),
    "scale_g": (lambda c: c.scale_g(), (G,), lambda a, b: (A * T + 1) * _ratio(a, b, "sig_g")),
}


def _apply(data, st, block, idx, z, lu_idx):
    method, shape, _ = MOVES[block]
    ch = _chain(data, st)
    zs = np.zeros(shape)
    zs[idx] = z
    lu = np.full(shape, -1.0)
    lu[idx] = lu_idx
    ch._draws = lambda s: (zs, lu)
    method(ch)
    return ch


def _moved(a, b):
    return any(not np.array_equal(getattr(a, f), getattr(b, f)) for f in ("beta", "u", "mu", "sig_beta", "sig_mu", "sig_g"))


@pytest.mark.parametrize("block", sorted(MOVES))
@pytest.mark.parametrize("z", [-0.8, 0.6])
def test_block_acceptance_matches_posterior_ratio(toy, block, z):
    data, st = toy
    _, shape, jac = MOVES[block]
    idx = tuple(s // 2 for s in shape)
    before = _state(_chain(data, st))
    ch = _apply(data, st, block, idx, z, -np.inf)
    after = _state(ch)
    assert _moved(before, after)
    # cached expected counts stay in sync with the state
    lam = data.exposure * np.exp(after.beta @ data.V + after.u)
    np.testing.assert_allclose(ch.lam, lam, rtol=1e-9)
    la = log_posterior(after, data) - log_posterior(before, data) + jac(before, after)
    eps = 1e-6 * max(1.0, abs(la))
    assert _moved(before, _state(_apply(data, st, block, idx, z, la - eps)))
    assert not _moved(before, _state(_apply(data, st, block, idx, z, la + eps)))


def test_mu_gibbs_draws_exact_conditional(toy):
    data, st = toy
    ch = _chain(data, st)
    base = _state(ch)

    def logc(m):
        s = base.copy()
        s.mu = m
        return log_prior_beta(s) + log_prior_mu(s)

    # the conditional is Gaussian: recover its precision and mean by finite differences
    k = P * T
    x0 = base.mu.ravel()
    h = 1e-3
    H = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            e_i, e_j = np.eye(k)[i] * h, np.eye(k)[j] * h
            f = lambda d: logc((x0 + d).reshape(P, T))  # noqa: E731
            H[i, j] = -(f(e_i + e_j) - f(e_i - e_j) - f(-e_i + e_j) + f(-e_i - e_j)) / (4 * h * h)
    g = np.array([(logc((x0 + np.eye(k)[i] * h).reshape(P, T)) - logc((x0 - np.eye(k)[i] * h).reshape(P, T))) / (2 * h)
                  for i in range(k)])
    mean = x0 + np.linalg.solve(H, g)
    cov = np.linalg.inv(H)
    draws = []
    for _ in range(3000):
        ch.mu_gibbs()
        draws.append(ch.mu.ravel().copy())
    draws = np.array(draws)
    se = np.sqrt(np.diag(cov) / len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 5 * se)
    np.testing.assert_allclose(draws.std(axis=0), np.sqrt(np.diag(cov)), rtol=0.1)


def test_same_seed_same_draws(toy):
    data, _ = toy
    cfg = SamplerConfig(chains=1, iterations=60, warmup=20)
    a = run_chain(data, cfg, seed=9, chain=0)
    b = run_chain(data, cfg, seed=9, chain=0)
    c = run_chain(data, cfg, seed=9, chain=1)
    np.testing.assert_array_equal(a.beta, b.beta)
    np.testing.assert_array_equal(a.sig_g, b.sig_g)
    assert not np.array_equal(a.beta, c.beta)
    assert set(a.acceptance) == set(BLOCKS)


def test_parallel_chains_match_serial(toy):
    data, _ = toy
    s1 = sample_posterior(data, chains=2, iterations=40, warmup=10, seed=3, keep_draws=True)
    s2 = sample_posterior(data, seed=3, keep_draws=True, cfg=SamplerConfig(chains=2, iterations=40, warmup=10, workers=2))
    np.testing.assert_array_equal(s1.draws["beta"], s2.draws["beta"])
    np.testing.assert_array_equal(s1.median, s2.median)


def test_summary_contents_and_files(toy, tmp_path):
    data, _ = toy
    s = sample_posterior(data, chains=2, iterations=40, warmup=10, seed=1)
    assert s.median.shape == (A, T, G) and s.e0_median.shape == (A, T)
    assert np.all(s.lower <= s.median) and np.all(s.median <= s.upper)
    assert len(s.param_names) == s.rhat.size == s.ess_bulk.size
    assert s.param_names[0] == "beta[1,1,1]" and s.param_names[-1] == f"sig_g[{G}]"
    assert s.manifest["parameterization"] == PARAMETERIZATION
    assert s.manifest["kernel_backend"] in ("compiled", "python")
    assert s.chain_healthy.shape == (2,)
    write_summary(s, tmp_path, years=range(1995, 1995 + T))
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 1 and set(man["acceptance"]) == set(BLOCKS)
    assert (tmp_path / "log_rates.csv").read_text().count("\n") == 1 + A * T * G


def test_config_and_helpers():
    with pytest.raises(ValueError):
        SamplerConfig(iterations=100, warmup=100)
    assert default_iterations(5000) == (3000, 500)
    assert default_iterations(1e5) == (6000, 1000)
    assert len(parameter_names(2, 3, 4, 5)) == 2 * 3 * 4 + 2 * 3 * 5 + 4 * 3 + 4 * 3 + 4 + 5


def test_initial_state_is_finite(toy):
    data, _ = toy
    s = initial_state(data, np.random.default_rng(0))
    assert np.all(np.isfinite(s.beta)) and np.all(s.sig_g > 0)


def test_posterior_intervals_cover_truth_on_small_problems():
    """Pooled 95% interval coverage of true log rates over 20 seeded problems."""
    V = _basis(21, 3)
    hits = []
    for seed in range(20):
        data, state = simulate_from_model(V, 2, 3, 1e6 / 21, seed, beta_mean=np.array([-4.0 * np.sqrt(21), 3.0, 0.5]))
        s = sample_posterior(data, chains=2, iterations=1200, warmup=400, seed=seed)
        eta = state.beta @ V + state.u
        hits.append(((s.lower <= eta) & (eta <= s.upper)).ravel())
    assert np.mean(np.concatenate(hits)) >= 0.9
