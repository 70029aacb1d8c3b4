import numpy as np
import pytest
from scipy import stats
from scipy.optimize import minimize

from saemort.svd import KERNEL_BACKEND, _kernels_py

try:
    from saemort.svd import _kernels
except ImportError:
    _kernels = None

BACKENDS = [_kernels_py] + ([_kernels] if _kernels is not None else [])
C, G, P = 5, 21, 3


@pytest.fixture
def inputs():
    rng = np.random.default_rng(7)
    X = np.column_stack([np.ones(G), np.linspace(-1, 1, G), np.linspace(-1, 1, G) ** 2])
    V = np.linalg.qr(X)[0].T.copy()
    V *= np.sign(V[:, :1])
    beta = np.column_stack([np.full(C, -4.0 * np.sqrt(G)), np.full(C, 3.0), np.full(C, 0.5)])
    beta += 0.05 * rng.normal(size=beta.shape)
    N = rng.uniform(1e3, 5e3, (C, G))
    D = rng.poisson(N * np.exp(beta @ V)).astype(float)
    mu = beta + 0.1 * rng.normal(size=beta.shape)
    pb = np.full((C, P), 25.0)
    pu = np.full(G, 100.0)
    z = rng.normal(size=(C, 2, P + G))
    return dict(D=D, N=N, V=V, mu=mu, pb=pb, pu=pu, beta=beta, u=0.02 * rng.normal(size=(C, G)), z=z)


def _run(kernel, inp, logU, scale=0.5):
    b, u = inp["beta"].copy(), inp["u"].copy()
    mb, mu_ = inp["beta"].copy(), inp["u"].copy()
    acc = kernel.update_cells(inp["D"], inp["N"], inp["V"], inp["mu"], inp["pb"], inp["pu"], b, u, mb, mu_,
                              inp["z"], np.ascontiguousarray(logU), np.full(C, scale))
    return b, u, mb, mu_, np.asarray(acc)


def _f(inp, c, beta, u):
    eta = beta @ inp["V"] + u
    return (stats.poisson.logpmf(inp["D"][c], inp["N"][c] * np.exp(eta)).sum()
            + stats.norm.logpdf(beta, inp["mu"][c], inp["pb"][c] ** -0.5).sum()
            + stats.norm.logpdf(u, 0.0, inp["pu"] ** -0.5).sum())


def _hessian(inp, c, beta, u):
    V = inp["V"]
    lam = inp["N"][c] * np.exp(beta @ V + u)
    H = np.empty((P + G, P + G))
    H[:P, :P] = (V * lam) @ V.T + np.diag(inp["pb"][c])
    H[:P, P:] = V * lam
    H[P:, :P] = H[:P, P:].T
    H[P:, P:] = np.diag(lam + inp["pu"])
    return H


def test_backend_flag():
    assert KERNEL_BACKEND in ("compiled", "python")


@pytest.mark.skipif(_kernels is None, reason="compiled kernel not built")
def test_compiled_matches_python(inputs):
    logU = np.log(np.random.default_rng(1).uniform(size=(C, 2)))
    for a, b in zip(_run(_kernels_py, inputs, logU), _run(_kernels, inputs, logU)):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("kernel", BACKENDS)
def test_mode_matches_generic_optimizer(kernel, inputs):
    _, _, mb, mu_, _ = _run(kernel, inputs, np.full((C, 2), np.inf))
    for c in range(C):
        x0 = np.concatenate([inputs["beta"][c], inputs["u"][c]])
        res = minimize(lambda x: -_f(inputs, c, x[:P], x[P:]), x0, method="BFGS", options=dict(gtol=1e-9))
        np.testing.assert_allclose(np.concatenate([mb[c], mu_[c]]), res.x, atol=2e-4)


@pytest.mark.parametrize("kernel", BACKENDS)
def test_independence_acceptance_ratio(kernel, inputs):
    logU = np.column_stack([np.full(C, -np.inf), np.full(C, np.inf)])
    b1, u1, mb, mu_, acc = _run(kernel, inputs, logU)
    assert np.all(acc == [1, 0])
    la = np.empty(C)
    for c in range(C):
        mode = np.concatenate([mb[c], mu_[c]])
        q = stats.multivariate_normal(mode, np.linalg.inv(_hessian(inputs, c, mb[c], mu_[c])))
        x0 = np.concatenate([inputs["beta"][c], inputs["u"][c]])
        x1 = np.concatenate([b1[c], u1[c]])
        la[c] = _f(inputs, c, b1[c], u1[c]) - _f(inputs, c, inputs["beta"][c], inputs["u"][c]) + q.logpdf(x0) - q.logpdf(x1)
    eps = 1e-6
    _, _, _, _, acc_lo = _run(kernel, inputs, np.column_stack([la - eps, np.full(C, np.inf)]))
    _, _, _, _, acc_hi = _run(kernel, inputs, np.column_stack([la + eps, np.full(C, np.inf)]))
    assert np.all(acc_lo[:, 0] == 1) and np.all(acc_hi[:, 0] == 0)


@pytest.mark.parametrize("kernel", BACKENDS)
def test_random_walk_acceptance_ratio(kernel, inputs):
    logU = np.column_stack([np.full(C, np.inf), np.full(C, -np.inf)])
    b1, u1, _, _, acc = _run(kernel, inputs, logU, scale=0.3)
    assert np.all(acc == [0, 1])
    la = np.array([_f(inputs, c, b1[c], u1[c]) - _f(inputs, c, inputs["beta"][c], inputs["u"][c]) for c in range(C)])
    eps = 1e-6
    _, _, _, _, acc_lo = _run(kernel, inputs, np.column_stack([np.full(C, np.inf), la - eps]), scale=0.3)
    _, _, _, _, acc_hi = _run(kernel, inputs, np.column_stack([np.full(C, np.inf), la + eps]), scale=0.3)
    assert np.all(acc_lo[:, 1] == 1) and np.all(acc_hi[:, 1] == 0)


@pytest.mark.parametrize("kernel", BACKENDS)
def test_proposal_covariance_is_laplace(kernel, inputs):
    # many independence draws around one mode have covariance H^-1
    rng = np.random.default_rng(3)
    one = {k: (v[:1].repeat(4000, axis=0) if k in ("D", "N", "mu", "pb", "beta", "u") else v) for k, v in inputs.items()}
    one["z"] = rng.normal(size=(4000, 2, P + G))
    b, u = one["beta"].copy(), one["u"].copy()
    mb, mu_ = b.copy(), u.copy()
    logU = np.column_stack([np.full(4000, -np.inf), np.full(4000, np.inf)])
    kernel.update_cells(one["D"], one["N"], one["V"], one["mu"], one["pb"], one["pu"], b, u, mb, mu_, one["z"],
                        logU, np.full(4000, 0.5))
    x = np.hstack([b, u])
    cov = np.linalg.inv(_hessian(one, 0, mb[0], mu_[0]))
    emp = np.cov(x.T)
    sd = np.sqrt(np.diag(cov))
    assert np.max(np.abs(emp - cov) / np.outer(sd, sd)) < 0.1
