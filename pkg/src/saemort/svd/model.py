"""Hierarchical SVD-model for grouped log mortality.

``log m[a, t, g] = sum_p beta[p, a, t] V[p, g] + u[a, t, g]`` with

* ``beta[p, a, t] ~ N(mu[p, t], sig_beta[p, t])``
* ``mu[p, t] ~ N(2 mu[p, t-1] - mu[p, t-2], sig_mu[p])`` for t >= 3 and
  ``N(0, 10)`` for the first two years
* ``u[a, t, g] ~ N(0, sig_g[g])``
* ``sig_mu ~ LogNormal(-1.5, 0.5)``, ``sig_beta ~ HalfNormal(1)``,
  ``sig_g ~ HalfNormal(0.25)``
* ``D[a, t, g] ~ Poisson(m N)``.

Arrays are stored cell-major: ``beta`` is (A, T, P) and ``u`` is (A, T, G).
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.special import gammaln

MU_INIT_SD = 10.0
SIG_MU_LOGMEAN, SIG_MU_LOGSD = -1.5, 0.5
SIG_BETA_SCALE = 1.0
SIG_G_SCALE = 0.25
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SvdData:
    deaths: np.ndarray
    exposure: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        D = np.asarray(self.deaths, dtype=float)
        N = np.asarray(self.exposure, dtype=float)
        V = np.asarray(self.V, dtype=float)
        if N.shape != D.shape:
            N = np.broadcast_to(N, D.shape).copy()
        if D.ndim != 3 or V.ndim != 2 or V.shape[1] != D.shape[2]:
            raise ValueError("deaths must be (A, T, G) and V (P, G)")
        if D.shape[1] < 3:
            raise ValueError("the second-difference time prior needs T >= 3")
        if np.any(N <= 0) or np.any(D < 0) or not np.all(np.isfinite(D)):
            raise ValueError("data must be complete with positive exposures")
        object.__setattr__(self, "deaths", D)
        object.__setattr__(self, "exposure", N)
        object.__setattr__(self, "V", V)

    @property
    def shape(self):
        A, T, G = self.deaths.shape
        return A, T, G, self.V.shape[0]


@dataclass
class SvdState:
    beta: np.ndarray      # (A, T, P)
    u: np.ndarray         # (A, T, G)
    mu: np.ndarray        # (P, T)
    sig_beta: np.ndarray  # (P, T)
    sig_mu: np.ndarray    # (P,)
    sig_g: np.ndarray     # (G,)

    def copy(self) -> "SvdState":
        return replace(self, **{f.name: np.array(getattr(self, f.name), copy=True) for f in fields(self)})

    def check_support(self) -> None:
        for name in ("sig_beta", "sig_mu", "sig_g"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be strictly positive")


def log_rates(state: SvdState, V) -> np.ndarray:
    return state.beta @ V + state.u


def normal_logpdf(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI


def halfnormal_logpdf(x, scale):
    return np.log(2.0) + normal_logpdf(x, 0.0, scale)


def lognormal_logpdf(x, logmean, logsd):
    return normal_logpdf(np.log(x), logmean, logsd) - np.log(x)


def loglik(state: SvdState, data: SvdData) -> float:
    eta = log_rates(state, data.V)
    D, N = data.deaths, data.exposure
    return float(np.sum(D * (eta + np.log(N)) - N * np.exp(eta) - gammaln(D + 1)))


def log_prior_beta(state: SvdState) -> float:
    mu = state.mu.T[None]  # (1, T, P)
    sd = state.sig_beta.T[None]
    return float(np.sum(normal_logpdf(state.beta, mu, sd)))


def log_prior_mu(state: SvdState) -> float:
    mu = state.mu
    init = normal_logpdf(mu[:, :2], 0.0, MU_INIT_SD).sum()
    if mu.shape[1] > 2:
        pred = 2.0 * mu[:, 1:-1] - mu[:, :-2]
        rw2 = normal_logpdf(mu[:, 2:], pred, state.sig_mu[:, None]).sum()
    else:
        rw2 = 0.0
    return float(init + rw2)


def log_prior_u(state: SvdState) -> float:
    return float(np.sum(normal_logpdf(state.u, 0.0, state.sig_g)))


def log_prior_hyper(state: SvdState) -> float:
    return float(
        lognormal_logpdf(state.sig_mu, SIG_MU_LOGMEAN, SIG_MU_LOGSD).sum()
        + halfnormal_logpdf(state.sig_beta, SIG_BETA_SCALE).sum()
        + halfnormal_logpdf(state.sig_g, SIG_G_SCALE).sum()
    )


def log_posterior(state: SvdState, data: SvdData) -> float:
    """Unnormalized log posterior density with respect to the natural parameters."""
    state.check_support()
    return loglik(state, data) + log_prior_beta(state) + log_prior_mu(state) + log_prior_u(state) + log_prior_hyper(state)


def simulate_from_model(V, A: int, T: int, exposure, seed, beta_mean=None, sig_beta: float = 0.1,
                        sig_mu: float = 0.05, sig_g: float = 0.05):
    """Draw a state and Poisson data from the model (for recovery checks).

    ``exposure`` broadcasts to (A, T, G). ``beta_mean`` (P,) sets the level of
    ``mu`` at the first year; ``mu`` then follows a second-difference random
    walk with innovation sd ``sig_mu``.
    """
    V = np.asarray(V, dtype=float)
    P, G = V.shape
    rng = np.random.default_rng(seed)
    mu = np.empty((P, T))
    mu[:, 0] = np.zeros(P) if beta_mean is None else beta_mean
    mu[:, 1] = mu[:, 0] + rng.normal(0, sig_mu, P)
    for t in range(2, T):
        mu[:, t] = 2 * mu[:, t - 1] - mu[:, t - 2] + rng.normal(0, sig_mu, P)
    sb = np.full((P, T), sig_beta)
    beta = mu.T[None] + sb.T[None] * rng.standard_normal((A, T, P))
    sg = np.full(G, sig_g)
    u = sg * rng.standard_normal((A, T, G))
    state = SvdState(beta=beta, u=u, mu=mu, sig_beta=sb, sig_mu=np.full(P, sig_mu), sig_g=sg)
    N = np.broadcast_to(np.asarray(exposure, dtype=float), (A, T, G)).copy()
    D = rng.poisson(np.exp(log_rates(state, V)) * N)
    return SvdData(D, N, V), state
