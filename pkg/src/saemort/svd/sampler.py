"""Adaptive Metropolis-within-Gibbs sampler for the SVD-model.

One iteration of a chain runs these blocks in order:

1. cell blocks ``(beta[a, t], u[a, t])``: an independence move from the
   Laplace approximation at the conditional mode, then a random walk;
2. ``mu[p]``: exact Gibbs draw (Gaussian given ``beta`` and ``sig_mu``);
3. ``log sig_beta`` random walk per (p, t), a joint rescaling of
   ``sig_beta[p, t]`` and ``beta[:, t, p] - mu[p, t]``, and the same
   rescaling with ``u`` absorbing the change so ``eta`` stays fixed;
4. joint shifts of ``mu[p, t]`` and ``beta[:, t, p]``, once with ``u``
   compensating and once without;
5. ``log sig_mu`` random walk per p;
6. ``log sig_g`` random walk per g and a joint rescaling of ``sig_g[g]``
   and ``u[:, :, g]``.

Blocks 3 and 6 are cheap and are repeated ``hyper_repeats`` times.

Random-walk scales are tuned by Robbins-Monro toward the target acceptance
during warmup and frozen afterwards. Chains are independent given their seed
and can run in separate processes.
"""

from __future__ import annotations

import json
import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from ..lifetable import CANONICAL_GROUPING, AgeGrouping, expand_grouped, partial_e0_batch
from . import KERNEL_BACKEND, update_cells
from .diagnostics import ACCEPT_BAND, ESS_MIN, INDEPENDENCE_MIN, RHAT_MAX, ess_bulk, ess_tail, rhat
from .model import (MU_INIT_SD, SIG_BETA_SCALE, SIG_G_SCALE, SIG_MU_LOGMEAN, SIG_MU_LOGSD, SvdData, SvdState)

PARAMETERIZATION = "centered"
BLOCKS = ("independence_cells", "rw_cells", "sig_beta", "scale_beta", "trade_beta", "trade_mu", "shift_mu",
          "sig_mu", "sig_g", "scale_g")
_PARAM_CHUNK = 256
_CELL_CHUNK = 16


def default_iterations(exposure_total: float) -> tuple[int, int]:
    """(iterations, warmup) used for a given total exposure size."""
    return (3000, 500) if exposure_total <= 5000 else (6000, 1000)


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    iterations: int = 6000
    warmup: int = 1000
    target_accept: float = 0.3
    adapt_exponent: float = 0.6
    init_rw_scale: float = 0.5
    init_hyper_scale: float = 0.3
    hyper_repeats: int = 3
    workers: int = 1

    def __post_init__(self):
        if not (self.iterations > self.warmup > 0):
            raise ValueError("need iterations > warmup > 0")
        if self.chains < 1:
            raise ValueError("need at least one chain")


@dataclass
class ChainDraws:
    beta: np.ndarray       # (n, A, T, P)
    u: np.ndarray          # (n, A, T, G)
    mu: np.ndarray         # (n, P, T)
    sig_beta: np.ndarray   # (n, P, T)
    sig_mu: np.ndarray     # (n, P)
    sig_g: np.ndarray      # (n, G)
    acceptance: dict       # block -> post-warmup acceptance rate


@dataclass
class PosteriorSummary:
    """Posterior medians and 95% intervals of log rates plus diagnostics.

    ``median``, ``lower`` and ``upper`` are (A, T, G) log rates; the ``e0_*``
    arrays are (A, T) partial life expectancies from the grouped rates
    expanded to single ages (NaN when the groups do not match the grouping).
    """

    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    e0_median: np.ndarray
    e0_lower: np.ndarray
    e0_upper: np.ndarray
    param_names: list
    rhat: np.ndarray
    ess_bulk: np.ndarray
    ess_tail: np.ndarray
    acceptance: dict
    chain_healthy: np.ndarray
    manifest: dict = field(default_factory=dict)
    draws: dict | None = None


# ---------------------------------------------------------------- helpers

def _halfnormal(x, scale):
    return -0.5 * (x / scale) ** 2


def _lognormal(x, logmean, logsd):
    lx = np.log(x)
    return -0.5 * ((lx - logmean) / logsd) ** 2 - lx


def _second_diff(T: int) -> np.ndarray:
    D = np.zeros((T - 2, T))
    for i in range(T - 2):
        D[i, i:i + 3] = (1.0, -2.0, 1.0)
    return D


def _adapt(log_scale, acc, it, cfg):
    gamma = (it + 1.0) ** -cfg.adapt_exponent
    return log_scale + gamma * (acc - cfg.target_accept)


def initial_state(data: SvdData, rng: np.random.Generator) -> SvdState:
    """Dispersed starting point around per-cell projections of the raw rates."""
    A, T, G, P = data.shape
    V = data.V
    y = np.log((data.deaths + 0.5) / data.exposure)
    b0 = np.linalg.lstsq(V.T, y.reshape(-1, G).T, rcond=None)[0].T.reshape(A, T, P)
    beta = b0 + 0.05 * rng.standard_normal(b0.shape)
    mu = b0.mean(axis=0).T + 0.05 * rng.standard_normal((P, T))
    sd = np.clip(b0.std(axis=0).T, 0.05, 1.0)
    sig_beta = sd * np.exp(0.2 * rng.standard_normal((P, T)))
    sig_mu = 0.2 * np.exp(0.2 * rng.standard_normal(P))
    sig_g = 0.1 * np.exp(0.2 * rng.standard_normal(G))
    u = np.zeros((A, T, G))
    return SvdState(beta=beta, u=u, mu=mu, sig_beta=sig_beta, sig_mu=sig_mu, sig_g=sig_g)


# ---------------------------------------------------------------- one chain

class _Chain:
    """Mutable sampler state for one chain; each block method is one MH or Gibbs step."""

    def __init__(self, data: SvdData, cfg: SamplerConfig, rng: np.random.Generator, init: SvdState):
        self.cfg, self.rng = cfg, rng
        A, T, G, P = data.shape
        self.A, self.T, self.G, self.P = A, T, G, P
        C = A * T
        self.V = data.V
        self.D = np.ascontiguousarray(data.deaths.reshape(C, G))
        self.N = np.ascontiguousarray(data.exposure.reshape(C, G))
        self.Dr = self.D.reshape(A, T, G)
        self.DV = self.Dr @ self.V.T  # (A, T, P)
        self.beta = np.ascontiguousarray(init.beta.reshape(C, P))
        self.u = np.ascontiguousarray(init.u.reshape(C, G))
        self.b = self.beta.reshape(A, T, P)
        self.uu = self.u.reshape(A, T, G)
        self.mu, self.sig_beta = init.mu.copy(), init.sig_beta.copy()
        self.sig_mu, self.sig_g = init.sig_mu.copy(), init.sig_g.copy()
        self.mode_beta, self.mode_u = self.beta.copy(), self.u.copy()
        self.D2 = _second_diff(T)
        self.R2 = self.D2.T @ self.D2
        self.init_prec = np.zeros(T)
        self.init_prec[:2] = 1.0 / MU_INIT_SD ** 2
        self.groups3 = [np.arange(r, T, 3) for r in range(3)]
        self.log_rw = np.full(C, np.log(cfg.init_rw_scale))
        s0 = np.log(cfg.init_hyper_scale)
        small = np.log(0.05)
        self.log_s = {
            "sig_beta": np.full((P, T), s0), "scale_beta": np.full((P, T), s0), "trade_beta": np.full((P, T), s0),
            "trade_mu": np.full((P, T), small), "shift_mu": np.full((P, T), small),
            "sig_mu": np.full(P, s0), "sig_g": np.full(G, s0), "scale_g": np.full(G, small),
        }
        self.steps = {k: 0 for k in self.log_s}
        self.tally = {k: [0.0, 0] for k in BLOCKS}
        self.it = 0
        self.refresh_rates()

    @property
    def warm(self) -> bool:
        return self.it < self.cfg.warmup

    def refresh_rates(self):
        self.lam = self.N.reshape(self.A, self.T, self.G) * np.exp((self.beta @ self.V + self.u).reshape(self.A, self.T, self.G))

    def _record(self, name, ok):
        if self.warm:
            if name in self.log_s:
                self.log_s[name] = _adapt(self.log_s[name], ok, self.steps[name], self.cfg)
                self.steps[name] += 1
        else:
            t = self.tally[name]
            t[0] += float(np.mean(ok))
            t[1] += 1

    def _draws(self, shape):
        return self.rng.standard_normal(shape), np.log(self.rng.random(shape))

    # -- blocks

    def cells(self):
        A, T, P, C = self.A, self.T, self.P, self.A * self.T
        mu_c = np.ascontiguousarray(np.broadcast_to(self.mu.T[None], (A, T, P)).reshape(C, P))
        pb_c = np.ascontiguousarray(np.broadcast_to((1.0 / self.sig_beta.T ** 2)[None], (A, T, P)).reshape(C, P))
        pu = 1.0 / self.sig_g ** 2
        z = self.rng.standard_normal((C, 2, P + self.G))
        logU = np.log(self.rng.random((C, 2)))
        acc = update_cells(self.D, self.N, self.V, mu_c, pb_c, pu, self.beta, self.u, self.mode_beta, self.mode_u,
                           z, logU, np.exp(self.log_rw))
        if self.warm:
            self.log_rw = _adapt(self.log_rw, acc[:, 1], self.it, self.cfg)
        self._record("independence_cells", acc[:, 0])
        self._record("rw_cells", acc[:, 1])
        self.refresh_rates()

    def mu_gibbs(self):
        T = self.T
        for p in range(self.P):
            Q = self.R2 / self.sig_mu[p] ** 2 + np.diag(self.init_prec + self.A / self.sig_beta[p] ** 2)
            rhs = self.b[:, :, p].sum(axis=0) / self.sig_beta[p] ** 2
            cf = cho_factor(Q, lower=True)
            mean = cho_solve(cf, rhs)
            self.mu[p] = mean + solve_triangular(cf[0], self.rng.standard_normal(T), lower=True, trans="T")

    def sig_beta_rw(self):
        zs, lu = self._draws((self.P, self.T))
        sb = self.sig_beta
        prop = sb * np.exp(np.exp(self.log_s["sig_beta"]) * zs)
        ss = np.sum((np.transpose(self.b, (2, 0, 1)) - self.mu[:, None, :]) ** 2, axis=1)

        def target(s):
            return -0.5 * ss / s ** 2 - self.A * np.log(s) + _halfnormal(s, SIG_BETA_SCALE) + np.log(s)

        ok = lu < target(prop) - target(sb)
        self.sig_beta = np.where(ok, prop, sb)
        self._record("sig_beta", ok)

    def scale_beta(self):
        """Rescale ``sig_beta[p, t]`` and the deviations ``beta[:, t, p] - mu[p, t]``."""
        zs, lu = self._draws((self.P, self.T))
        ok_all = np.zeros((self.P, self.T), dtype=bool)
        for p in range(self.P):
            logk = np.exp(self.log_s["scale_beta"][p]) * zs[p]
            k = np.exp(logk)
            dev = self.b[:, :, p] - self.mu[p]
            c = (k - 1.0) * dev
            with np.errstate(over="ignore", invalid="ignore"):
                # overflowing proposals get -inf and are rejected
                growth = np.exp(c[:, :, None] * self.V[p])
                dll = np.sum(c * self.DV[:, :, p], axis=0) - np.sum(self.lam * (growth - 1.0), axis=(0, 2))
            dll = np.where(np.isnan(dll), -np.inf, dll)
            sp = self.sig_beta[p] * k
            la = dll + _halfnormal(sp, SIG_BETA_SCALE) - _halfnormal(self.sig_beta[p], SIG_BETA_SCALE) + logk
            ok = lu[p] < la
            if ok.any():
                self.b[:, ok, p] = self.mu[p, ok] + k[ok] * dev[:, ok]
                self.lam[:, ok] *= growth[:, ok]
                self.sig_beta[p, ok] = sp[ok]
            ok_all[p] = ok
        self._record("scale_beta", ok_all)

    def _u_prior_terms(self, p):
        """``sum_g pu V u`` per cell and ``sum_g pu V^2`` for component ``p``."""
        pu = 1.0 / self.sig_g ** 2
        vp = self.V[p] * pu
        return self.uu @ vp, float(self.V[p] @ vp)

    def trade_beta(self):
        """As :meth:`scale_beta` but ``u`` absorbs the change so ``eta`` is fixed."""
        zs, lu = self._draws((self.P, self.T))
        ok_all = np.zeros((self.P, self.T), dtype=bool)
        for p in range(self.P):
            logk = np.exp(self.log_s["trade_beta"][p]) * zs[p]
            k = np.exp(logk)
            dev = self.b[:, :, p] - self.mu[p]
            c = (k - 1.0) * dev
            w1, w2 = self._u_prior_terms(p)
            # u' = u - c V_p changes the u prior by -0.5 sum pu (u'^2 - u^2)
            du_prior = np.sum(c * w1 - 0.5 * c * c * w2, axis=0)
            sp = self.sig_beta[p] * k
            la = du_prior + _halfnormal(sp, SIG_BETA_SCALE) - _halfnormal(self.sig_beta[p], SIG_BETA_SCALE) + logk
            ok = lu[p] < la
            if ok.any():
                self.b[:, ok, p] = self.mu[p, ok] + k[ok] * dev[:, ok]
                self.uu[:, ok] -= c[:, ok, None] * self.V[p]
                self.sig_beta[p, ok] = sp[ok]
            ok_all[p] = ok
        self._record("trade_beta", ok_all)

    def _shift(self, name: str, hold_eta: bool):
        """Shift ``mu[p, t]`` and ``beta[:, t, p]`` together.

        Years are moved in residue classes mod 3 so that no second difference
        touches two moved years and the acceptance tests separate.
        """
        zs, lu = self._draws((self.P, self.T))
        ok_all = np.zeros((self.P, self.T), dtype=bool)
        r2_diag = np.diag(self.R2)
        for p in range(self.P):
            if hold_eta:
                w1, w2 = self._u_prior_terms(p)
                w1 = w1.sum(axis=0)
            else:
                lam_a = self.lam.sum(axis=0)  # (T, G)
                dv = self.DV[:, :, p].sum(axis=0)
            for idx in self.groups3:
                delta = np.exp(self.log_s[name][p, idx]) * zs[p, idx]
                m = self.mu[p]
                grad = (self.R2 @ m)[idx] / self.sig_mu[p] ** 2 + self.init_prec[idx] * m[idx]
                curv = r2_diag[idx] / self.sig_mu[p] ** 2 + self.init_prec[idx]
                la = -delta * grad - 0.5 * delta * delta * curv
                if hold_eta:
                    la += delta * w1[idx] - 0.5 * self.A * delta * delta * w2
                else:
                    growth = np.exp(delta[:, None] * self.V[p])  # (len(idx), G)
                    la += delta * dv[idx] - np.sum(lam_a[idx] * (growth - 1.0), axis=1)
                ok = lu[p, idx] < la
                sel = idx[ok]
                if sel.size:
                    d = delta[ok]
                    self.mu[p, sel] += d
                    self.b[:, sel, p] += d
                    if hold_eta:
                        self.uu[:, sel] -= d[None, :, None] * self.V[p]
                    else:
                        self.lam[:, sel] *= growth[ok][None]
                ok_all[p, idx] = ok
        self._record(name, ok_all)

    def sig_mu_rw(self):
        zs, lu = self._draws(self.P)
        sm = self.sig_mu
        prop = sm * np.exp(np.exp(self.log_s["sig_mu"]) * zs)
        ss = np.sum((self.mu @ self.D2.T) ** 2, axis=1)
        n = self.T - 2

        def target(s):
            return -0.5 * ss / s ** 2 - n * np.log(s) + _lognormal(s, SIG_MU_LOGMEAN, SIG_MU_LOGSD) + np.log(s)

        ok = lu < target(prop) - target(sm)
        self.sig_mu = np.where(ok, prop, sm)
        self._record("sig_mu", ok)

    def sig_g_rw(self):
        zs, lu = self._draws(self.G)
        sg = self.sig_g
        prop = sg * np.exp(np.exp(self.log_s["sig_g"]) * zs)
        ss = np.sum(self.uu ** 2, axis=(0, 1))
        n = self.A * self.T

        def target(s):
            return -0.5 * ss / s ** 2 - n * np.log(s) + _halfnormal(s, SIG_G_SCALE) + np.log(s)

        ok = lu < target(prop) - target(sg)
        self.sig_g = np.where(ok, prop, sg)
        self._record("sig_g", ok)

    def scale_g(self):
        """Rescale ``sig_g[g]`` together with ``u[:, :, g]``."""
        zs, lu = self._draws(self.G)
        logk = np.exp(self.log_s["scale_g"]) * zs
        k = np.exp(logk)
        step = (k - 1.0) * self.uu
        with np.errstate(over="ignore", invalid="ignore"):
            lam_new = self.lam * np.exp(step)
            dll = np.sum(self.Dr * step - (lam_new - self.lam), axis=(0, 1))
        sp = self.sig_g * k
        ok = lu < dll + _halfnormal(sp, SIG_G_SCALE) - _halfnormal(self.sig_g, SIG_G_SCALE) + logk
        self.uu[..., ok] *= k[ok]
        self.lam[..., ok] = lam_new[..., ok]
        self.sig_g = np.where(ok, sp, self.sig_g)
        self._record("scale_g", ok)

    def iterate(self):
        self.cells()
        self.mu_gibbs()
        for _ in range(self.cfg.hyper_repeats):
            self.sig_beta_rw()
            self.scale_beta()
            self.trade_beta()
        self._shift("trade_mu", hold_eta=True)
        self._shift("shift_mu", hold_eta=False)
        self.sig_mu_rw()
        for _ in range(self.cfg.hyper_repeats):
            self.sig_g_rw()
            self.scale_g()
        self.it += 1

    def acceptance(self) -> dict:
        return {k: (s / n if n else float("nan")) for k, (s, n) in self.tally.items()}


def run_chain(data: SvdData, cfg: SamplerConfig, seed: int, chain: int, init: SvdState | None = None) -> ChainDraws:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain,)))
    A, T, G, P = data.shape
    st = initial_state(data, rng) if init is None else init.copy()
    ch = _Chain(data, cfg, rng, st)
    keep = cfg.iterations - cfg.warmup
    out = dict(
        beta=np.empty((keep, A, T, P), np.float32), u=np.empty((keep, A, T, G), np.float32),
        mu=np.empty((keep, P, T), np.float32), sig_beta=np.empty((keep, P, T), np.float32),
        sig_mu=np.empty((keep, P), np.float32), sig_g=np.empty((keep, G), np.float32),
    )
    for it in range(cfg.iterations):
        ch.iterate()
        if it >= cfg.warmup:
            i = it - cfg.warmup
            out["beta"][i] = ch.b
            out["u"][i] = ch.uu
            out["mu"][i] = ch.mu
            out["sig_beta"][i] = ch.sig_beta
            out["sig_mu"][i] = ch.sig_mu
            out["sig_g"][i] = ch.sig_g
    return ChainDraws(acceptance=ch.acceptance(), **out)


def _chain_job(args):
    data, cfg, seed, chain = args
    return run_chain(data, cfg, seed, chain)


# ---------------------------------------------------------------- summaries

def stack_draws(chains: list[ChainDraws]) -> dict:
    """Stack per-chain draws into arrays shaped (chains, draws, ...)."""
    names = ("beta", "u", "mu", "sig_beta", "sig_mu", "sig_g")
    return {n: np.stack([getattr(c, n) for c in chains]) for n in names}


def parameter_names(A: int, T: int, P: int, G: int) -> list[str]:
    names = [f"beta[{p + 1},{a + 1},{t + 1}]" for a in range(A) for t in range(T) for p in range(P)]
    names += [f"u[{g + 1},{a + 1},{t + 1}]" for a in range(A) for t in range(T) for g in range(G)]
    names += [f"mu[{p + 1},{t + 1}]" for p in range(P) for t in range(T)]
    names += [f"sig_beta[{p + 1},{t + 1}]" for p in range(P) for t in range(T)]
    names += [f"sig_mu[{p + 1}]" for p in range(P)]
    names += [f"sig_g[{g + 1}]" for g in range(G)]
    return names


def _flat_blocks(draws: dict):
    for name in ("beta", "u", "mu", "sig_beta", "sig_mu", "sig_g"):
        x = draws[name]
        yield x.reshape(x.shape[0], x.shape[1], -1)


def chain_diagnostics(draws: dict):
    """(rhat, ess_bulk, ess_tail) for every parameter, computed in chunks."""
    rh, eb, et = [], [], []
    for x in _flat_blocks(draws):
        for s in range(0, x.shape[2], _PARAM_CHUNK):
            c = x[:, :, s:s + _PARAM_CHUNK].astype(float)
            rh.append(rhat(c))
            eb.append(ess_bulk(c))
            et.append(ess_tail(c))
    return np.concatenate(rh), np.concatenate(eb), np.concatenate(et)


def log_rate_quantiles(draws: dict, V, probs=(0.025, 0.5, 0.975)) -> np.ndarray:
    """Quantiles of ``beta V + u`` per cell, shape (len(probs), A, T, G)."""
    beta, u = draws["beta"], draws["u"]
    M, n, A, T, P = beta.shape
    G = u.shape[-1]
    bf = beta.reshape(M * n, A * T, P)
    uf = u.reshape(M * n, A * T, G)
    out = np.empty((len(probs), A * T, G))
    V = np.asarray(V, dtype=float)
    for s in range(0, A * T, _CELL_CHUNK):
        eta = bf[:, s:s + _CELL_CHUNK].astype(float) @ V + uf[:, s:s + _CELL_CHUNK]
        out[:, s:s + _CELL_CHUNK] = np.quantile(eta, probs, axis=0)
    return out.reshape(len(probs), A, T, G)


def e0_quantiles(draws: dict, V, grouping: AgeGrouping = CANONICAL_GROUPING, probs=(0.025, 0.5, 0.975)) -> np.ndarray:
    """Quantiles of partial e0 per cell, shape (len(probs), A, T)."""
    beta, u = draws["beta"], draws["u"]
    M, n, A, T, P = beta.shape
    G = u.shape[-1]
    bf = beta.reshape(M * n, A * T, P)
    uf = u.reshape(M * n, A * T, G)
    out = np.empty((len(probs), A * T))
    V = np.asarray(V, dtype=float)
    for c in range(A * T):
        eta = bf[:, c].astype(float) @ V + uf[:, c]
        e0 = partial_e0_batch(expand_grouped(np.exp(eta), grouping))
        out[:, c] = np.quantile(e0, probs)
    return out.reshape(len(probs), A, T)


def sample_posterior(data: SvdData, basis=None, chains: int | None = None, iterations: int | None = None,
                     warmup: int | None = None, seed: int = 0, cfg: SamplerConfig | None = None,
                     keep_draws: bool = False, grouping: AgeGrouping = CANONICAL_GROUPING) -> PosteriorSummary:
    """Run the chains and summarize the posterior.

    ``basis`` (a ``PCBasis``) overrides ``data.V`` when given. Explicit
    ``chains``, ``iterations`` and ``warmup`` override ``cfg``.
    """
    cfg = cfg or SamplerConfig()
    over = {k: v for k, v in dict(chains=chains, iterations=iterations, warmup=warmup).items() if v is not None}
    if over:
        cfg = SamplerConfig(**{**asdict(cfg), **over})
    if basis is not None:
        data = SvdData(data.deaths, data.exposure, basis.V)
    jobs = [(data, cfg, seed, c) for c in range(cfg.chains)]
    if cfg.workers > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.chains)) as ex:
            results = list(ex.map(_chain_job, jobs))
    else:
        results = [_chain_job(j) for j in jobs]
    draws = stack_draws(results)
    A, T, G, P = data.shape
    q = log_rate_quantiles(draws, data.V)
    if G == len(grouping):
        e = e0_quantiles(draws, data.V, grouping)
    else:  # e0 needs the groups to tile ages 0..99
        e = np.full((3, A, T), np.nan)
    rh, eb, et = chain_diagnostics(draws)
    acceptance = {b: np.array([r.acceptance[b] for r in results]) for b in BLOCKS}
    healthy = np.ones(cfg.chains, dtype=bool)
    for b, rates in acceptance.items():
        if b == "independence_cells":
            healthy &= rates >= INDEPENDENCE_MIN
        else:
            healthy &= (rates >= ACCEPT_BAND[0]) & (rates <= ACCEPT_BAND[1])
    manifest = dict(
        seed=int(seed), chains=cfg.chains, iterations=cfg.iterations, warmup=cfg.warmup,
        target_accept=cfg.target_accept, parameterization=PARAMETERIZATION, kernel_backend=KERNEL_BACKEND,
        thresholds=dict(rhat_max=RHAT_MAX, ess_min=ESS_MIN, accept_band=list(ACCEPT_BAND),
                        independence_min=INDEPENDENCE_MIN),
        shape=dict(regions=A, years=T, groups=G, components=P),
    )
    return PosteriorSummary(
        median=q[1], lower=q[0], upper=q[2], e0_median=e[1], e0_lower=e[0], e0_upper=e[2],
        param_names=parameter_names(A, T, P, G), rhat=rh, ess_bulk=eb, ess_tail=et,
        acceptance=acceptance, chain_healthy=healthy, manifest=manifest,
        draws=draws if keep_draws else None,
    )


def write_summary(summary: PosteriorSummary, directory, years=None) -> None:
    """Write log-rate quantiles, e0, diagnostics and the run manifest."""
    from pathlib import Path

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    A, T, G = summary.median.shape
    years = list(range(1, T + 1)) if years is None else list(years)
    with open(d / "log_rates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "year", "group", "median", "lower", "upper"])
        for a in range(A):
            for t in range(T):
                for g in range(G):
                    w.writerow([a + 1, years[t], g, repr(float(summary.median[a, t, g])),
                                repr(float(summary.lower[a, t, g])), repr(float(summary.upper[a, t, g]))])
    with open(d / "e0.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "year", "median", "lower", "upper"])
        for a in range(A):
            for t in range(T):
                w.writerow([a + 1, years[t], repr(float(summary.e0_median[a, t])),
                            repr(float(summary.e0_lower[a, t])), repr(float(summary.e0_upper[a, t]))])
    with open(d / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "rhat", "ess_bulk", "ess_tail"])
        for n, r, b, t in zip(summary.param_names, summary.rhat, summary.ess_bulk, summary.ess_tail):
            w.writerow([n, repr(float(r)), repr(float(b)), repr(float(t))])
    man = dict(summary.manifest)
    man["acceptance"] = {k: [float(x) for x in v] for k, v in summary.acceptance.items()}
    man["chain_healthy"] = [bool(x) for x in summary.chain_healthy]
    (d / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
