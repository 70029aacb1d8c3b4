"""Rank-normalized split R-hat, bulk and tail effective sample sizes.

All functions take draws shaped (chains, draws, ...) and reduce the first two
axes. Chains are split in half before computing any statistic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

RHAT_MAX = 1.01
ESS_MIN = 400
ACCEPT_BAND = (0.1, 0.6)
INDEPENDENCE_MIN = 0.1
_CHUNK = 256


def _flat(draws) -> np.ndarray:
    x = np.asarray(draws, dtype=float)
    if x.ndim < 2:
        raise ValueError("draws must have shape (chains, draws, ...)")
    return x.reshape(x.shape[0], x.shape[1], -1)


def split_chains(x: np.ndarray) -> np.ndarray:
    """(M, n, K) -> (2M, n // 2, K), dropping the middle draw for odd n."""
    n = x.shape[1]
    h = n // 2
    return np.concatenate([x[:, :h], x[:, n - h:]], axis=0)


def rank_normalize(x: np.ndarray) -> np.ndarray:
    """Normal scores of pooled ranks (average ranks for ties), per parameter."""
    M, n, K = x.shape
    r = rankdata(x.reshape(M * n, K), axis=0)
    return ndtri((r - 0.375) / (M * n + 0.25)).reshape(M, n, K)


def _rhat_raw(x: np.ndarray) -> np.ndarray:
    M, n, _ = x.shape
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    return np.where(W > 0, r, np.where(B > 0, np.inf, 1.0))


def _ess_raw(x: np.ndarray) -> np.ndarray:
    """ESS with Geyer's initial monotone sequence, vectorized over parameters."""
    M, n, K = x.shape
    out = np.empty(K)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    for s in range(0, K, _CHUNK):
        c = x[:, :, s:s + _CHUNK]
        k = c.shape[2]
        centered = c - c.mean(axis=1, keepdims=True)
        f = np.fft.rfft(centered, n=nfft, axis=1)
        acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=1)[:, :n] / n  # (M, n, k)
        chain_var = acov[:, 0] * n / (n - 1)
        mean_var = chain_var.mean(axis=0)
        var_plus = mean_var * (n - 1) / n
        if M > 1:
            var_plus = var_plus + c.mean(axis=1).var(axis=0, ddof=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus  # (n, k)
        rho[0] = 1.0
        npair = n // 2
        pairs = rho[: 2 * npair].reshape(npair, 2, k).sum(axis=1)  # (npair, k)
        # initial positive sequence: keep pairs until the first negative one
        positive = np.cumprod(pairs >= 0, axis=0).astype(bool)
        positive[0] = True
        mono = np.minimum.accumulate(np.where(positive, pairs, np.inf), axis=0)
        tau = -1.0 + 2.0 * np.sum(np.where(positive, mono, 0.0), axis=0)
        total = M * n
        tau = np.maximum(tau, 1.0 / np.log10(total))
        ess = total / tau
        const = ~(var_plus > 0)
        ess[const] = np.nan
        out[s:s + k] = ess
    return out


def rhat(draws) -> np.ndarray:
    """Maximum of the bulk and folded rank-normalized split R-hat."""
    x = split_chains(_flat(draws))
    bulk = _rhat_raw(rank_normalize(x))
    folded = _rhat_raw(rank_normalize(np.abs(x - np.median(x, axis=(0, 1)))))
    return np.maximum(bulk, folded)


def ess_bulk(draws) -> np.ndarray:
    return _ess_raw(rank_normalize(split_chains(_flat(draws))))


def ess_tail(draws, probs=(0.05, 0.95)) -> np.ndarray:
    """Minimum ESS of the indicator chains at the given quantiles."""
    x = split_chains(_flat(draws))
    vals = []
    for p in probs:
        q = np.quantile(x, p, axis=(0, 1))
        vals.append(_ess_raw((x <= q).astype(float)))
    return np.min(np.vstack(vals), axis=0)


def _extreme(fn, x) -> float:
    x = x[~np.isnan(x)]
    return float(fn(x)) if x.size else float("nan")


@dataclass
class DiagnosticsReport:
    rhat_ok: bool
    bulk_ess_ok: bool
    tail_ess_ok: bool
    sampler_ok: bool
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.rhat_ok and self.bulk_ess_ok and self.tail_ess_ok and self.sampler_ok


def run_checks(summary, rhat_max: float = RHAT_MAX, ess_min: float = ESS_MIN,
               accept_band=ACCEPT_BAND, independence_min: float = INDEPENDENCE_MIN) -> DiagnosticsReport:
    """Apply the convergence thresholds to a posterior summary.

    ``summary`` needs ``rhat``, ``ess_bulk``, ``ess_tail`` arrays and an
    ``acceptance`` dict mapping block names to per-chain rates. Blocks whose
    name starts with ``independence`` only need a rate above
    ``independence_min``; all others must lie inside ``accept_band``.
    """
    rh = np.asarray(summary.rhat, dtype=float)
    eb = np.asarray(summary.ess_bulk, dtype=float)
    et = np.asarray(summary.ess_tail, dtype=float)
    rhat_ok = bool(np.all(np.isfinite(rh)) and np.all(rh < rhat_max))
    bulk_ok = bool(np.all(np.isfinite(eb)) and np.all(eb > ess_min))
    tail_ok = bool(np.all(np.isfinite(et)) and np.all(et > ess_min))
    bad_blocks = []
    for name, rate in summary.acceptance.items():
        r = np.asarray(rate, dtype=float)
        if name.startswith("independence"):
            ok = np.all(r >= independence_min)
        else:
            ok = np.all((r >= accept_band[0]) & (r <= accept_band[1]))
        if not ok:
            bad_blocks.append(name)
    details = dict(
        max_rhat=_extreme(np.nanmax, rh),
        min_ess_bulk=_extreme(np.nanmin, eb),
        min_ess_tail=_extreme(np.nanmin, et),
        failed_blocks=bad_blocks,
    )
    return DiagnosticsReport(rhat_ok, bulk_ok, tail_ok, not bad_blocks, details)
