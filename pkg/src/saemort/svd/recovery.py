"""Recovery check of the SVD-model on data generated from the model itself.

One true state is drawn from the model with a given basis; replicate
datasets are independent Poisson redraws of that state. Each replicate is
fitted, its convergence checks are recorded, and the posterior-median
partial e0 of one area-year is compared with the sampling distribution of
the raw partial e0 of that cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..lifetable import CANONICAL_GROUPING, AgeGrouping, expand_grouped, partial_e0_batch, person_years
from .diagnostics import run_checks
from .model import SvdData, log_rates, simulate_from_model
from .sampler import SamplerConfig, default_iterations, sample_posterior


@dataclass
class RecoveryScenario:
    V: np.ndarray
    exposure: np.ndarray  # (A, T, G)
    state: object
    area: int
    year_index: int
    grouping: AgeGrouping = CANONICAL_GROUPING

    @property
    def rates(self) -> np.ndarray:
        return np.exp(log_rates(self.state, self.V))

    @property
    def true_e0(self) -> np.ndarray:
        return partial_e0_batch(expand_grouped(self.rates, self.grouping))

    def dataset(self, seed) -> SvdData:
        rng = np.random.default_rng(seed)
        return SvdData(rng.poisson(self.rates * self.exposure), self.exposure, self.V)

    def raw_e0_distribution(self, n: int = 4000, seed: int = 0) -> np.ndarray:
        """Raw partial e0 of the tracked cell over ``n`` Poisson redraws."""
        rng = np.random.default_rng(seed)
        lam = self.rates[self.area, self.year_index]
        N = self.exposure[self.area, self.year_index]
        D = rng.poisson(lam * N, size=(n, lam.size))
        return person_years(expand_grouped(D / N, self.grouping)).sum(axis=-1)


def build_scenario(V, group_exposure, A: int = 20, seed: int = 0, start_log_rates=None, year_index: int = 5,
                   **model_kw) -> RecoveryScenario:
    """Draw a true state; the tracked area has the median true e0 at ``year_index``.

    ``group_exposure`` is (T, G) and is shared by every area.
    ``start_log_rates`` (G,) are projected on ``V`` to set the first-year
    level of ``mu``.
    """
    V = np.asarray(V, dtype=float)
    Ng = np.asarray(group_exposure, dtype=float)
    T = Ng.shape[0]
    beta_mean = None
    if start_log_rates is not None:
        beta_mean = np.linalg.lstsq(V.T, np.asarray(start_log_rates, dtype=float), rcond=None)[0]
    exposure = np.broadcast_to(Ng[None], (A, T, V.shape[1])).copy()
    _, state = simulate_from_model(V, A, T, exposure, seed, beta_mean=beta_mean, **model_kw)
    sc = RecoveryScenario(V, exposure, state, 0, year_index)
    e0 = sc.true_e0[:, year_index]
    sc.area = int(np.argsort(e0, kind="stable")[A // 2])
    return sc


@dataclass
class RecoveryRun:
    seed: int
    passed: bool
    e0_median: float
    details: dict = field(default_factory=dict)


@dataclass
class RecoveryResult:
    runs: list
    e0_band: tuple

    @property
    def pass_fraction(self) -> float:
        return float(np.mean([r.passed for r in self.runs]))

    @property
    def e0_inside(self) -> np.ndarray:
        lo, hi = self.e0_band
        return np.array([lo <= r.e0_median <= hi for r in self.runs])


def run_recovery(sc: RecoveryScenario, n_runs: int = 25, seed: int = 0, cfg: SamplerConfig | None = None,
                 progress=None) -> RecoveryResult:
    """Fit ``n_runs`` Poisson replicates of the scenario."""
    if cfg is None:
        it, wu = default_iterations(float(sc.exposure[0, 0].sum()))
        cfg = SamplerConfig(iterations=it, warmup=wu)
    seeds = np.random.SeedSequence(seed).spawn(2 * n_runs + 1)
    runs = []
    for r in range(n_runs):
        data = sc.dataset(seeds[2 * r])
        summ = sample_posterior(data, seed=int(seeds[2 * r + 1].generate_state(1)[0]), cfg=cfg)
        rep = run_checks(summ)
        runs.append(RecoveryRun(r, rep.passed, float(summ.e0_median[sc.area, sc.year_index]), rep.details))
        if progress is not None:
            progress(runs[-1])
    raw = sc.raw_e0_distribution(seed=seeds[-1])
    band = tuple(float(q) for q in np.quantile(raw, [0.025, 0.975]))
    return RecoveryResult(runs, band)
