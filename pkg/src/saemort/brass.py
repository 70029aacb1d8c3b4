"""Artificial regional mortality via the Brass relational model, and Poisson
death simulation on single-year or age-grouped truths."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .lifetable import (
    CANONICAL_GROUPING,
    OMEGA,
    AgeGrouping,
    Survivorship,
    aggregate_counts,
    rates_to_survivorship,
    survivorship_to_rates,
)

EXPOSURE_SIZES = (1_000, 5_000, 10_000, 25_000, 50_000, 75_000, 100_000, 1_000_000)
YEARS = tuple(range(1995, 2006))
MAX_REDRAWS = 10_000

# region ids are 1-based as in the published parameter table
_TABLE = np.array(
    [
        [-0.48, 0.80], [0.69, 0.85], [0.04, 0.90], [-0.32, 0.82], [0.20, 1.23],
        [-0.19, 0.72], [0.33, 1.22], [-0.66, 0.88], [0.02, 1.04], [-0.26, 1.05],
        [0.62, 1.06], [0.33, 1.00], [0.01, 0.85], [0.37, 1.06], [0.34, 0.94],
        [-0.67, 1.09], [-0.24, 0.77], [0.24, 0.76], [0.53, 1.10], [-0.06, 1.07],
    ]
)
NAMED_REGIONS = {"low": 8, "medium": 9, "high": 2}
_NAMED_VALUES = {8: (-0.659, 0.880), 9: (0.018, 1.035), 2: (0.693, 0.850)}

_PATH_CODES = {"single_year": 0, "grouped": 1}


@dataclass(frozen=True)
class BrassParams:
    """Region-level Brass parameters, fixed over time."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("a and b must be vectors of equal length")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def __len__(self):
        return self.a.size

    @classmethod
    def default(cls) -> "BrassParams":
        """The published 20-region table, with 3-decimal values for the named regions."""
        tab = _TABLE.copy()
        for region, (a, b) in _NAMED_VALUES.items():
            tab[region - 1] = (a, b)
        return cls(tab[:, 0], tab[:, 1])

    @classmethod
    def draw(cls, seed, n_regions: int = 20) -> "BrassParams":
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-0.75, 0.75, n_regions), rng.uniform(0.7, 1.3, n_regions))


def region_index(region) -> int:
    """0-based index for a region id (1-based int) or name (low/medium/high)."""
    if isinstance(region, str):
        if region not in NAMED_REGIONS:
            raise KeyError(f"unknown region name {region!r}")
        region = NAMED_REGIONS[region]
    return int(region) - 1


def brass_logit(l) -> np.ndarray:
    """Half-logit ``0.5 * log((1 - l) / l)`` of survivorship at ages 1.. .

    Age 0 is excluded because ``l[0] = 1``.
    """
    l = l.l if isinstance(l, Survivorship) else np.asarray(l, dtype=float)
    lx = l[1:]
    if np.any(lx <= 0) or np.any(lx >= 1):
        raise ValueError("survivorship must lie strictly inside (0, 1) at ages >= 1")
    return 0.5 * np.log((1.0 - lx) / lx)


def inverse_brass_logit(Y) -> Survivorship:
    """Survivorship with ``l[0] = 1`` prepended to ``1 / (1 + exp(2 Y))``."""
    Y = np.asarray(Y, dtype=float)
    return Survivorship(np.concatenate([[1.0], 1.0 / (1.0 + np.exp(2.0 * Y))]))


def apply_brass(Y_ref, a: float, b: float) -> np.ndarray:
    return a + b * np.asarray(Y_ref, dtype=float)


def brass_rates(ref_rates, a: float, b: float) -> np.ndarray:
    """Region rates on ages 0..99 from reference rates on ages 0..99."""
    Y = brass_logit(rates_to_survivorship(ref_rates))
    return survivorship_to_rates(inverse_brass_logit(apply_brass(Y, a, b)))


def reweight_exposure(N_total: float, reference_exposure) -> np.ndarray:
    """Scale a reference age structure to total ``N_total``."""
    if not N_total > 0:
        raise ValueError("total exposure must be positive")
    ref = np.asarray(reference_exposure, dtype=float)
    if np.any(ref <= 0):
        raise ValueError("reference exposures must be positive")
    return ref / ref.sum(axis=-1, keepdims=True) * N_total


@dataclass(frozen=True)
class TrueWorld:
    """True rates for all regions and years plus the reference age structure.

    Attributes
    ----------
    log_rates : ndarray, shape (R, T, 100)
    ref_log_rates : ndarray, shape (T, 100)
    ref_exposure : ndarray, shape (T, 100)
        Reference exposures; only their age proportions are used.
    """

    years: np.ndarray
    log_rates: np.ndarray
    ref_log_rates: np.ndarray
    ref_exposure: np.ndarray
    params: BrassParams
    grouping: AgeGrouping = CANONICAL_GROUPING
    provenance: dict = field(default_factory=dict)

    @property
    def n_regions(self) -> int:
        return self.log_rates.shape[0]

    def year_index(self, year: int) -> int:
        hits = np.flatnonzero(np.asarray(self.years) == year)
        if hits.size == 0:
            raise KeyError(f"year {year} not in the simulated window")
        return int(hits[0])

    def exposures(self, N_total: float) -> np.ndarray:
        """Single-year exposures ``N_x^t``, shape (T, 100)."""
        return reweight_exposure(N_total, self.ref_exposure)

    def expected_deaths(self, N_total: float) -> np.ndarray:
        return np.exp(self.log_rates) * self.exposures(N_total)[None]

    def grouped_exposures(self, N_total: float) -> np.ndarray:
        _, Ng = aggregate_counts(np.zeros_like(self.ref_exposure), self.exposures(N_total), self.grouping)
        return Ng

    def grouped_log_rates(self, N_total: float = 1.0) -> np.ndarray:
        """``log(D_g / N_g)`` from aggregated deterministic deaths, shape (R, T, G)."""
        Dg, Ng = aggregate_counts(self.expected_deaths(N_total), self.exposures(N_total), self.grouping)
        return np.log(Dg / Ng[None])


def build_true_world(ref_log_rates, ref_exposure, params: BrassParams | None = None, years=YEARS, provenance=None) -> TrueWorld:
    """Apply the Brass transform to each reference year.

    ``ref_log_rates`` and ``ref_exposure`` have shape (T, 100) (already
    smoothed and truncated to ages 0..99).
    """
    params = params or BrassParams.default()
    ref_log_rates = np.asarray(ref_log_rates, dtype=float)
    ref_exposure = np.asarray(ref_exposure, dtype=float)
    if ref_log_rates.shape != (len(years), OMEGA) or ref_exposure.shape != ref_log_rates.shape:
        raise ValueError(f"reference inputs must have shape ({len(years)}, {OMEGA})")
    out = np.empty((len(params), len(years), OMEGA))
    for i in range(len(params)):
        for t in range(len(years)):
            out[i, t] = np.log(brass_rates(np.exp(ref_log_rates[t]), params.a[i], params.b[i]))
    return TrueWorld(
        years=np.asarray(years),
        log_rates=out,
        ref_log_rates=ref_log_rates,
        ref_exposure=ref_exposure,
        params=params,
        provenance=dict(provenance or {}),
    )


@dataclass(frozen=True)
class SimulatedDataset:
    """Simulated deaths for all regions and years at one exposure size.

    ``deaths`` has shape (R, T, A) with A = 100 single ages or G groups;
    ``exposure`` has shape (T, A) and is shared by all regions.
    """

    replicate: int
    seed: int
    exposure_total: float
    path: str
    deaths: np.ndarray
    exposure: np.ndarray
    true_log_rates: np.ndarray
    years: np.ndarray
    grouping: AgeGrouping | None = None
    attempts: np.ndarray | None = None

    def region_year(self, region: int, year: int):
        """(deaths, exposure) for a 0-based region index and calendar year."""
        t = int(np.flatnonzero(self.years == year)[0])
        return self.deaths[region, t], self.exposure[t]

    def aggregated(self, scheme: AgeGrouping = CANONICAL_GROUPING):
        """Group counts of a single-year dataset: (deaths (R,T,G), exposure (T,G))."""
        if self.path != "single_year":
            raise ValueError("only single-year datasets can be aggregated")
        Dg, _ = aggregate_counts(self.deaths, np.ones_like(self.deaths), scheme)
        _, Ng = aggregate_counts(np.zeros_like(self.exposure), self.exposure, scheme)
        return Dg, Ng


def _stream(seed: int, replicate: int, region: int, t: int, path: str) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(replicate, region, t, _PATH_CODES[path]))
    return np.random.default_rng(ss)


def poisson_min_total(rng: np.random.Generator, lam, min_total: int = 2, max_attempts: int = MAX_REDRAWS):
    """Poisson vector redrawn as a whole until its total reaches ``min_total``."""
    for attempt in range(1, max_attempts + 1):
        draw = rng.poisson(lam)
        if draw.sum() >= min_total:
            return draw, attempt
    raise RuntimeError(f"no Poisson draw with total >= {min_total} in {max_attempts} attempts")


def _simulate(mean, exposure, truth, world, N_total, seed, replicate, path, grouping):
    R, T, _ = mean.shape
    deaths = np.empty(mean.shape, dtype=np.int64)
    attempts = np.empty((R, T), dtype=np.int64)
    for i in range(R):
        for t in range(T):
            deaths[i, t], attempts[i, t] = poisson_min_total(_stream(seed, replicate, i, t, path), mean[i, t])
    return SimulatedDataset(
        replicate=replicate,
        seed=seed,
        exposure_total=float(N_total),
        path=path,
        deaths=deaths,
        exposure=exposure,
        true_log_rates=truth,
        years=np.asarray(world.years),
        grouping=grouping,
        attempts=attempts,
    )


def simulate_single_year(world: TrueWorld, N_total: float, seed: int, replicate: int = 0) -> SimulatedDataset:
    """``D_x ~ Poisson(m_x N_x)`` for every region, year and single age."""
    N = world.exposures(N_total)
    return _simulate(world.expected_deaths(N_total), N, world.log_rates, world, N_total, seed, replicate, "single_year", None)


def simulate_grouped(world: TrueWorld, N_total: float, seed: int, replicate: int = 0) -> SimulatedDataset:
    """``D_g ~ Poisson(m_g N_g)`` with truths from aggregated expected deaths."""
    Dg, Ng = aggregate_counts(world.expected_deaths(N_total), world.exposures(N_total), world.grouping)
    truth = np.log(Dg / Ng[None])
    mean = np.exp(truth) * Ng[None]
    return _simulate(mean, Ng, truth, world, N_total, seed, replicate, "grouped", world.grouping)


def write_dataset_csv(ds: SimulatedDataset, fh) -> None:
    """Columns: replicate, region, year, age, deaths, exposure, true_log_rate."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["replicate", "region", "year", "age", "deaths", "exposure", "true_log_rate"])
    labels = ds.grouping.labels if ds.grouping is not None else [str(x) for x in range(ds.deaths.shape[2])]
    R, T, A = ds.deaths.shape
    for i in range(R):
        for t in range(T):
            for k in range(A):
                w.writerow([
                    ds.replicate, i + 1, int(ds.years[t]), labels[k], int(ds.deaths[i, t, k]),
                    repr(float(ds.exposure[t, k])), repr(float(ds.true_log_rates[i, t, k])),
                ])
