"""Synthetic HMD-format inputs for running the pipeline without HMD files.

Each population gets a parametric hazard (infant decline, background level,
accident hump and a Gompertz-Kannisto senescent component) whose parameters
drift over calendar time and differ between populations by fixed random
effects, plus smooth and age-specific log-scale deviations per
population-year. Deaths are Poisson draws on the implied exposures. Files are written
in the HMD 1x1 layout so they go through the same parser as real data.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hmd import AgeYearTable, format_hmd_table
from .splines import bspline_basis

MAX_AGE = 110
# population-year deviations from the parametric hazard (log scale)
SMOOTH_NOISE_SD = 0.05
AGE_NOISE_SD = 0.02


@dataclass(frozen=True)
class PopulationSpec:
    code: str
    population_millions: float
    first_year: int
    last_year: int = 2019


DEFAULT_POPULATIONS = (
    PopulationSpec("DEUTNP", 82.0, 1990),
    PopulationSpec("DEUTW", 65.0, 1956),
    PopulationSpec("DEUTE", 17.0, 1956),
    PopulationSpec("FRATNP", 59.0, 1900),
    PopulationSpec("AUS", 19.0, 1921),
    PopulationSpec("AUT", 8.0, 1947),
    PopulationSpec("BEL", 10.0, 1900),
    PopulationSpec("BGR", 8.0, 1947),
    PopulationSpec("CAN", 30.0, 1921),
    PopulationSpec("CHE", 7.2, 1900),
    PopulationSpec("CZE", 10.3, 1950),
    PopulationSpec("DNK", 5.3, 1900),
    PopulationSpec("ESP", 40.0, 1908),
    PopulationSpec("FIN", 5.2, 1900),
    PopulationSpec("GBR_NP", 59.0, 1922),
    PopulationSpec("HUN", 10.2, 1950),
    PopulationSpec("ISL", 0.28, 1900),
    PopulationSpec("ITA", 57.0, 1900),
    PopulationSpec("JPN", 127.0, 1947),
    PopulationSpec("LUX", 0.44, 1960),
    PopulationSpec("NLD", 16.0, 1900),
    PopulationSpec("NOR", 4.5, 1900),
    PopulationSpec("NZL_NP", 3.9, 1948),
    PopulationSpec("PRT", 10.3, 1940),
    PopulationSpec("SWE", 8.9, 1900),
    PopulationSpec("USA", 282.0, 1933),
)

# male parameters for a reference population in the year 2000
# (G is the senescent hazard at age 60, so G * exp(-60 * gamma) ~ 4.35e-5)
_BASE = dict(A=0.0045, B=2.4, C=8e-5, H=6e-4, hump_age=22.0, hump_width=6.0, G=0.0131, gamma=0.095)
# per-year log-rate drift after / before 1970
_DRIFT_MODERN = dict(A=-0.045, C=-0.02, H=-0.01, G=-0.015, gamma=0.0003)
_DRIFT_HISTORIC = dict(A=-0.035, C=-0.03, H=0.0, G=-0.008, gamma=0.0002)


def _effects(code: str, seed: int) -> dict:
    if code == "DEUTNP":
        return dict(A=1.0, C=1.0, H=1.0, G=1.0, gamma=0.0, drift=1.0)
    key = int.from_bytes(code.encode(), "little") % (2**32)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))
    if code.startswith("DEUT"):
        scale = 0.05
    else:
        scale = 1.0
    return dict(
        A=float(np.exp(rng.normal(0, 0.25 * scale))),
        C=float(np.exp(rng.normal(0, 0.25 * scale))),
        H=float(np.exp(rng.normal(0, 0.3 * scale))),
        G=float(np.exp(rng.normal(0, 0.12 * scale))),
        gamma=float(rng.normal(0, 0.003 * scale)),
        drift=float(np.exp(rng.normal(0, 0.15 * scale))),
    )


def hazard(ages, year: int, sex: str, effects: dict | None = None) -> np.ndarray:
    """Death rates of the generating model at single ages."""
    x = np.asarray(ages, dtype=float)
    fx = effects or _effects("DEUTNP", 0)
    p = {}
    dt_mod = max(year, 1970) - 2000
    dt_hist = min(year, 1970) - 1970
    for k in ("A", "C", "H", "G"):
        p[k] = _BASE[k] * fx[k] * np.exp(fx["drift"] * (_DRIFT_MODERN[k] * dt_mod + _DRIFT_HISTORIC[k] * dt_hist))
    gamma = _BASE["gamma"] + fx["gamma"] + _DRIFT_MODERN["gamma"] * dt_mod + _DRIFT_HISTORIC["gamma"] * dt_hist
    if sex == "female":
        p["A"] *= 0.8
        p["C"] *= 0.7
        p["H"] *= 0.3
        p["G"] *= 0.4
        gamma += 0.006
    z = p["G"] * np.exp(gamma * (x - 60.0))
    hump = p["H"] * np.exp(-(((x - _BASE["hump_age"]) / _BASE["hump_width"]) ** 2))
    return p["A"] * np.exp(-_BASE["B"] * x) + p["C"] + hump + z / (1.0 + z)


def _age_weights(m: np.ndarray) -> np.ndarray:
    l = np.exp(-np.concatenate([[0.0], np.cumsum(m)[:-1]]))
    w = l * np.exp(-0.004 * np.arange(m.size))
    return w / w.sum()


def synthetic_population(spec: PopulationSpec, seed: int = 20220711):
    """Deaths and exposures for one population as ``{measure: {sex: AgeYearTable}}``."""
    ages = np.arange(MAX_AGE + 1)
    years = np.arange(spec.first_year, spec.last_year + 1)
    fx = _effects(spec.code, seed)
    key = int.from_bytes(spec.code.encode(), "little") % (2**32)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key, 1)))
    out = {"deaths": {}, "exposure": {}}
    tot_d = np.zeros((ages.size, years.size))
    tot_n = np.zeros((ages.size, years.size))
    Bn = bspline_basis(ages, 10.0, 3, 0.0, float(MAX_AGE + 1))
    for sex in ("female", "male"):
        D = np.zeros((ages.size, years.size))
        N = np.zeros((ages.size, years.size))
        for j, year in enumerate(years):
            m = hazard(ages, int(year), sex, fx)
            if spec.code != "DEUTNP":
                dev = Bn @ rng.normal(0, SMOOTH_NOISE_SD, Bn.shape[1]) + rng.normal(0, AGE_NOISE_SD, ages.size)
                m = m * np.exp(dev)
            pop = 0.5e6 * spec.population_millions * np.exp(0.004 * (year - 2000))
            n = pop * _age_weights(m)
            n = np.round(n, 2)
            n = np.maximum(n, 0.01)
            D[:, j] = rng.poisson(m * n)
            N[:, j] = n
        tot_d += D
        tot_n += N
        for measure, vals in (("deaths", D), ("exposure", N)):
            out[measure][sex] = AgeYearTable(
                ages=ages, years=years, values=vals, measure=measure, sex=sex,
                population_code=spec.code, open_last=True,
            )
    for measure, vals in (("deaths", tot_d), ("exposure", tot_n)):
        out[measure]["total"] = AgeYearTable(
            ages=ages, years=years, values=vals, measure=measure, sex="total",
            population_code=spec.code, open_last=True,
        )
    return out


def write_synthetic_hmd(root, populations=DEFAULT_POPULATIONS, seed: int = 20220711) -> list[Path]:
    """Write ``{CODE}.Deaths_1x1.txt`` and ``{CODE}.Exposures_1x1.txt`` files under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for spec in populations:
        tabs = synthetic_population(spec, seed)
        for measure, stem in (("deaths", "Deaths_1x1"), ("exposure", "Exposures_1x1")):
            title = f"{spec.code}, {'Deaths' if measure == 'deaths' else 'Exposure to risk'} (period 1x1), synthetic"
            text = format_hmd_table(tabs[measure], title=title)
            path = root / f"{spec.code}.{stem}.txt"
            path.write_text(text)
            written.append(path)
    return written
