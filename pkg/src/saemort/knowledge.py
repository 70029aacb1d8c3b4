"""Demographic knowledge artifacts consumed by the three estimators.

* TOPALS uses a :class:`StandardSchedule` (one smoothed log-rate schedule).
* D-splines use a :class:`DsplineCalibration` (penalty matrix, target vector
  and residual covariance estimated from a database of schedules).
* The SVD-model uses a :class:`PCBasis` (leading right singular vectors of a
  matrix of grouped log rates).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hmd import AgeYearTable, HMDDirectory
from .lifetable import CANONICAL_GROUPING, OMEGA, AgeGrouping, aggregate_counts
from .pspline import SmootherConfig, smooth_schedule, smooth_sequence
from .splines import difference_matrix

BUNDLE_VERSION = 1
GERMAN_CODES = ("DEUTNP", "DEUTW", "DEUTE")
DSPLINE_KINDS = ("D1", "D2", "DLC")
METHODS = ("topals", "dspline", "svd")
DK_KINDS = ("dk1", "dk2", "dk3")


class MissingSliceError(KeyError):
    """A requested population/sex/year is absent or has missing cells."""


class SourceExclusionError(ValueError):
    """An excluded population was used to build an artifact."""


@dataclass(frozen=True)
class StandardSchedule:
    log_rates: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        lr = np.asarray(self.log_rates, dtype=float)
        if lr.shape != (OMEGA,) or not np.all(np.isfinite(lr)):
            raise ValueError(f"standard schedule must be {OMEGA} finite log rates")
        object.__setattr__(self, "log_rates", lr)


def ridge_inverse(V: np.ndarray, rel_floor: float = 1e-10, rel_ridge: float = 1e-8):
    """Inverse of a PSD matrix with ridge ``eps * I`` when it is ill-conditioned.

    ``eps = rel_ridge * trace(V) / dim`` is added when the smallest eigenvalue is
    below ``rel_floor`` times the largest. Returns ``(inverse, eps)``.
    """
    V = 0.5 * (V + V.T)
    w = np.linalg.eigvalsh(V)
    eps = 0.0
    if w[0] < rel_floor * w[-1] or w[-1] <= 0:
        eps = rel_ridge * float(np.trace(V)) / V.shape[0]
        if eps <= 0:
            raise np.linalg.LinAlgError("covariance is zero; no ridge can regularize it")
    A = V + eps * np.eye(V.shape[0])
    return np.linalg.inv(A), eps


@dataclass(frozen=True)
class DsplineCalibration:
    """Penalty ingredients for one D-spline estimator.

    Attributes
    ----------
    kind : {'D1', 'D2', 'DLC'}
    D : ndarray
        (99, 100), (98, 100) or (100, 100).
    c : ndarray
        Target of ``D @ log m`` (smoothed unless built with ``smooth_lambda=None``).
    V : ndarray
        Covariance of the database residuals ``D M - c`` (divisor L - 1).
    mean_schedule : ndarray
        Row means of the database, used as a starting value.
    """

    kind: str
    D: np.ndarray
    c: np.ndarray
    V: np.ndarray
    mean_schedule: np.ndarray
    b: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)
    V_inv: np.ndarray | None = None
    ridge: float = 0.0

    def __post_init__(self):
        if self.kind not in DSPLINE_KINDS:
            raise ValueError(f"unknown D-spline kind {self.kind!r}")
        if self.V_inv is None:
            try:
                inv, eps = ridge_inverse(self.V)
            except np.linalg.LinAlgError:
                inv, eps = None, 0.0
            object.__setattr__(self, "V_inv", inv)
            object.__setattr__(self, "ridge", eps)

    def precision(self) -> np.ndarray:
        if self.V_inv is None:
            raise np.linalg.LinAlgError(f"{self.kind} covariance is singular and cannot be regularized")
        return self.V_inv


def dspline_operator(kind: str, n: int = OMEGA, b=None) -> np.ndarray:
    if kind == "D1":
        return difference_matrix(n, 1)
    if kind == "D2":
        return difference_matrix(n, 2)
    if kind == "DLC":
        b = np.asarray(b, dtype=float)
        return np.eye(n) - np.outer(b, b) / (b @ b)
    raise ValueError(f"unknown D-spline kind {kind!r}")


def build_dspline_calibration(M, kind: str, smooth_lambda: float | None = 10.0, provenance=None) -> DsplineCalibration:
    """Calibrate a D-spline penalty from a database ``M`` (ages x schedules).

    Parameters
    ----------
    M : array_like, shape (100, L)
        Columns are complete log-rate schedules.
    kind : {'D1', 'D2', 'DLC'}
    smooth_lambda : float or None
        Smoothing parameter for the target vector ``c``; ``None`` keeps the raw mean.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != OMEGA:
        raise ValueError(f"database must have {OMEGA} rows (ages)")
    L = M.shape[1]
    if L < 2:
        raise ValueError("at least two schedules are needed to estimate a covariance")
    if not np.all(np.isfinite(M)):
        raise ValueError("database contains non-finite log rates")
    a = M.mean(axis=1)
    b = None
    if kind == "DLC":
        U, _, _ = np.linalg.svd(M - a[:, None], full_matrices=False)
        b = U[:, 0]
        if b[np.argmax(np.abs(b))] < 0:
            b = -b
    D = dspline_operator(kind, OMEGA, b)
    R = D @ M
    c = D @ a if kind == "DLC" else R.mean(axis=1)
    if smooth_lambda is not None:
        c = smooth_sequence(c, smooth_lambda)
        if kind == "DLC":
            # keep the target inside the range of the projection
            c = D @ c
    # second moments about the (possibly smoothed) target; equals the sample
    # covariance when c is the raw mean
    resid = R - c[:, None]
    V = resid @ resid.T / (L - 1)
    prov = dict(provenance or {})
    prov.update(kind=kind, n_schedules=L, smooth_lambda=smooth_lambda)
    return DsplineCalibration(kind=kind, D=D, c=c, V=V, mean_schedule=a, b=b, provenance=prov)


@dataclass(frozen=True)
class PCBasis:
    """Right singular vectors ``V`` (3 x G) with their singular values."""

    V: np.ndarray
    singular_values: np.ndarray
    grouping: AgeGrouping = CANONICAL_GROUPING
    provenance: dict = field(default_factory=dict)

    @property
    def n_components(self) -> int:
        return self.V.shape[0]


def build_pc_basis(X, n_components: int = 3, grouping: AgeGrouping = CANONICAL_GROUPING, provenance=None) -> PCBasis:
    """Leading right singular vectors of an (F x G) matrix of grouped log rates.

    The decomposition is uncentered. ``V[0]`` is signed so its first entry is
    negative; later components are signed so their largest-magnitude entry is
    positive.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < n_components:
        raise ValueError(f"need at least {n_components} schedules")
    if not np.all(np.isfinite(X)):
        raise ValueError("schedule matrix has missing or non-finite cells")
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    tol = s[0] * max(X.shape) * np.finfo(float).eps * 10
    if s.size < n_components or s[n_components - 1] <= tol:
        raise ValueError(f"schedule matrix has fewer than {n_components} nonzero singular values")
    V = Vt[:n_components].copy()
    if V[0, 0] > 0:
        V[0] = -V[0]
    for p in range(1, n_components):
        if V[p, np.argmax(np.abs(V[p]))] < 0:
            V[p] = -V[p]
    prov = dict(provenance or {})
    prov.update(n_rows=X.shape[0])
    return PCBasis(V=V, singular_values=s[:n_components], grouping=grouping, provenance=prov)


# --------------------------------------------------------------------------
# construction from HMD-style sources


def _slice(deaths: AgeYearTable, exposure: AgeYearTable, year: int):
    try:
        d = deaths.year_slice(year, OMEGA - 1)
        n = exposure.year_slice(year, OMEGA - 1)
    except KeyError as exc:
        raise MissingSliceError(str(exc)) from None
    if d.size != OMEGA or n.size != OMEGA:
        raise MissingSliceError(f"{deaths.population_code} {year} does not cover ages 0..{OMEGA - 1}")
    if deaths.has_missing([year], OMEGA - 1) or exposure.has_missing([year], OMEGA - 1):
        raise MissingSliceError(f"{deaths.population_code}/{deaths.sex} {year} has missing cells")
    return d, n


def build_standard(deaths: AgeYearTable, exposure: AgeYearTable, year: int, cfg: SmootherConfig = SmootherConfig()) -> StandardSchedule:
    """Smoothed log schedule for one population-year on ages 0..99."""
    d, n = _slice(deaths, exposure, year)
    sched = smooth_schedule(d, n, cfg)
    prov = dict(population_code=deaths.population_code, sex=deaths.sex, year=int(year))
    prov.update(sched.provenance)
    return StandardSchedule(sched.log_rates, prov)


def is_complete(deaths: AgeYearTable, exposure: AgeYearTable, year: int) -> bool:
    """All ages 0..99 present, non-missing, with positive deaths and exposures."""
    try:
        d, n = _slice(deaths, exposure, year)
    except MissingSliceError:
        return False
    return bool(np.all(d > 0) and np.all(n > 0))


def schedule_inventory(hmd: HMDDirectory, sex: str, years, exclude=()) -> list[tuple[str, int]]:
    """Complete (population, year) schedules of one sex within ``years``."""
    out = []
    years = set(int(y) for y in years)
    for code in hmd.codes:
        if code in exclude:
            continue
        D, N = hmd.deaths(code, sex), hmd.exposure(code, sex)
        for y in sorted(years & set(int(v) for v in D.years)):
            if is_complete(D, N, y):
                out.append((code, y))
    return out


def _check_exclusion(inventory, exclude):
    bad = sorted({code for code, _ in inventory if code in exclude})
    if bad:
        raise SourceExclusionError(f"excluded populations present in sources: {bad}")


def raw_database(hmd: HMDDirectory, sex: str, inventory, exclude=GERMAN_CODES) -> np.ndarray:
    """Raw single-year log rates, shape (100, L), one column per inventory item."""
    _check_exclusion(inventory, exclude)
    cols = []
    for code, y in inventory:
        d, n = _slice(hmd.deaths(code, sex), hmd.exposure(code, sex), y)
        cols.append(np.log(d / n))
    return np.column_stack(cols)


def raw_grouped_database(hmd: HMDDirectory, sex: str, inventory, exclude=GERMAN_CODES, grouping=CANONICAL_GROUPING) -> np.ndarray:
    """Occurrence/exposure grouped log rates, shape (F, G)."""
    _check_exclusion(inventory, exclude)
    rows = []
    for code, y in inventory:
        d, n = _slice(hmd.deaths(code, sex), hmd.exposure(code, sex), y)
        dg, ng = aggregate_counts(d, n, grouping)
        rows.append(np.log(dg / ng))
    return np.vstack(rows)


def smoothed_series(deaths: AgeYearTable, exposure: AgeYearTable, years, cfg: SmootherConfig = SmootherConfig()):
    """Smoothed log rates (T, 100) and exposures (T, 100) for consecutive years."""
    lr, ex = [], []
    for y in years:
        d, n = _slice(deaths, exposure, y)
        lr.append(smooth_schedule(d, n, cfg).log_rates)
        ex.append(n)
    return np.vstack(lr), np.vstack(ex)


def smoothed_grouped_series(deaths, exposure, years, cfg: SmootherConfig = SmootherConfig(), grouping=CANONICAL_GROUPING):
    """Grouped log rates of smoothed schedules, weighting ages by exposure."""
    lr, ex = smoothed_series(deaths, exposure, years, cfg)
    dg, ng = aggregate_counts(np.exp(lr) * ex, ex, grouping)
    return np.log(dg / ng)


@dataclass(frozen=True)
class DemographicKnowledge:
    method: str
    kind: str
    artifact: object
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class KnowledgeSources:
    """Where each artifact comes from. Defaults follow the study design."""

    reference: str = "DEUTNP"
    topals: dict = field(default_factory=lambda: {
        "dk1": ("DEUTNP", "male", 2000),
        "dk2": ("FRATNP", "male", 2000),
        "dk3": ("FRATNP", "female", 1965),
    })
    dspline_years: dict = field(default_factory=lambda: {
        "dk1": ("male", tuple(range(1970, 2020, 10))),
        "dk2": ("male", tuple(range(1900, 1970, 10))),
        "dk3": ("female", tuple(range(1970, 2020, 10))),
    })
    svd_years: tuple = tuple(range(1995, 2006))
    svd_pool_years: tuple = tuple(range(1970, 2019))
    exclude: tuple = GERMAN_CODES
    smooth_lambda: float = 10.0


def assemble_dk(method: str, kind: str, hmd: HMDDirectory, sources: KnowledgeSources = KnowledgeSources(),
                cfg: SmootherConfig = SmootherConfig(), estimator: str | None = None) -> DemographicKnowledge:
    """Build one method's artifact for one knowledge variant.

    For D-splines ``estimator`` selects D1/D2/DLC; when omitted all three
    calibrations are returned in a dict.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if kind not in DK_KINDS:
        raise ValueError(f"unknown knowledge kind {kind!r}")
    if method == "topals":
        code, sex, year = sources.topals[kind]
        art = build_standard(hmd.deaths(code, sex), hmd.exposure(code, sex), year, cfg)
        prov = dict(art.provenance)
    elif method == "dspline":
        sex, years = sources.dspline_years[kind]
        inv = schedule_inventory(hmd, sex, years, exclude=sources.exclude)
        M = raw_database(hmd, sex, inv, sources.exclude)
        prov = dict(sex=sex, inventory=[f"{c}:{y}" for c, y in inv])
        kinds = DSPLINE_KINDS if estimator is None else (estimator,)
        cals = {k: build_dspline_calibration(M, k, sources.smooth_lambda, prov) for k in kinds}
        art = cals if estimator is None else cals[estimator]
    else:
        if kind == "dk2":
            inv = schedule_inventory(hmd, "male", sources.svd_pool_years, exclude=sources.exclude)
            X = raw_grouped_database(hmd, "male", inv, sources.exclude)
            prov = dict(sex="male", smoothed=False, inventory=[f"{c}:{y}" for c, y in inv])
        else:
            sex = "male" if kind == "dk1" else "female"
            code = sources.reference
            X = smoothed_grouped_series(hmd.deaths(code, sex), hmd.exposure(code, sex), sources.svd_years, cfg)
            prov = dict(sex=sex, smoothed=True, inventory=[f"{code}:{y}" for y in sources.svd_years])
        art = build_pc_basis(X, provenance=prov)
    prov.update(method=method, kind=kind)
    return DemographicKnowledge(method, kind, art, prov)


# --------------------------------------------------------------------------
# CSV bundle


def _write_array(path: Path, arr) -> str:
    arr = np.atleast_1d(np.asarray(arr, dtype=float))
    with open(path, "w") as fh:
        for row in np.atleast_2d(arr) if arr.ndim == 2 else arr[:, None]:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path.name


def _read_array(path: Path, ndim: int) -> np.ndarray:
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return arr if ndim == 2 else arr[:, 0]


def save_bundle(dk: DemographicKnowledge, directory) -> Path:
    """Write one CSV per matrix or vector plus ``manifest.json``."""
    out = Path(directory) / f"{dk.method}_{dk.kind}"
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    art = dk.artifact
    if dk.method == "topals":
        files["log_rates"] = _write_array(out / "log_rates.csv", art.log_rates)
        extra = {"standard_provenance": art.provenance}
    elif dk.method == "svd":
        files["V"] = _write_array(out / "V.csv", art.V)
        files["singular_values"] = _write_array(out / "singular_values.csv", art.singular_values)
        extra = {}
    else:
        cals = art if isinstance(art, dict) else {art.kind: art}
        for k, cal in cals.items():
            files[f"{k}/D"] = _write_array(out / f"{k}_D.csv", cal.D)
            files[f"{k}/c"] = _write_array(out / f"{k}_c.csv", cal.c)
            files[f"{k}/V"] = _write_array(out / f"{k}_V.csv", cal.V)
            files[f"{k}/mean_schedule"] = _write_array(out / f"{k}_mean_schedule.csv", cal.mean_schedule)
            if cal.b is not None:
                files[f"{k}/b"] = _write_array(out / f"{k}_b.csv", cal.b)
        extra = {"estimators": sorted(cals), "single": not isinstance(art, dict)}
    manifest = dict(version=BUNDLE_VERSION, method=dk.method, kind=dk.kind, files=files,
                    provenance=dk.provenance, **extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return out


def load_bundle(directory) -> DemographicKnowledge:
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    if man.get("version") != BUNDLE_VERSION:
        raise ValueError(f"unsupported bundle version {man.get('version')!r}")
    f = man["files"]
    if man["method"] == "topals":
        art = StandardSchedule(_read_array(d / f["log_rates"], 1), man.get("standard_provenance", {}))
    elif man["method"] == "svd":
        art = PCBasis(_read_array(d / f["V"], 2), _read_array(d / f["singular_values"], 1), provenance=man["provenance"])
    else:
        cals = {}
        for k in man["estimators"]:
            b = _read_array(d / f[f"{k}/b"], 1) if f"{k}/b" in f else None
            cals[k] = DsplineCalibration(
                kind=k,
                D=_read_array(d / f[f"{k}/D"], 2),
                c=_read_array(d / f[f"{k}/c"], 1),
                V=_read_array(d / f[f"{k}/V"], 2),
                mean_schedule=_read_array(d / f[f"{k}/mean_schedule"], 1),
                b=b,
                provenance=man["provenance"],
            )
        art = next(iter(cals.values())) if man.get("single") else cals
    return DemographicKnowledge(man["method"], man["kind"], art, man["provenance"])
