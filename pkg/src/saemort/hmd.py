"""Reader and writer for HMD-style 1x1 period tables.

The layout is the one the Human Mortality Database uses for its
``Deaths_1x1`` and ``Exposures_1x1`` files::

    Germany, Deaths (period 1x1)    Last modified: ...

      Year          Age             Female            Male           Total
      2000           0            3651.00          4867.00          8518.00
      ...
      2000         110+              0.78             0.12             0.90

Missing cells are written as ``.`` and surface as NaN with a missing flag.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

SEXES = ("female", "male", "total")
MEASURES = ("deaths", "exposure")
_COLUMNS = {"female": 2, "male": 3, "total": 4}


class HMDFormatError(ValueError):
    """Raised for malformed HMD text input."""


@dataclass(frozen=True)
class AgeYearTable:
    """Non-negative values indexed by (age, year) for one sex and measure."""

    ages: np.ndarray
    years: np.ndarray
    values: np.ndarray
    measure: str
    sex: str
    population_code: str = ""
    open_last: bool = False
    missing: np.ndarray = field(default=None)

    def __post_init__(self):
        ages = np.asarray(self.ages, dtype=int)
        years = np.asarray(self.years, dtype=int)
        values = np.asarray(self.values, dtype=float)
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}")
        if self.sex not in SEXES:
            raise ValueError(f"unknown sex {self.sex!r}")
        if values.shape != (ages.size, years.size):
            raise ValueError(
                f"values shape {values.shape} does not match ages x years "
                f"({ages.size}, {years.size})"
            )
        if np.any(np.diff(ages) != 1):
            raise HMDFormatError("ages must be contiguous single years")
        missing = np.isnan(values) if self.missing is None else np.asarray(self.missing, bool)
        if np.any(values[~missing] < 0):
            raise ValueError("table values must be non-negative")
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    def year_slice(self, year: int, max_age: int | None = None) -> np.ndarray:
        """Values for one year, optionally truncated to ``ages <= max_age``."""
        hits = np.flatnonzero(self.years == year)
        if hits.size == 0:
            raise KeyError(f"year {year} not in table {self.population_code}/{self.sex}")
        col = self.values[:, hits[0]]
        if max_age is not None:
            col = col[self.ages <= max_age]
        return col.copy()

    def has_missing(self, years=None, max_age: int | None = None) -> bool:
        mask = self.missing
        if max_age is not None:
            mask = mask[self.ages <= max_age]
        if years is not None:
            mask = mask[:, np.isin(self.years, np.atleast_1d(years))]
        return bool(mask.any())


@dataclass(frozen=True)
class RateMatrix:
    """Log death rates with zero-death and missing cells flagged (NaN)."""

    ages: np.ndarray
    years: np.ndarray
    log_rates: np.ndarray
    zero_deaths: np.ndarray
    missing: np.ndarray
    population_code: str = ""
    sex: str = ""

    def year_slice(self, year: int, max_age: int | None = None) -> np.ndarray:
        hits = np.flatnonzero(self.years == year)
        if hits.size == 0:
            raise KeyError(f"year {year} not in rate matrix {self.population_code}/{self.sex}")
        col = self.log_rates[:, hits[0]]
        if max_age is not None:
            col = col[self.ages <= max_age]
        return col.copy()

    @property
    def flagged(self) -> np.ndarray:
        return self.zero_deaths | self.missing


_AGE_RE = re.compile(r"^(\d+)(\+?)$")


def _parse_value(token: str, lineno: int) -> float:
    if token == ".":
        return np.nan
    try:
        return float(token)
    except ValueError:
        raise HMDFormatError(f"line {lineno}: non-numeric value {token!r}") from None


def parse_hmd_table(
    text: str | TextIO,
    measure: str,
    sexes: Iterable[str] = SEXES,
    population_code: str = "",
) -> dict[str, AgeYearTable]:
    """Parse an HMD 1x1 table into one :class:`AgeYearTable` per sex column.

    Parameters
    ----------
    text : str or file-like
        Full file contents: header lines, a ``Year Age Female Male Total``
        column header, then one row per (year, age).
    measure : {'deaths', 'exposure'}
    sexes : iterable of str
        Sex columns to return.
    population_code : str
        Stored on the tables; defaults to the first header token.
    """
    if measure not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}")
    sexes = tuple(sexes)
    for s in sexes:
        if s not in SEXES:
            raise ValueError(f"unknown sex {s!r}")
    if not isinstance(text, str):
        text = text.read()
    lines = text.splitlines()

    start = None
    for i, line in enumerate(lines):
        tokens = line.split()
        if tokens[:2] == ["Year", "Age"]:
            start = i + 1
            break
    if start is None:
        raise HMDFormatError("column header 'Year Age Female Male Total' not found")
    if not population_code and lines and lines[0].strip():
        population_code = lines[0].split(",")[0].strip()

    rows: dict[tuple[int, int], list[float]] = {}
    open_age = None
    for lineno, line in enumerate(lines[start:], start=start + 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise HMDFormatError(f"line {lineno}: expected 5 columns, got {len(tokens)}")
        try:
            year = int(tokens[0])
        except ValueError:
            raise HMDFormatError(f"line {lineno}: bad year {tokens[0]!r}") from None
        match = _AGE_RE.match(tokens[1])
        if match is None:
            raise HMDFormatError(f"line {lineno}: bad age {tokens[1]!r}")
        age = int(match.group(1))
        if match.group(2):
            if open_age is not None and open_age != age:
                raise HMDFormatError(f"line {lineno}: inconsistent open age interval")
            open_age = age
        if (year, age) in rows:
            raise HMDFormatError(f"line {lineno}: duplicate (year, age) = ({year}, {age})")
        rows[(year, age)] = [_parse_value(t, lineno) for t in tokens[2:]]

    if not rows:
        raise HMDFormatError("no data rows")

    years = np.array(sorted({y for y, _ in rows}))
    ages = np.array(sorted({a for _, a in rows}))
    if ages[0] != 0 or np.any(np.diff(ages) != 1):
        raise HMDFormatError("ages are not contiguous single years starting at 0")
    if open_age is not None and open_age != ages[-1]:
        raise HMDFormatError("open age interval is not the final age")
    if len(rows) != ages.size * years.size:
        raise HMDFormatError("non-contiguous ages: some (year, age) rows are absent")

    data = np.empty((ages.size, years.size, 3))
    for (year, age), vals in rows.items():
        data[age, np.searchsorted(years, year)] = vals

    return {
        sex: AgeYearTable(
            ages=ages,
            years=years,
            values=data[:, :, _COLUMNS[sex] - 2].copy(),
            measure=measure,
            sex=sex,
            population_code=population_code,
            open_last=open_age is not None,
        )
        for sex in sexes
    }


def format_hmd_table(tables: dict[str, AgeYearTable], title: str = "") -> str:
    """Serialize tables (one per sex) back to the HMD 1x1 text layout.

    Sexes absent from ``tables`` are written as missing.
    """
    ref = next(iter(tables.values()))
    label = "Deaths" if ref.measure == "deaths" else "Exposure to risk"
    title = title or f"{ref.population_code}, {label} (period 1x1)"
    out = io.StringIO()
    out.write(f"{title}\n\n")
    out.write(f"{'Year':>6}{'Age':>12}{'Female':>19}{'Male':>17}{'Total':>16}\n")
    last = ref.ages[-1]
    for j, year in enumerate(ref.years):
        for i, age in enumerate(ref.ages):
            age_tok = f"{age}+" if (ref.open_last and age == last) else str(age)
            cells = []
            for sex in SEXES:
                t = tables.get(sex)
                if t is None or t.missing[i, j]:
                    cells.append(".")
                else:
                    cells.append(f"{t.values[i, j]:.2f}")
            out.write(f"{year:>6}{age_tok:>12}{cells[0]:>19}{cells[1]:>17}{cells[2]:>16}\n")
    return out.getvalue()


def read_hmd_file(path, measure: str, sexes: Iterable[str] = SEXES) -> dict[str, AgeYearTable]:
    path = Path(path)
    code = path.name.split(".")[0]
    return parse_hmd_table(path.read_text(), measure, sexes=sexes, population_code=code)


def to_rates(deaths: AgeYearTable, exposure: AgeYearTable) -> RateMatrix:
    """Log occurrence/exposure rates.

    Zero-death cells get NaN and are flagged in ``zero_deaths``; cells
    missing in either table are flagged in ``missing``.
    """
    if not (
        np.array_equal(deaths.ages, exposure.ages) and np.array_equal(deaths.years, exposure.years)
    ):
        raise ValueError("deaths and exposure tables are on different age/year grids")
    missing = deaths.missing | exposure.missing
    n = exposure.values
    if np.any(n[~missing] <= 0):
        raise ValueError("exposures must be strictly positive")
    d = deaths.values
    zero = (d == 0) & ~missing
    with np.errstate(divide="ignore", invalid="ignore"):
        log_rates = np.log(d) - np.log(n)
    log_rates[zero | missing] = np.nan
    return RateMatrix(
        ages=deaths.ages,
        years=deaths.years,
        log_rates=log_rates,
        zero_deaths=zero,
        missing=missing,
        population_code=deaths.population_code,
        sex=deaths.sex,
    )


def write_tables_csv(tables: Iterable[AgeYearTable], fh: TextIO) -> None:
    """Long CSV: population_code, sex, year, age, value (missing left blank)."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["population_code", "sex", "year", "age", "value"])
    for t in tables:
        for j, year in enumerate(t.years):
            for i, age in enumerate(t.ages):
                val = "" if t.missing[i, j] else repr(float(t.values[i, j]))
                writer.writerow([t.population_code, t.sex, int(year), int(age), val])


def read_tables_csv(fh: TextIO, measure: str) -> list[AgeYearTable]:
    """Inverse of :func:`write_tables_csv` (the open-interval flag is not kept)."""
    reader = csv.DictReader(fh)
    cells: dict[tuple[str, str], dict[tuple[int, int], float]] = {}
    for row in reader:
        key = (row["population_code"], row["sex"])
        val = float(row["value"]) if row["value"] != "" else np.nan
        cells.setdefault(key, {})[(int(row["year"]), int(row["age"]))] = val
    out = []
    for (code, sex), vals in cells.items():
        years = np.array(sorted({y for y, _ in vals}))
        ages = np.array(sorted({a for _, a in vals}))
        arr = np.full((ages.size, years.size), np.nan)
        for (y, a), v in vals.items():
            arr[a - ages[0], np.searchsorted(years, y)] = v
        out.append(AgeYearTable(ages, years, arr, measure, sex, code))
    return out


class HMDDirectory:
    """Lazy access to ``{CODE}.Deaths_1x1.txt`` / ``{CODE}.Exposures_1x1.txt`` files.

    Files are searched recursively below ``root``.
    """

    def __init__(self, root):
        self.root = Path(root)
        self._deaths = {p.name.split(".")[0]: p for p in self.root.rglob("*.Deaths_1x1.txt")}
        self._exposures = {p.name.split(".")[0]: p for p in self.root.rglob("*.Exposures_1x1.txt")}
        self._cache: dict[tuple[str, str], dict[str, AgeYearTable]] = {}
        if not self._deaths:
            raise FileNotFoundError(f"no HMD Deaths_1x1 files below {self.root}")

    @property
    def codes(self) -> list[str]:
        return sorted(set(self._deaths) & set(self._exposures))

    def tables(self, code: str, measure: str) -> dict[str, AgeYearTable]:
        key = (code, measure)
        if key not in self._cache:
            src = self._deaths if measure == "deaths" else self._exposures
            if code not in src:
                raise KeyError(f"population {code!r} has no {measure} file")
            self._cache[key] = read_hmd_file(src[code], measure)
        return self._cache[key]

    def deaths(self, code: str, sex: str) -> AgeYearTable:
        return self.tables(code, "deaths")[sex]

    def exposure(self, code: str, sex: str) -> AgeYearTable:
        return self.tables(code, "exposure")[sex]

    def rates(self, code: str, sex: str) -> RateMatrix:
        return to_rates(self.deaths(code, sex), self.exposure(code, sex))
