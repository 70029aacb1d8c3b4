"""Rate, survivorship and partial life expectancy conversions.

All conversions assume a constant hazard within each single year of age, so
``l[x+1] = l[x] * exp(-m[x])`` and the person-years lived in ``[x, x+1)`` are
``l[x] * (1 - exp(-m[x])) / m[x]``. Ages run from 0 to 99 with no open
interval; survivorship is tabulated on 0..100.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OMEGA = 100


@dataclass(frozen=True)
class MortalitySchedule:
    """Log death rates on single ages (or age groups) with provenance."""

    log_rates: np.ndarray
    ages: np.ndarray = None
    grouping: "AgeGrouping | None" = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        lr = np.asarray(self.log_rates, dtype=float)
        object.__setattr__(self, "log_rates", lr)
        if self.ages is None and self.grouping is None:
            object.__setattr__(self, "ages", np.arange(lr.size))

    @property
    def rates(self) -> np.ndarray:
        return np.exp(self.log_rates)


@dataclass(frozen=True)
class AgeGrouping:
    """Ordered partition of single ages into groups.

    Attributes
    ----------
    groups : tuple of (label, lower, upper)
        Inclusive age bounds per group.
    """

    groups: tuple[tuple[str, int, int], ...]

    def __post_init__(self):
        if not self.groups:
            raise ValueError("age grouping is empty")
        expected = 0
        for label, lo, hi in self.groups:
            if lo != expected:
                raise ValueError(
                    f"age grouping has a gap or overlap at group {label!r} "
                    f"(starts at {lo}, expected {expected})"
                )
            if hi < lo:
                raise ValueError(f"group {label!r} has upper < lower")
            expected = hi + 1
        if expected != OMEGA:
            raise ValueError(f"age grouping covers 0..{expected - 1}, not 0..{OMEGA - 1}")

    @property
    def labels(self) -> list[str]:
        return [g[0] for g in self.groups]

    @property
    def widths(self) -> np.ndarray:
        return np.array([hi - lo + 1 for _, lo, hi in self.groups])

    @property
    def lowers(self) -> np.ndarray:
        return np.array([lo for _, lo, _ in self.groups])

    def __len__(self):
        return len(self.groups)

    def index(self) -> np.ndarray:
        """Group index of every single age 0..99."""
        return np.repeat(np.arange(len(self.groups)), self.widths)

    def membership(self) -> np.ndarray:
        """Indicator matrix of shape (G, 100); row g flags the ages in group g."""
        w = np.zeros((len(self.groups), OMEGA))
        w[self.index(), np.arange(OMEGA)] = 1.0
        return w

    def averaging(self) -> np.ndarray:
        """Matrix mapping single-year values to unweighted group means."""
        w = self.membership()
        return w / w.sum(axis=1, keepdims=True)


def _canonical() -> AgeGrouping:
    groups = [("0", 0, 0), ("1-4", 1, 4)]
    groups += [(f"{lo}-{lo + 4}", lo, lo + 4) for lo in range(5, OMEGA, 5)]
    return AgeGrouping(tuple(groups))


#: <1, 1-4, 5-9, ..., 95-99 (21 groups).
CANONICAL_GROUPING = _canonical()


@dataclass(frozen=True)
class Survivorship:
    """Survivorship ``l`` on ages 0..len(l)-1 with radix ``l[0] = 1``."""

    l: np.ndarray

    def __post_init__(self):
        l = np.asarray(self.l, dtype=float)
        if l.ndim != 1 or l.size < 2:
            raise ValueError("survivorship must be a vector of length >= 2")
        if l[0] != 1.0:
            raise ValueError(f"radix must be 1, got {l[0]}")
        if np.any(l <= 0) or np.any(l > 1):
            raise ValueError("survivorship must lie in (0, 1]")
        if np.any(np.diff(l) > 0):
            raise ValueError("survivorship must be non-increasing")
        object.__setattr__(self, "l", l)


def _positive_rates(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if np.any(~np.isfinite(m)) or np.any(m <= 0):
        raise ValueError("mortality rates must be finite and strictly positive")
    return m


def rates_to_survivorship(m) -> Survivorship:
    """Survivorship on ages 0..len(m) from single-year rates."""
    m = _positive_rates(m)
    l = np.exp(-np.concatenate([[0.0], np.cumsum(m)]))
    return Survivorship(l)


def survivorship_to_rates(l) -> np.ndarray:
    """Invert :func:`rates_to_survivorship`: ``m[x] = -log(l[x+1] / l[x])``.

    Equal adjacent survivorship gives a zero rate; increasing survivorship
    raises ``ValueError``.
    """
    l = l.l if isinstance(l, Survivorship) else np.asarray(l, dtype=float)
    if np.any(np.diff(l) > 0):
        raise ValueError("survivorship increases with age")
    if np.any(l <= 0):
        raise ValueError("survivorship must be strictly positive")
    return -np.diff(np.log(l))


def person_years(m) -> np.ndarray:
    """Person-years lived in each single-year interval (radix 1).

    Works along the last axis. Zero rates are allowed here (the interval contributes ``l[x]``); this is
    what the raw-data baseline needs when an age has no deaths.
    """
    m = np.asarray(m, dtype=float)
    if np.any(m < 0) or np.any(~np.isfinite(m)):
        raise ValueError("mortality rates must be finite and non-negative")
    cum = np.cumsum(m, axis=-1)
    l = np.exp(-np.concatenate([np.zeros(m.shape[:-1] + (1,)), cum[..., :-1]], axis=-1))
    frac = np.ones_like(m)
    pos = m > 1e-12
    frac[pos] = -np.expm1(-m[pos]) / m[pos]
    small = ~pos
    frac[small] = 1.0 - m[small] / 2.0
    return l * frac


def partial_e0(m) -> float:
    """Partial life expectancy over the ages covered by ``m`` (0..99).

    Parameters
    ----------
    m : array_like
        Strictly positive single-year death rates.

    Returns
    -------
    float
        Expected years lived between exact ages 0 and ``len(m)``.
    """
    return float(person_years(_positive_rates(m)).sum())


def partial_e0_batch(m) -> np.ndarray:
    """:func:`partial_e0` along the last axis of an array of schedules."""
    return person_years(_positive_rates(m)).sum(axis=-1)


def raw_partial_e0(m) -> float:
    """Partial life expectancy that tolerates zero rates (raw data)."""
    return float(person_years(m).sum())


def group_rates(m, scheme: AgeGrouping = CANONICAL_GROUPING) -> np.ndarray:
    """Unweighted mean of single-year rates within each group."""
    m = np.asarray(m, dtype=float)
    return scheme.averaging() @ m


def aggregate_counts(d, n, scheme: AgeGrouping = CANONICAL_GROUPING):
    """Sum deaths and exposures within each group.

    The last axis must run over the ages 0..99; leading axes are kept.
    """
    w = scheme.membership()
    d = np.asarray(d, dtype=float)
    n = np.asarray(n, dtype=float)
    if d.shape[-1] != OMEGA or n.shape[-1] != OMEGA:
        raise ValueError(f"expected {OMEGA} single ages on the last axis")
    return d @ w.T, n @ w.T


def expand_grouped(values, scheme: AgeGrouping = CANONICAL_GROUPING) -> np.ndarray:
    """Repeat group values onto their single ages (last axis)."""
    values = np.asarray(values, dtype=float)
    return values[..., scheme.index()]
