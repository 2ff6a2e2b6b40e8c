"""Mortality layer: life tables, survival probabilities, and the
exponentially tilted (risk-neutral) mortality law with its density process."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import AgeOutOfRange, MalformedTable, TiltedProbabilityOutOfRange


@dataclass(frozen=True)
class LifeTable:
    """One-year death probabilities q_x for contiguous integer ages.

    The table must close: q at ``max_age`` equals one.
    """

    min_age: int
    q: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 1 or q.size == 0:
            raise MalformedTable("need at least one age row")
        if np.any((q < 0.0) | (q > 1.0)):
            raise MalformedTable("death probabilities must lie in [0, 1]")
        if q[-1] != 1.0:
            raise MalformedTable(f"table must close with q=1 at age {self.max_age}")
        object.__setattr__(self, "q", q)

    @property
    def max_age(self) -> int:
        return self.min_age + self.q.size - 1

    def qx(self, age: int) -> float:
        if not self.min_age <= age <= self.max_age:
            raise AgeOutOfRange(f"age {age} outside [{self.min_age}, {self.max_age}]")
        return float(self.q[age - self.min_age])


def load_life_table(source: Union[str, Path, io.TextIOBase]) -> LifeTable:
    """Read an (age, qx) CSV with a header row and contiguous ages."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return load_life_table(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or [h.strip().lower() for h in header[:2]] != ["age", "qx"]:
        raise MalformedTable("expected header 'age,qx'")
    ages: list[int] = []
    qs: list[float] = []
    for row in reader:
        if not row or not row[0].strip():
            continue
        try:
            ages.append(int(row[0]))
            qs.append(float(row[1]))
        except (ValueError, IndexError) as exc:
            raise MalformedTable(f"bad row {row!r}") from exc
    if not ages:
        raise MalformedTable("table has no rows")
    for prev, cur in zip(ages, ages[1:]):
        if cur != prev + 1:
            raise MalformedTable(f"ages must be contiguous, gap after {prev}")
    return LifeTable(min_age=ages[0], q=np.array(qs))


def survival(table: LifeTable, x: int, t: int) -> float:
    """t-year survival probability for a life aged x (product of 1 - q)."""
    if t < 0:
        raise AgeOutOfRange("survival horizon must be nonnegative")
    if t == 0:
        return 1.0
    if x < table.min_age or x + t - 1 > table.max_age:
        raise AgeOutOfRange(
            f"ages {x}..{x + t - 1} not covered by [{table.min_age}, {table.max_age}]")
    start = x - table.min_age
    return float(np.prod(1.0 - table.q[start:start + t]))


@dataclass(frozen=True)
class MortalityTilt:
    """Exponential tilt g_1..g_T of the death-indicator increments."""

    g: np.ndarray

    def __post_init__(self) -> None:
        g = np.asarray(self.g, dtype=float).ravel()
        if not np.all(np.isfinite(g)):
            raise TiltedProbabilityOutOfRange("tilt entries must be finite")
        object.__setattr__(self, "g", g)

    @classmethod
    def zero(cls, horizon: int) -> "MortalityTilt":
        return cls(np.zeros(horizon))


@dataclass(frozen=True)
class TiltedMortality:
    """Tilted lifetime law over a T-year horizon.

    ``deferred_death[k-1]`` is the probability of death in year k (survive
    k-1 years then die); ``cumulative[k-1]`` the probability of death within
    k years; ``survive_horizon`` the probability of attaining the horizon.
    """

    survive_horizon: float
    deferred_death: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self) -> None:
        total = self.survive_horizon + float(np.sum(self.deferred_death))
        if abs(total - 1.0) > 1e-12:
            raise TiltedProbabilityOutOfRange(
                f"tilted law sums to {total!r}, expected 1")


def _tilt_denominators(table: LifeTable, x: int, horizon: int,
                       tilt: MortalityTilt) -> tuple[np.ndarray, np.ndarray]:
    """Survival probabilities p_k = P[T_x > k] and the running tilt
    normalizer prod_{t<=k} (e^{g_t} p_{t-1} + (1 - e^{g_t}) p_t)."""
    if tilt.g.size < horizon:
        raise TiltedProbabilityOutOfRange(
            f"tilt supplies {tilt.g.size} entries for horizon {horizon}")
    p = np.array([survival(table, x, k) for k in range(horizon + 1)])
    eg = np.exp(tilt.g[:horizon])
    terms = eg * p[:-1] + (1.0 - eg) * p[1:]
    if np.any(terms <= 0.0):
        raise TiltedProbabilityOutOfRange("tilt normalizer is not positive")
    return p, np.cumprod(terms)


def tilted_mortality(table: LifeTable, x: int, horizon: int,
                     tilt: MortalityTilt) -> TiltedMortality:
    """Lifetime law under the tilted measure; g = 0 reproduces the table."""
    if horizon < 1:
        raise AgeOutOfRange("horizon must be at least one year")
    p, den = _tilt_denominators(table, x, horizon, tilt)
    eg = np.exp(tilt.g[:horizon])
    cum_p = np.cumprod(p)  # prod_{j<=k} p_j
    survive = float(cum_p[horizon] / den[horizon - 1])
    deferred = np.empty(horizon)
    cumulative = np.empty(horizon)
    for k in range(1, horizon + 1):
        lead = cum_p[k - 1]  # prod_{t=1..k} p_{t-1}
        deferred[k - 1] = eg[k - 1] * (p[k - 1] - p[k]) * lead / den[k - 1]
        cumulative[k - 1] = 1.0 - lead * p[k] / den[k - 1]
    values = np.concatenate(([survive], deferred, cumulative))
    if np.any((values < -1e-15) | (values > 1.0 + 1e-15)):
        raise TiltedProbabilityOutOfRange(
            "tilted probabilities left [0, 1]; inadmissible g")
    return TiltedMortality(survive, np.clip(deferred, 0.0, 1.0),
                           np.clip(cumulative, 0.0, 1.0))


def mortality_density(table: LifeTable, x: int, horizon: int,
                      tilt: MortalityTilt, death_year: int | None) -> float:
    """Terminal mortality density K on a lifetime outcome.

    ``death_year`` k in 1..horizon marks death during year k; None marks
    survival to the horizon.  Outcome values weighted by their physical
    probabilities sum to one.
    """
    p, den = _tilt_denominators(table, x, horizon, tilt)
    cum_p = np.cumprod(p)
    if death_year is None:
        return float(cum_p[horizon - 1] / den[horizon - 1])
    if not 1 <= death_year <= horizon:
        raise AgeOutOfRange(f"death year {death_year} outside 1..{horizon}")
    k = death_year
    eg_k = math.exp(float(tilt.g[k - 1]))
    return float(eg_k * cum_p[k - 1] / den[k - 1])
