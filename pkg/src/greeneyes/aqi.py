"""IAQI / AQI from pollutant concentrations by breakpoint interpolation.

Each standard maps a concentration to an individual index by linear
interpolation between bracketing breakpoints::

    IAQI = (C - BP_lo) / (BP_hi - BP_lo) * (IAQI_hi - IAQI_lo) + IAQI_lo

Segments are half-open ``(BP_lo, BP_hi]`` with zero belonging to the
first one. The USA tables have no 400 row, so 300 -> 500 is one segment.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import GreenEyesError

MAX_IAQI = 500.0


class ClampWarning(UserWarning):
    """Concentrations above the top breakpoint were clamped to IAQI 500."""


@dataclass(frozen=True)
class BreakpointTable:
    standard: str
    pollutant: str
    rows: tuple[tuple[float, float], ...]  # (iaqi, concentration in ug/m3)

    def __post_init__(self):
        rows = tuple((float(i), float(c)) for i, c in self.rows)
        object.__setattr__(self, "rows", rows)
        if len(rows) < 2:
            raise ValueError("a breakpoint table needs at least two rows")
        iaqi, conc = self.iaqi, self.concentration
        if np.any(np.diff(iaqi) <= 0) or np.any(np.diff(conc) <= 0):
            raise ValueError(f"{self.standard}/{self.pollutant}: rows must be strictly increasing")

    @property
    def iaqi(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    @property
    def concentration(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def num_levels(self) -> int:
        return len(self.rows) - 1


# fmt: off
USA_PM25 = BreakpointTable("usa", "pm25", (
    (0, 0), (50, 12.1), (100, 35.5), (150, 55.5), (200, 150.5), (300, 250.5), (500, 500.4)))
USA_PM10 = BreakpointTable("usa", "pm10", (
    (0, 0), (50, 55), (100, 155), (150, 255), (200, 355), (300, 425), (500, 604)))
CHINA_PM25 = BreakpointTable("china", "pm25", (
    (0, 0), (50, 35), (100, 75), (150, 115), (200, 150), (300, 250), (400, 350), (500, 500)))
CHINA_PM10 = BreakpointTable("china", "pm10", (
    (0, 0), (50, 50), (100, 150), (150, 250), (200, 350), (300, 420), (400, 500), (500, 600)))
# fmt: on

TABLES = {
    ("usa", "pm25"): USA_PM25,
    ("usa", "pm10"): USA_PM10,
    ("china", "pm25"): CHINA_PM25,
    ("china", "pm10"): CHINA_PM10,
}


def get_table(standard: str = "usa", pollutant: str = "pm25") -> BreakpointTable:
    key = (standard.lower(), pollutant.lower().replace(".", ""))
    try:
        return TABLES[key]
    except KeyError:
        raise ValueError(f"no built-in table for standard={standard!r}, pollutant={pollutant!r}") from None


def _segment(cp: np.ndarray, conc: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(conc, cp, side="left") - 1
    return np.clip(idx, 0, len(conc) - 2)


def _interpolate(cp: np.ndarray, table: BreakpointTable) -> tuple[np.ndarray, np.ndarray]:
    conc, iaqi = table.concentration, table.iaqi
    seg = _segment(cp, conc)
    lo_c, hi_c = conc[seg], conc[seg + 1]
    lo_i, hi_i = iaqi[seg], iaqi[seg + 1]
    values = (cp - lo_c) / (hi_c - lo_c) * (hi_i - lo_i) + lo_i
    over = cp > conc[-1]
    values = np.where(over, MAX_IAQI, values)
    return values, over


def iaqi_from_concentration(cp: float, table: BreakpointTable = USA_PM25) -> float:
    """Individual index for one concentration; above-table values clamp to 500."""
    cp = float(cp)
    if not np.isfinite(cp) or cp < 0:
        raise ValueError(f"concentration must be finite and >= 0, got {cp}")
    value, over = _interpolate(np.array([cp]), table)
    if over[0]:
        warnings.warn(f"concentration {cp} above table top, clamped to IAQI 500", ClampWarning, stacklevel=2)
    return float(value[0])


def aqi_from_iaqis(values: Iterable[float]) -> float:
    values = list(values)
    if not values:
        raise ValueError("AQI needs at least one IAQI value")
    return float(max(values))


def level_from_iaqi(v: float, table: BreakpointTable = USA_PM25) -> int:
    """Band index i with iaqi[i] < v <= iaqi[i+1]; 0 maps to level 0."""
    v = float(v)
    if not 0.0 <= v <= MAX_IAQI:
        raise ValueError(f"IAQI must be within [0, 500], got {v}")
    return int(_segment(np.array([v]), table.iaqi)[0])


def levels_from_iaqi(values: Sequence[float], table: BreakpointTable = USA_PM25) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size and (values.min() < 0 or values.max() > MAX_IAQI):
        raise ValueError("IAQI values must be within [0, 500]")
    return _segment(values, table.iaqi)


def series_to_iaqi(series: Sequence[float], table: BreakpointTable = USA_PM25) -> np.ndarray:
    """Pointwise IAQI of a concentration series.

    Negative samples raise with the offending index. Clamped samples are
    reported once, with their count, as a :class:`ClampWarning`.
    """
    cp = np.asarray(series, dtype=np.float64)
    if cp.size == 0:
        return np.zeros(0)
    bad = np.flatnonzero(~np.isfinite(cp) | (cp < 0))
    if bad.size:
        raise ValueError(f"invalid concentration {cp[bad[0]]} at index {bad[0]}")
    values, over = _interpolate(cp, table)
    n_over = int(over.sum())
    if n_over:
        warnings.warn(f"{n_over} of {cp.size} samples above table top, clamped to IAQI 500", ClampWarning, stacklevel=2)
    return values


# ------------------------------------------------------------ table files


def save_table(table: BreakpointTable, path) -> None:
    lines = [f"# standard: {table.standard}", f"# pollutant: {table.pollutant}"]
    lines += [f"{i!r}, {c!r}" for i, c in table.rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_table(path, standard: str | None = None, pollutant: str | None = None) -> BreakpointTable:
    """Read a table file: ``iaqi, concentration`` per line, ``#`` comments.

    ``# standard:`` and ``# pollutant:`` comments fill in metadata unless
    given explicitly.
    """
    meta = {}
    rows = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                meta[key.strip().lower()] = value.strip()
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            if len(parts) != 2:
                raise ValueError
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise GreenEyesError(f"{path}: line {lineno}: expected 'iaqi, concentration', got {raw!r}") from None
    return BreakpointTable(
        standard or meta.get("standard", "custom"),
        pollutant or meta.get("pollutant", "pm25"),
        tuple(rows),
    )
