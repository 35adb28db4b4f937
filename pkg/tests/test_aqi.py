import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from greeneyes import aqi
from greeneyes.aqi import (
    CHINA_PM10,
    CHINA_PM25,
    USA_PM10,
    USA_PM25,
    ClampWarning,
    aqi_from_iaqis,
    iaqi_from_concentration,
    level_from_iaqi,
    levels_from_iaqi,
    series_to_iaqi,
)

# Breakpoint table transcribed independently of the module constants:
# IAQI, USA PM2.5, USA PM10, China PM2.5, China PM10 (None = not listed).
PUBLISHED = [
    (0, 0, 0, 0, 0),
    (50, 12.1, 55, 35, 50),
    (100, 35.5, 155, 75, 150),
    (150, 55.5, 255, 115, 250),
    (200, 150.5, 355, 150, 350),
    (300, 250.5, 425, 250, 420),
    (400, None, None, 350, 500),
    (500, 500.4, 604, 500, 600),
]
COLUMNS = {USA_PM25: 1, USA_PM10: 2, CHINA_PM25: 3, CHINA_PM10: 4}
ALL_TABLES = list(COLUMNS)


def published_rows(table):
    col = COLUMNS[table]
    return [(r[0], r[col]) for r in PUBLISHED if r[col] is not None]


def iaqi_oracle(cp, rows):
    """Reference interpolation with an explicit half-open segment search."""
    for (i_lo, c_lo), (i_hi, c_hi) in zip(rows, rows[1:]):
        if c_lo < cp <= c_hi or (cp == 0 and c_lo == 0):
            return (cp - c_lo) / (c_hi - c_lo) * (i_hi - i_lo) + i_lo
    return 500.0


@pytest.mark.parametrize("table", ALL_TABLES, ids=lambda t: f"{t.standard}-{t.pollutant}")
def test_tables_match_published_rows(table):
    assert [tuple(r) for r in table.rows] == [(float(i), float(c)) for i, c in published_rows(table)]


@pytest.mark.parametrize("table", ALL_TABLES, ids=lambda t: f"{t.standard}-{t.pollutant}")
def test_breakpoints_round_trip(table):
    for iaqi, conc in published_rows(table):
        assert abs(iaqi_from_concentration(conc, table) - iaqi) <= 1e-9


def test_spot_values():
    assert iaqi_from_concentration(12.1) == pytest.approx(50, abs=1e-12)
    assert iaqi_from_concentration(0) == 0
    assert iaqi_from_concentration(23.8, USA_PM25) == pytest.approx(75, abs=1e-9)


def test_usa_has_no_400_row():
    assert 400.0 not in USA_PM25.iaqi and 400.0 not in USA_PM10.iaqi
    mid = (250.5 + 500.4) / 2
    assert iaqi_from_concentration(mid) == pytest.approx(400, abs=1e-9)


@pytest.mark.parametrize("table", ALL_TABLES, ids=lambda t: f"{t.standard}-{t.pollutant}")
@given(st.floats(0, 700, allow_nan=False))
def test_matches_reference(table, cp):
    rows = published_rows(table)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClampWarning)
        got = iaqi_from_concentration(cp, table)
    assert got == pytest.approx(iaqi_oracle(cp, rows), abs=1e-9)


@given(st.floats(0, 600), st.floats(0, 600))
def test_monotone(a, b):
    lo, hi = sorted((a, b))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClampWarning)
        assert iaqi_from_concentration(lo) <= iaqi_from_concentration(hi)


@pytest.mark.parametrize("table", ALL_TABLES, ids=lambda t: f"{t.standard}-{t.pollutant}")
def test_continuous_at_breakpoints(table):
    for iaqi, conc in published_rows(table)[1:-1]:
        below = iaqi_from_concentration(np.nextafter(conc, 0), table)
        above = iaqi_from_concentration(np.nextafter(conc, np.inf), table)
        assert abs(below - iaqi) < 1e-9 and abs(above - iaqi) < 1e-9


def test_clamp_warns():
    with pytest.warns(ClampWarning):
        assert iaqi_from_concentration(900.0) == 500.0


def test_negative_rejected():
    with pytest.raises(ValueError):
        iaqi_from_concentration(-0.1)


def test_aqi_max():
    assert aqi_from_iaqis([75, 50, 30]) == 75
    assert aqi_from_iaqis([42.5]) == 42.5
    assert aqi_from_iaqis([30, 75, 50]) == aqi_from_iaqis([50, 30, 75])
    with pytest.raises(ValueError):
        aqi_from_iaqis([])


def test_levels():
    assert level_from_iaqi(0) == 0
    assert level_from_iaqi(75) == 1
    assert level_from_iaqi(50) == 0
    assert level_from_iaqi(50.0001) == 1
    assert level_from_iaqi(500) == USA_PM25.num_levels - 1
    assert level_from_iaqi(450, CHINA_PM25) == 6
    with pytest.raises(ValueError):
        level_from_iaqi(500.5)
    with pytest.raises(ValueError):
        level_from_iaqi(-1)


@given(st.floats(0, 500), st.floats(0, 500))
def test_level_monotone(a, b):
    lo, hi = sorted((a, b))
    assert level_from_iaqi(lo) <= level_from_iaqi(hi)


def test_levels_vectorized():
    v = np.array([0, 50, 75, 100, 101, 499])
    assert levels_from_iaqi(v).tolist() == [level_from_iaqi(x) for x in v]


def test_series():
    assert np.allclose(series_to_iaqi(np.full(5, 12.1)), 50, atol=1e-12)
    assert series_to_iaqi([]).size == 0
    np.testing.assert_allclose(series_to_iaqi([0, 23.8]), [0, 75], atol=1e-9)


def test_series_negative_reports_index():
    with pytest.raises(ValueError, match="index 2"):
        series_to_iaqi([1.0, 2.0, -3.0, -1.0])


def test_series_clamp_aggregated():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = series_to_iaqi([10.0, 600.0, 700.0])
    clamps = [w for w in caught if issubclass(w.category, ClampWarning)]
    assert len(clamps) == 1 and "2 of 3" in str(clamps[0].message)
    assert out[1:].tolist() == [500.0, 500.0]


def test_table_file_round_trip(tmp_path):
    for table in ALL_TABLES:
        path = tmp_path / f"{table.standard}_{table.pollutant}.txt"
        aqi.save_table(table, path)
        assert aqi.load_table(path) == table


def test_custom_table_file(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("# custom\n0, 0\n100, 10\n500, 20\n")
    t = aqi.load_table(path)
    assert iaqi_from_concentration(5, t) == 50
    path.write_text("0, 0\n100\n")
    with pytest.raises(aqi.GreenEyesError, match="line 2"):
        aqi.load_table(path)


def test_table_must_increase():
    with pytest.raises(ValueError):
        aqi.BreakpointTable("x", "pm25", ((0, 0), (50, 10), (40, 20)))


def test_get_table():
    assert aqi.get_table("china", "PM2.5") is CHINA_PM25
    with pytest.raises(ValueError):
        aqi.get_table("eu")
