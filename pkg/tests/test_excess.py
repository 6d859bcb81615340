import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coolopt.errors import InvalidConfig, TariffGap
from coolopt.excess import (
    DT_HOURS,
    ExcessSeries,
    TariffSchedule,
    TouPeriod,
    aggregate_views,
    demand_charge,
    excess_cost,
    excess_energy,
    excess_power,
)

FLAT = TariffSchedule(kind="flat", flat_price=0.06)
ALL_DAYS = tuple(range(7))


def series_of(e, start="2023-01-01T00:00", regime=None):
    e = np.asarray(e, dtype=float)
    ts = np.datetime64(start, "m") + np.arange(len(e)) * np.timedelta64(10, "m")
    p = e / DT_HOURS
    return ExcessSeries(ts, p, e, excess_cost(e, FLAT, ts), np.zeros(len(e), int) if regime is None else regime)


@pytest.mark.parametrize("a,h,out", [(0.70, 0.68, 0.02), (0.65, 0.68, 0.0), (0.68, 0.68, 0.0)])
def test_excess_power(a, h, out):
    assert excess_power(a, h) == pytest.approx(out, abs=1e-12)


@pytest.mark.parametrize("p,e", [(0.02, 0.02 / 6), (0.0, 0.0), (0.6, 0.1)])
def test_excess_energy(p, e):
    assert excess_energy(p) == pytest.approx(e, abs=1e-15)


def test_excess_cost():
    ts = np.datetime64("2023-01-02T10:00")
    assert excess_cost(0.02 / 6, FLAT, ts) == pytest.approx(0.20)
    assert excess_cost(0.0, FLAT, ts) == 0.0
    assert excess_cost(1.0, TariffSchedule(flat_price=0.10), ts) == pytest.approx(100.0)


def test_tou_lookup_gap_and_overlap():
    tou = TariffSchedule(kind="tou", tou_periods=[
        TouPeriod((0, 8), ALL_DAYS, 0.04), TouPeriod((8, 20), (0, 1, 2, 3, 4), 0.12),
        TouPeriod((8, 20), (5, 6), 0.05), TouPeriod((20, 24), ALL_DAYS, 0.06),
    ])
    # 2023-01-02 is a Monday
    ts = np.array(["2023-01-02T07:50", "2023-01-02T08:00", "2023-01-07T12:00", "2023-01-07T23:50"], dtype="datetime64[m]")
    assert tou.price(ts).tolist() == [0.04, 0.12, 0.05, 0.06]
    with pytest.raises(TariffGap):
        TariffSchedule(kind="tou", tou_periods=[TouPeriod((0, 23), ALL_DAYS, 0.1)])
    with pytest.raises(InvalidConfig):
        TariffSchedule(kind="tou", tou_periods=[TouPeriod((0, 24), ALL_DAYS, 0.1), TouPeriod((5, 6), (0,), 0.1)])
    with pytest.raises(InvalidConfig):
        TariffSchedule(flat_price=-0.01)


def test_demand_charge():
    s = series_of([0.0] * 10)
    assert demand_charge(s, 100.0)[1] == 0.0
    s = series_of([0.5 * DT_HOURS, 0.2 * DT_HOURS])
    assert demand_charge(s, 100.0)[1] == pytest.approx(50.0)
    assert demand_charge(s, 0.0)[1] == 0.0
    two = series_of(np.full(6 * 24 * 40, 0.01))
    table, total = demand_charge(two, 10.0)
    assert list(table["month"]) == ["2023-01", "2023-02"] and total == pytest.approx(2 * 10.0 * 0.01 / DT_HOURS)


def test_views_uniform_and_month_one():
    s = series_of(np.full(6 * 24 * 60, 0.01))
    v = aggregate_views(s)
    hm = v["hour_month"]
    assert np.allclose(hm[[1, 2]].to_numpy(), 0.01)
    assert hm[[5, 6]].isna().all().all()
    e = np.zeros(6 * 24 * 60)
    e[: 6 * 24 * 31] = 0.02
    m = aggregate_views(series_of(e))["monthly"]
    assert m.loc[m["month"] == "2023-02", "e_excess"].item() == 0.0
    assert m.loc[m["month"] == "2023-01", "e_excess"].item() == pytest.approx(e.sum())


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 0.2), min_size=1, max_size=3000), st.integers(0, 2))
def test_views_conserve_totals(e, regime_mod):
    e = np.array(e)
    s = series_of(e, regime=np.arange(len(e)) % (regime_mod + 1))
    v = aggregate_views(s)
    total = math.fsum(e)
    for name in ("daily", "monthly", "regime", "weekday"):
        assert abs(v[name]["e_excess"].sum() - total) <= 1e-9
        assert (v[name]["e_excess"] >= 0).all()
    counts = v["hour_month_count"].to_numpy()
    mat = v["hour_month"].fillna(0).to_numpy()
    assert abs((mat * counts).sum() - total) <= 1e-9
    assert counts.sum() == len(e)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 0.2), min_size=1, max_size=200), st.floats(0, 10))
def test_tariff_scaling(e, k):
    e = np.array(e)
    ts = np.datetime64("2023-03-01T00:00", "m") + np.arange(len(e)) * np.timedelta64(10, "m")
    tou = TariffSchedule(kind="tou", demand_rate=40.0, tou_periods=[
        TouPeriod((0, 12), ALL_DAYS, 0.03), TouPeriod((12, 24), ALL_DAYS, 0.09)])
    scaled = tou.scaled(k)
    np.testing.assert_allclose(excess_cost(e, scaled, ts), k * excess_cost(e, tou, ts), rtol=1e-12, atol=0)
    s = ExcessSeries(ts, e / DT_HOURS, e, excess_cost(e, tou, ts), np.zeros(len(e), int))
    assert demand_charge(s, scaled.demand_rate)[1] == pytest.approx(k * demand_charge(s, tou.demand_rate)[1], rel=1e-12, abs=0)
