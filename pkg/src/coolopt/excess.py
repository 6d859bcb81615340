"""Excess cooling power, energy and cost against the surrogate baseline."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .errors import InvalidConfig, TariffGap
from .telemetry import calendar_arrays

# hours per 10-minute interval
DT_HOURS = 10.0 / 60.0
KWH_PER_MWH = 1000.0


@dataclass
class TouPeriod:
    hours: tuple  # [start, end) in hours, 0..24
    weekdays: tuple  # Monday=0
    price: float  # $/kWh


@dataclass
class TariffSchedule:
    kind: str = "flat"
    flat_price: float = 0.06
    tou_periods: list = field(default_factory=list)
    demand_rate: Optional[float] = None  # $ per MW-month

    def __post_init__(self):
        if self.kind not in ("flat", "tou"):
            raise InvalidConfig(f"tariff kind must be 'flat' or 'tou', got {self.kind!r}")
        if self.flat_price < 0 or (self.demand_rate is not None and self.demand_rate < 0):
            raise InvalidConfig("tariff prices must be non-negative")
        self.tou_periods = [p if isinstance(p, TouPeriod) else TouPeriod(**p) for p in self.tou_periods]
        self._table = self._week_table()
        if self.kind == "tou":
            self.validate()

    def _week_table(self):
        if self.kind == "flat":
            return np.full((7, 24), float(self.flat_price))
        table = np.full((7, 24), np.nan)
        for p in self.tou_periods:
            if p.price < 0:
                raise InvalidConfig("tariff prices must be non-negative")
            h0, h1 = p.hours
            if not 0 <= h0 < h1 <= 24:
                raise InvalidConfig(f"bad TOU hour range {p.hours}")
            for d in p.weekdays:
                if not np.all(np.isnan(table[d, h0:h1])):
                    raise InvalidConfig(f"TOU periods overlap on weekday {d}, hours {h0}-{h1}")
                table[d, h0:h1] = p.price
        return table

    def validate(self):
        if np.isnan(self._table).any():
            d, h = np.argwhere(np.isnan(self._table))[0]
            raise TariffGap(f"TOU periods leave weekday {d} hour {h} unpriced")
        return self

    def price(self, timestamps):
        """$/kWh at each interval start, keyed on (weekday, hour)."""
        hour, _, weekday = calendar_arrays(timestamps)
        prices = self._table[weekday, hour]
        if np.isnan(prices).any():
            raise TariffGap("timestamp falls outside every TOU period")
        return prices

    def scaled(self, k):
        return TariffSchedule(
            kind=self.kind,
            flat_price=self.flat_price * k,
            tou_periods=[TouPeriod(p.hours, p.weekdays, p.price * k) for p in self.tou_periods],
            demand_rate=None if self.demand_rate is None else self.demand_rate * k,
        )


def excess_power(p_acc_actual, p_acc_hat):
    out = np.maximum(np.subtract(p_acc_actual, p_acc_hat), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def excess_energy(p_excess):
    out = np.multiply(p_excess, DT_HOURS)
    return float(out) if np.ndim(out) == 0 else out


def excess_cost(e_excess, tariff, timestamp):
    ts = np.atleast_1d(np.asarray(timestamp, dtype="datetime64[m]"))
    out = np.asarray(e_excess, dtype=float) * KWH_PER_MWH * tariff.price(ts)
    return float(out[0]) if np.ndim(e_excess) == 0 else out


@dataclass
class ExcessSeries:
    timestamps: np.ndarray
    p_excess: np.ndarray
    e_excess: np.ndarray
    c_excess: np.ndarray
    regime: np.ndarray
    p_acc_actual: Optional[np.ndarray] = None
    p_acc_hat: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.timestamps)

    def to_frame(self):
        df = pd.DataFrame({
            "timestamp": self.timestamps.astype("datetime64[s]"),
            "p_acc_actual": self.p_acc_actual,
            "p_acc_hat": self.p_acc_hat,
            "p_excess": self.p_excess,
            "e_excess": self.e_excess,
            "c_excess": self.c_excess,
            "regime": self.regime.astype(int),
        })
        return df

    @classmethod
    def from_frame(cls, df):
        ts = pd.to_datetime(df["timestamp"]).to_numpy().astype("datetime64[m]")
        return cls(
            timestamps=ts,
            p_excess=df["p_excess"].to_numpy(float),
            e_excess=df["e_excess"].to_numpy(float),
            c_excess=df["c_excess"].to_numpy(float),
            regime=df["regime"].to_numpy(int),
            p_acc_actual=df["p_acc_actual"].to_numpy(float) if "p_acc_actual" in df else None,
            p_acc_hat=df["p_acc_hat"].to_numpy(float) if "p_acc_hat" in df else None,
        )


def compute_excess(dataset, model, tariff, features=None):
    """Interval excess series for a cleaned dataset under a trained surrogate."""
    fm = features if features is not None else model.features(dataset)
    p_hat = model.predict(fm.X)
    p_ex = excess_power(dataset.p_acc, p_hat)
    e_ex = excess_energy(p_ex)
    c_ex = excess_cost(e_ex, tariff, dataset.timestamps)
    return ExcessSeries(
        timestamps=np.asarray(dataset.timestamps),
        p_excess=p_ex,
        e_excess=e_ex,
        c_excess=c_ex,
        regime=fm.column("regime").astype(int),
        p_acc_actual=np.asarray(dataset.p_acc, dtype=float),
        p_acc_hat=p_hat,
    )


def demand_charge(series, rate):
    """Per-month ``rate * peak p_excess`` and the total; returns (DataFrame, total)."""
    months = series.timestamps.astype("datetime64[M]")
    df = pd.DataFrame({"month": months.astype("datetime64[s]"), "p_excess": series.p_excess})
    peaks = df.groupby("month", sort=True)["p_excess"].max()
    out = pd.DataFrame({"month": peaks.index.strftime("%Y-%m"), "peak_p_excess": peaks.to_numpy()})
    out["demand_charge"] = float(rate) * out["peak_p_excess"]
    return out, float(out["demand_charge"].sum())


def aggregate_views(series):
    """Daily, monthly, hour-by-month, per-regime and per-weekday views.

    ``hour_month`` holds the mean e_excess per interval (24 rows, 12 month
    columns, NaN where no interval falls); ``hour_month_count`` the matching
    interval counts.
    """
    ts = series.timestamps
    hour, month, weekday = calendar_arrays(ts)
    df = pd.DataFrame({
        "day": ts.astype("datetime64[D]").astype("datetime64[s]"),
        "month": ts.astype("datetime64[M]").astype("datetime64[s]"),
        "hour": hour,
        "month_of_year": month,
        "weekday": weekday,
        "regime": series.regime.astype(int),
        "e_excess": series.e_excess,
        "c_excess": series.c_excess,
        "p_excess": series.p_excess,
    })
    daily = df.groupby("day", sort=True)[["e_excess", "c_excess"]].sum().reset_index()
    daily["day"] = daily["day"].dt.strftime("%Y-%m-%d")
    monthly = df.groupby("month", sort=True)[["e_excess", "c_excess"]].sum().reset_index()
    monthly["month"] = monthly["month"].dt.strftime("%Y-%m")

    grid = df.groupby(["hour", "month_of_year"])["e_excess"].agg(["mean", "count"])
    hour_month = grid["mean"].unstack().reindex(index=range(24), columns=range(1, 13))
    hour_month_count = grid["count"].unstack().reindex(index=range(24), columns=range(1, 13)).fillna(0).astype(int)
    hour_month.index.name = "hour"
    hour_month_count.index.name = "hour"

    regime = df.groupby("regime", sort=True).agg(
        e_excess=("e_excess", "sum"),
        c_excess=("c_excess", "sum"),
        intervals=("e_excess", "size"),
        mean_p_excess=("p_excess", "mean"),
        mean_e_excess=("e_excess", "mean"),
    ).reset_index()
    weekday_view = df.groupby("weekday", sort=True)[["e_excess", "c_excess"]].sum().reset_index()
    return {
        "daily": daily,
        "monthly": monthly,
        "hour_month": hour_month,
        "hour_month_count": hour_month_count,
        "regime": regime,
        "weekday": weekday_view,
    }


def summary(series, tariff=None):
    out = {
        "intervals": int(len(series)),
        "total_e_excess_mwh": float(np.sum(series.e_excess)),
        "total_c_excess_usd": float(np.sum(series.c_excess)),
        "peak_p_excess_mw": float(np.max(series.p_excess)) if len(series) else 0.0,
        "intervals_with_excess": int(np.sum(series.p_excess > 0)),
    }
    if tariff is not None and tariff.demand_rate is not None:
        _, total = demand_charge(series, tariff.demand_rate)
        out["demand_charge_usd"] = total
    return out
