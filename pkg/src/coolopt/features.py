"""Physics-derived, calendar and history features for the accessory-power surrogate."""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import SchemaMismatch
from .telemetry import N_LOOPS, STEP_MINUTES, calendar_arrays

# rho * c_p of water, MW per (L/s * K)
C_WATER = 0.004186

HISTORY_SOURCES = ("p_it", "q_tot", "t_sup")
# history features of these sources are monotone-constrained when rolling
MONOTONE_ROLL_SOURCES = ("p_it", "q_tot")
MONOTONE_BASE = ("p_it", "q_tot", "q_tot_heat")


@dataclass(frozen=True)
class FeatureConfig:
    lags: tuple = (1, 3, 6)
    windows: tuple = (6, 36)
    low_load_threshold: float = 10.0
    c_w: float = C_WATER

    def __post_init__(self):
        object.__setattr__(self, "lags", tuple(int(k) for k in self.lags))
        object.__setattr__(self, "windows", tuple(int(w) for w in self.windows))
        if 1 not in self.lags:
            raise ValueError("lags must include 1 (trainability is keyed on lag 1)")
        if any(k < 1 for k in self.lags) or any(w < 1 for w in self.windows):
            raise ValueError("lags and windows are positive step counts")
        if not self.c_w > 0:
            raise ValueError("c_w must be positive")


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple
    monotone: tuple
    units: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if len(self.names) != len(self.monotone):
            raise SchemaMismatch("names and monotone directions differ in length")
        if len(set(self.names)) != len(self.names):
            raise SchemaMismatch("duplicate feature names")
        if any(m not in (0, 1) for m in self.monotone):
            raise SchemaMismatch("monotone directions must be 0 or +1")

    def __len__(self):
        return len(self.names)

    def index(self, name):
        return self.names.index(name)

    @property
    def constrained(self):
        return [i for i, m in enumerate(self.monotone) if m == 1]

    def to_dict(self):
        return {"names": list(self.names), "monotone": list(self.monotone), "units": dict(self.units)}

    @classmethod
    def from_dict(cls, d):
        return cls(names=tuple(d["names"]), monotone=tuple(int(m) for m in d["monotone"]), units=dict(d.get("units", {})))


def build_schema(config=None):
    config = config or FeatureConfig()
    names, units = [], {}

    def add(name, unit):
        names.append(name)
        units[name] = unit

    add("p_it", "MW")
    add("t_sup", "degC")
    for k in range(1, N_LOOPS + 1):
        add(f"t_ret_{k}", "degC")
    for k in range(1, N_LOOPS + 1):
        add(f"q_{k}", "L/s")
    for k in range(1, N_LOOPS + 1):
        add(f"delta_t_{k}", "K")
    for k in range(1, N_LOOPS + 1):
        add(f"q_heat_{k}", "MW")
    add("q_tot", "L/s")
    add("q_tot_heat", "MW")
    add("q_tot_cubed", "(L/s)^3")
    add("imbalance", "1")
    add("mean_delta_t", "K")
    add("interact_pit_tsup", "MW*degC")
    add("interact_qtot_dt", "L/s*K")
    add("hour", "h")
    add("month", "1")
    add("low_load_flag", "1")
    hist_units = {"p_it": "MW", "q_tot": "L/s", "t_sup": "degC"}
    for src in HISTORY_SOURCES:
        for k in config.lags:
            add(f"{src}_lag{k}", hist_units[src])
    for src in HISTORY_SOURCES:
        for w in config.windows:
            add(f"{src}_roll{w}", hist_units[src])
    add("regime", "1")

    monotone_set = set(MONOTONE_BASE) | {f"{s}_roll{w}" for s in MONOTONE_ROLL_SOURCES for w in config.windows}
    monotone = tuple(1 if n in monotone_set else 0 for n in names)
    return FeatureSchema(names=tuple(names), monotone=monotone, units=units)


def loop_lift(t_ret, t_sup):
    return np.subtract(t_ret, t_sup)


def loop_heat(q, delta_t, c_w=C_WATER):
    return c_w * np.multiply(q, delta_t)


def imbalance_index(q_heat):
    """Share of (non-negative) heat carried by the dominant loop; 0 if no heat."""
    h = np.maximum(np.asarray(q_heat, dtype=float), 0.0)
    total = h.sum(axis=-1)
    top = h.max(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, top / np.where(total > 0, total, 1.0), 0.0)
    return out if out.ndim else float(out)


def physics_columns(p_it, t_sup, t_ret, q, delta_t=None, c_w=C_WATER):
    """Physics-derived columns, broadcast over leading dimensions.

    ``t_ret`` and ``q`` carry the loop axis last.  ``delta_t`` overrides the
    lifts (used when lifts are floored for counterfactual states).
    """
    p_it = np.asarray(p_it, dtype=float)
    t_sup = np.asarray(t_sup, dtype=float)
    q = np.asarray(q, dtype=float)
    if delta_t is None:
        delta_t = loop_lift(t_ret, t_sup[..., None])
    q_heat = loop_heat(q, delta_t, c_w)
    # explicit left-to-right sums keep the additivity exact
    q_tot = q[..., 0] + q[..., 1] + q[..., 2]
    q_tot_heat = q_heat[..., 0] + q_heat[..., 1] + q_heat[..., 2]
    mean_dt = (delta_t[..., 0] + delta_t[..., 1] + delta_t[..., 2]) / 3.0
    return {
        "delta_t": delta_t,
        "q_heat": q_heat,
        "q_tot": q_tot,
        "q_tot_heat": q_tot_heat,
        "q_tot_cubed": q_tot ** 3,
        "imbalance": imbalance_index(q_heat),
        "mean_delta_t": mean_dt,
        "interact_pit_tsup": p_it * t_sup,
        "interact_qtot_dt": q_tot * mean_dt,
    }


def _grid_positions(timestamps, n):
    if timestamps is None:
        return np.arange(n, dtype=np.int64)
    ts = np.asarray(timestamps, dtype="datetime64[m]").astype(np.int64)
    return (ts - ts[0]) // STEP_MINUTES


def history_features(series, lags=(1,), windows=(), timestamps=None):
    """Lagged values and trailing rolling means on the 10-minute grid.

    Lag ``k`` at row t is the value at t - k steps, NaN when that slot is
    absent.  The rolling mean over ``w`` steps averages the values present in
    (t - w, t].  Without ``timestamps`` the series is taken as gap-free.
    Returns a dict keyed ``lag{k}`` / ``roll{w}``.
    """
    values = np.asarray(series, dtype=float)
    n = len(values)
    out = {}
    if n == 0:
        for k in lags:
            out[f"lag{k}"] = np.empty(0)
        for w in windows:
            out[f"roll{w}"] = np.empty(0)
        return out
    pos = _grid_positions(timestamps, n)
    span = int(pos[-1]) + 1
    grid = np.full(span, np.nan)
    grid[pos] = values
    for k in lags:
        src = pos - k
        lagged = np.full(n, np.nan)
        ok = src >= 0
        lagged[ok] = grid[src[ok]]
        out[f"lag{k}"] = lagged
    for w in windows:
        padded = np.concatenate([np.full(w - 1, np.nan), grid])
        win = sliding_window_view(padded, w)[pos]
        present = ~np.isnan(win)
        sums = np.where(present, win, 0.0).sum(axis=1)
        out[f"roll{w}"] = sums / present.sum(axis=1)
    return out


@dataclass
class FeatureMatrix:
    X: np.ndarray
    schema: FeatureSchema
    trainable: np.ndarray
    timestamps: np.ndarray

    def __len__(self):
        return self.X.shape[0]

    def column(self, name):
        return self.X[:, self.schema.index(name)]

    def to_frame(self):
        import pandas as pd

        df = pd.DataFrame(self.X, columns=list(self.schema.names))
        df.insert(0, "timestamp", self.timestamps.astype("datetime64[s]"))
        df["trainable"] = self.trainable
        return df


def build_feature_matrix(dataset, schema=None, config=None, regimes=None):
    """One feature row per record, columns in schema order.

    The ``regime`` column is NaN until a fitted regime model is supplied.
    Rows without a lag-1 value are flagged not trainable.
    """
    config = config or FeatureConfig()
    expected = build_schema(config)
    schema = schema or expected
    if schema.names != expected.names or schema.monotone != expected.monotone:
        raise SchemaMismatch("feature schema does not match the feature configuration")

    n = len(dataset)
    phys = physics_columns(dataset.p_it, dataset.t_sup, dataset.t_ret, dataset.q, c_w=config.c_w)
    hour, month, _ = calendar_arrays(dataset.timestamps)
    cols = {
        "p_it": dataset.p_it,
        "t_sup": dataset.t_sup,
        "hour": hour.astype(float),
        "month": month.astype(float),
        "low_load_flag": (dataset.p_it < config.low_load_threshold).astype(float),
    }
    for k in range(N_LOOPS):
        cols[f"t_ret_{k + 1}"] = dataset.t_ret[:, k]
        cols[f"q_{k + 1}"] = dataset.q[:, k]
        cols[f"delta_t_{k + 1}"] = phys["delta_t"][:, k]
        cols[f"q_heat_{k + 1}"] = phys["q_heat"][:, k]
    for key in ("q_tot", "q_tot_heat", "q_tot_cubed", "imbalance", "mean_delta_t",
                "interact_pit_tsup", "interact_qtot_dt"):
        cols[key] = phys[key]
    sources = {"p_it": dataset.p_it, "q_tot": phys["q_tot"], "t_sup": dataset.t_sup}
    for src, series in sources.items():
        hist = history_features(series, config.lags, config.windows, dataset.timestamps)
        for k in config.lags:
            cols[f"{src}_lag{k}"] = hist[f"lag{k}"]
        for w in config.windows:
            cols[f"{src}_roll{w}"] = hist[f"roll{w}"]
    if regimes is None:
        cols["regime"] = np.full(n, np.nan)
    else:
        cols["regime"] = regimes.assign(phys["q_tot"], dataset.t_sup).astype(float)

    X = np.empty((n, len(schema)), dtype=float)
    for j, name in enumerate(schema.names):
        X[:, j] = cols[name]
    trainable = ~np.isnan(cols["p_it_lag1"])
    return FeatureMatrix(X=X, schema=schema, trainable=trainable, timestamps=np.asarray(dataset.timestamps))
