"""Synthetic liquid-cooled plant with a known accessory-power law.

The generated telemetry uses the same schema as the real workbook.  Load,
flows and supply temperature follow a simple controller; return
temperatures come from inverting the water heat model.  Inefficiency
episodes over-pump the plant: the pumps move ``multiplier`` times the
delivered flow (the surplus recirculates through a bypass), so accessory
power rises while the metered subloop flows stay at their controller value.
"""

from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np
import pandas as pd

from .errors import InvalidConfig
from .excess import DT_HOURS
from .features import C_WATER
from .telemetry import N_LOOPS, CleanDataset


@dataclass(frozen=True)
class PlantLaw:
    k_p: float = 1.8e-10  # MW per (L/s)^3 of total pumped flow
    b: float = 0.45  # MW
    k_h: float = 0.008  # MW per MW of loop heat
    k_t: float = 0.02  # MW per degC of supply temperature above t_ref
    t_ref: float = 25.0
    sigma: float = 0.01  # MW

    def __post_init__(self):
        for name in ("k_p", "b", "k_h", "k_t", "sigma"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"PlantLaw.{name} must be non-negative")


@dataclass(frozen=True)
class Episode:
    start: str  # ISO timestamp
    hours: float
    multiplier: float

    def __post_init__(self):
        if self.multiplier < 1:
            raise InvalidConfig("episode multipliers must be >= 1")
        if self.hours <= 0:
            raise InvalidConfig("episode duration must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    start: str = "2023-01-01T00:00"
    duration_days: float = 90
    seed: int = 7
    law: PlantLaw = field(default_factory=PlantLaw)
    # IT load profile, MW
    p_it_mean: float = 12.0
    p_it_min: float = 8.0
    p_it_max: float = 29.0
    diurnal_amplitude: float = 1.5
    weekly_dip: float = 1.0
    load_noise: float = 0.4
    load_persistence: float = 0.97
    burst_rate_per_day: float = 0.3
    burst_height: float = 8.0
    burst_hours: float = 6.0
    maintenance: tuple = ()  # ((start, hours), ...) at p_it_min
    # controller
    heat_fraction: float = 0.95
    loop_heat_shares: tuple = (0.5, 0.3, 0.2)
    loop_flow_shares: tuple = (0.45, 0.30, 0.25)
    flow_base: float = 450.0  # L/s
    flow_per_mw: float = 25.0  # L/s per MW of IT load
    flow_noise: float = 0.01  # relative
    t_sup_base: float = 28.0
    t_sup_seasonal: float = 1.0
    t_sup_noise: float = 0.15
    episodes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple(e if isinstance(e, Episode) else Episode(**e) for e in self.episodes))
        object.__setattr__(self, "maintenance", tuple(tuple(m) for m in self.maintenance))
        if isinstance(self.law, dict):
            object.__setattr__(self, "law", PlantLaw(**self.law))
        if self.duration_days <= 0:
            raise InvalidConfig("duration_days must be positive")
        if not 0 < self.p_it_min < self.p_it_max:
            raise InvalidConfig("need 0 < p_it_min < p_it_max")
        for shares in (self.loop_heat_shares, self.loop_flow_shares):
            if len(shares) != N_LOOPS or min(shares) <= 0 or abs(sum(shares) - 1) > 1e-9:
                raise InvalidConfig("loop shares must be three positive fractions summing to 1")
        if not 0 < self.heat_fraction <= 1:
            raise InvalidConfig("heat_fraction must lie in (0, 1]")
        if self.flow_base < 0 or self.flow_per_mw < 0:
            raise InvalidConfig("flow policy coefficients must be non-negative")


def oracle_accessory_power(law, q_tot, q_tot_heat, t_sup, p_it=None):
    """Noise-free accessory power (MW).

    ``p_it`` acts only through the heat it produces and is accepted for
    signature symmetry.
    """
    raw = law.b + law.k_p * np.power(q_tot, 3) + law.k_h * np.asarray(q_tot_heat) \
        - law.k_t * (np.asarray(t_sup) - law.t_ref)
    out = np.maximum(raw, 0.05 * law.b)
    return float(out) if np.ndim(out) == 0 else out


def _grid(cfg):
    n = int(round(cfg.duration_days * 24 * 6))
    start = np.datetime64(datetime.fromisoformat(cfg.start), "m")
    return start + np.arange(n) * np.timedelta64(10, "m")


def _window_mask(ts, start, hours):
    t0 = np.datetime64(datetime.fromisoformat(start), "m")
    t1 = t0 + np.timedelta64(int(round(hours * 60)), "m")
    return (ts >= t0) & (ts < t1)


def episode_multipliers(cfg, ts=None):
    ts = _grid(cfg) if ts is None else ts
    mult = np.ones(len(ts))
    for ep in cfg.episodes:
        m = _window_mask(ts, ep.start, ep.hours)
        mult[m] = np.maximum(mult[m], ep.multiplier)
    return mult


def load_profile(cfg, rng):
    """IT load and supply-temperature setpoints on the scenario grid."""
    ts = _grid(cfg)
    n = len(ts)
    minutes = (ts - ts.astype("datetime64[D]")).astype(np.int64)
    hour = minutes / 60.0
    days = ts.astype("datetime64[D]").astype(np.int64)
    weekday = (days + 3) % 7
    day_of_year = (days - ts[0].astype("datetime64[Y]").astype("datetime64[D]").astype(np.int64)) % 365

    shocks = rng.normal(0.0, cfg.load_noise, n)
    ar = np.empty(n)
    acc = 0.0
    phi = cfg.load_persistence
    scale = np.sqrt(1 - phi ** 2)
    for i in range(n):
        acc = phi * acc + scale * shocks[i]
        ar[i] = acc

    p_it = (cfg.p_it_mean
            + cfg.diurnal_amplitude * np.sin(2 * np.pi * (hour - 9.0) / 24.0)
            - cfg.weekly_dip * (weekday >= 5)
            + 3.0 * ar)
    n_days = int(np.ceil(cfg.duration_days))
    n_bursts = rng.poisson(cfg.burst_rate_per_day * n_days)
    burst_len = int(round(cfg.burst_hours * 6))
    for start in rng.integers(0, n, n_bursts):
        height = cfg.burst_height * rng.uniform(0.5, 1.5)
        ramp = np.minimum(1.0, np.arange(min(burst_len, n - start)) / 6.0)
        p_it[start:start + len(ramp)] += height * ramp
    for start, hours in cfg.maintenance:
        p_it[_window_mask(ts, start, hours)] = cfg.p_it_min
    p_it = np.clip(p_it, cfg.p_it_min, cfg.p_it_max)

    t_sup = (cfg.t_sup_base
             + cfg.t_sup_seasonal * np.sin(2 * np.pi * (day_of_year - 100) / 365.0)
             + rng.normal(0.0, cfg.t_sup_noise, n))
    flow_jitter = 1.0 + rng.normal(0.0, cfg.flow_noise, (n, N_LOOPS))
    return ts, p_it, t_sup, flow_jitter


def generate_scenario(cfg=None):
    """Return ``(dataset, sidecar)`` for a scenario.

    The sidecar frame carries the noise-free accessory power, the nominal
    (episode-free) power, the true excess and the episode mask per interval.
    """
    cfg = cfg or ScenarioConfig()
    law = cfg.law
    rng = np.random.default_rng(cfg.seed)
    ts, p_it, t_sup, jitter = load_profile(cfg, rng)
    n = len(ts)

    q_tot_nominal = cfg.flow_base + cfg.flow_per_mw * p_it
    q = q_tot_nominal[:, None] * np.asarray(cfg.loop_flow_shares)[None, :] * jitter
    heat = cfg.heat_fraction * p_it[:, None] * np.asarray(cfg.loop_heat_shares)[None, :]
    delta_t = heat / (C_WATER * q)
    t_ret = t_sup[:, None] + delta_t
    q_tot = q[:, 0] + q[:, 1] + q[:, 2]
    q_heat = C_WATER * q * (t_ret - t_sup[:, None])
    q_tot_heat = q_heat[:, 0] + q_heat[:, 1] + q_heat[:, 2]

    mult = episode_multipliers(cfg, ts)
    p_nominal = oracle_accessory_power(law, q_tot, q_tot_heat, t_sup, p_it)
    p_clean = oracle_accessory_power(law, mult * q_tot, q_tot_heat, t_sup, p_it)
    p_acc = np.maximum(p_clean + rng.normal(0.0, law.sigma, n), 0.0)

    p_total = p_it + p_acc
    dataset = CleanDataset.from_arrays(
        timestamps=ts, p_it=p_it, t_sup=t_sup, t_ret=t_ret, q=q, p_acc=p_acc,
        p_total=p_total, pue=p_total / p_it, waste_heat=q_heat,
    )
    sidecar = pd.DataFrame({
        "timestamp": ts.astype("datetime64[s]"),
        "p_acc_clean": p_clean,
        "p_acc_nominal": p_nominal,
        "true_excess": np.maximum(p_clean - p_nominal, 0.0),
        "episode": mult > 1.0,
        "multiplier": mult,
    })
    return dataset, sidecar


def oracle_excess(dataset, sidecar, law):
    """True per-interval excess (MW): over-pumped minus nominal power, floored at 0."""
    mult = np.asarray(sidecar["multiplier"], dtype=float)
    q_tot = dataset.q.sum(axis=1)
    q_heat = C_WATER * dataset.q * (dataset.t_ret - dataset.t_sup[:, None])
    heat = q_heat.sum(axis=1)
    actual = oracle_accessory_power(law, mult * q_tot, heat, dataset.t_sup)
    nominal = oracle_accessory_power(law, q_tot, heat, dataset.t_sup)
    return np.maximum(actual - nominal, 0.0)


def injected_energy(cfg):
    """Closed-form injected excess energy (MWh): sum of k_p (m^3 - 1) q^3 dt.

    Valid while the output floor of the law is inactive, which holds for any
    scenario whose nominal power stays above ``0.05 * b``.
    """
    rng = np.random.default_rng(cfg.seed)
    ts, p_it, _, jitter = load_profile(cfg, rng)
    q_tot_nominal = cfg.flow_base + cfg.flow_per_mw * p_it
    q = q_tot_nominal[:, None] * np.asarray(cfg.loop_flow_shares)[None, :] * jitter
    q_tot = q.sum(axis=1)
    mult = episode_multipliers(cfg, ts)
    return float(np.sum(cfg.law.k_p * (mult ** 3 - 1.0) * q_tot ** 3) * DT_HOURS)


def write_sidecar_csv(sidecar, path):
    df = sidecar.copy()
    df["timestamp"] = pd.to_datetime(df["timestamp"]).dt.strftime("%Y-%m-%dT%H:%M")
    df["episode"] = df["episode"].astype(int)
    df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def default_episodes(cfg_start="2023-01-01T00:00", duration_days=90, count=3, hours=48.0, multiplier=1.3):
    """Evenly spaced episodes inside the scenario window (handy for tests and demos)."""
    t0 = datetime.fromisoformat(cfg_start)
    step = duration_days / (count + 1)
    return tuple(
        Episode(start=(t0 + timedelta(days=step * (k + 1))).strftime("%Y-%m-%dT%H:%M"), hours=hours, multiplier=multiplier)
        for k in range(count)
    )
