"""Reviewer pass over the savings ledger.

Materiality, in-distribution and hysteresis filters run in that order;
capping clips each interval's saving by the detected excess.  Ramp
indicators are reported, never filtered on.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .counterfactual import RAILS
from .errors import InvalidConfig, TimestampMismatch

# envelope feature -> ledger column
ENVELOPE_COLUMNS = {
    "t_sup": "t_sup_cf",
    "q_tot": "q_tot_cf",
    "mean_delta_t": "mean_delta_t_cf",
    "q_tot_heat": "q_tot_heat_cf",
}


@dataclass(frozen=True)
class ReviewConfig:
    s_min: float = 0.02  # MW
    mae_test: Optional[float] = None  # MW; None -> taken from the model
    hysteresis_idle_steps: int = 2
    ramp_tsup_limit: float = 0.5  # degC per step
    percentile_bounds: dict = field(default_factory=dict)  # feature -> (p1, p99)
    reject_out_of_distribution: bool = True

    def __post_init__(self):
        if not self.s_min > 0:
            raise InvalidConfig("s_min must be positive")
        if self.hysteresis_idle_steps < 0:
            raise InvalidConfig("hysteresis_idle_steps must be >= 0")
        if self.mae_test is not None and self.mae_test < 0:
            raise InvalidConfig("mae_test must be non-negative")

    @property
    def threshold(self):
        return max(self.s_min, 0.5 * (self.mae_test or 0.0))

    def with_model(self, model):
        """Fill mae_test and percentile bounds from a trained surrogate where unset."""
        return ReviewConfig(
            s_min=self.s_min,
            mae_test=model.mae_test if self.mae_test is None else self.mae_test,
            hysteresis_idle_steps=self.hysteresis_idle_steps,
            ramp_tsup_limit=self.ramp_tsup_limit,
            percentile_bounds=self.percentile_bounds or dict(model.train_percentiles),
            reject_out_of_distribution=self.reject_out_of_distribution,
        )


def materiality_filter(saving, cfg):
    return np.asarray(saving) >= cfg.threshold


def in_distribution_check(values, bounds):
    """Per-feature inclusive [p1, p99] flags and their conjunction.

    ``values`` maps envelope feature name to a scalar or array.
    """
    flags = {}
    for name, (lo, hi) in bounds.items():
        v = np.asarray(values[name], dtype=float)
        flags[name] = (v >= lo) & (v <= hi)
    overall = np.logical_and.reduce(list(flags.values())) if flags else True
    return flags, overall


def capped_capture(e_save, e_excess):
    out = np.minimum(e_save, e_excess)
    return float(out) if np.ndim(out) == 0 else out


def hysteresis_filter(accepted_so_far, index, idle_steps):
    """True when no accepted action lies in the ``idle_steps`` intervals before ``index``."""
    lo = max(0, index - idle_steps)
    return not any(accepted_so_far[lo:index])


def hysteresis_scan(candidates, idle_steps):
    """Greedy time-ordered scan; earlier acceptances block later candidates."""
    accepted = np.zeros(len(candidates), dtype=bool)
    last = -idle_steps - 1
    for i in np.flatnonzero(candidates):
        if i - last > idle_steps:
            accepted[i] = True
            last = i
    return accepted


def ramp_indicators(ledger, limit=0.5):
    d = np.diff(np.asarray(ledger.d_tsup, dtype=float))
    out = {"ramp_violations": int(np.sum(np.abs(d) > limit)), "ramp_tsup_limit": float(limit)}
    for name in ("s_dom", "s_non"):
        ds = np.abs(np.diff(np.asarray(getattr(ledger, name), dtype=float)))
        out[f"{name}_step_changes"] = int(np.sum(ds > 0))
        out[f"{name}_max_step"] = float(ds.max()) if ds.size else 0.0
        out[f"{name}_mean_step"] = float(ds.mean()) if ds.size else 0.0
    return out


@dataclass
class ReviewReport:
    timestamps: np.ndarray
    materiality: np.ndarray
    in_dist_flags: dict
    in_distribution: np.ndarray
    hysteresis: np.ndarray
    accepted: np.ndarray
    e_save_capped: np.ndarray
    c_save_capped: np.ndarray
    summary: dict
    log: pd.DataFrame

    def summary_frame(self):
        return pd.DataFrame({"key": list(self.summary), "value": list(self.summary.values())})


def _ratio(a, b):
    return None if b <= 0 else float(a / b)


def build_review(ledger, excess, cfg):
    n = len(ledger)
    if len(excess) != n or not np.array_equal(
            np.asarray(ledger.timestamps, dtype="datetime64[m]"), np.asarray(excess.timestamps, dtype="datetime64[m]")):
        raise TimestampMismatch("ledger and excess series are not aligned on timestamps")
    missing = [k for k in ENVELOPE_COLUMNS if k not in cfg.percentile_bounds]
    if missing:
        raise InvalidConfig(f"percentile bounds missing for {missing}")

    saving = np.asarray(ledger.saving, dtype=float)
    e_save = np.asarray(ledger.e_save, dtype=float)
    c_save = np.asarray(ledger.c_save, dtype=float)
    e_excess = np.asarray(excess.e_excess, dtype=float)

    material = materiality_filter(saving, cfg) if n else np.zeros(0, dtype=bool)
    values = {k: getattr(ledger, col) for k, col in ENVELOPE_COLUMNS.items()}
    bounds = {k: cfg.percentile_bounds[k] for k in ENVELOPE_COLUMNS}
    flags, in_dist = in_distribution_check(values, bounds)
    in_dist = np.broadcast_to(in_dist, (n,)).copy()
    candidates = material & in_dist if cfg.reject_out_of_distribution else material.copy()
    accepted = hysteresis_scan(candidates, cfg.hysteresis_idle_steps)
    # hysteresis flag: would the interval clear the idle window given acceptances so far
    hyst = np.ones(n, dtype=bool)
    acc_idx = np.flatnonzero(accepted)
    for i in acc_idx:
        hyst[i + 1:i + 1 + cfg.hysteresis_idle_steps] = False
    hyst[acc_idx] = True

    e_cap = capped_capture(e_save, e_excess) if n else np.zeros(0)
    with np.errstate(invalid="ignore", divide="ignore"):
        c_cap = np.where(e_save > 0, c_save * (e_cap / np.where(e_save > 0, e_save, 1.0)), 0.0)

    breaches = ledger.breach_counts()
    total_excess = float(np.sum(e_excess))
    raw_e, cap_e = float(np.sum(e_save)), float(np.sum(e_cap))
    rev_e, rev_cap_e = float(np.sum(e_save[accepted])), float(np.sum(e_cap[accepted]))
    summary = {
        "intervals": n,
        "materiality_threshold_MW": cfg.threshold,
        "step2_total_MWh": total_excess,
        "raw_total_MWh": raw_e,
        "raw_total_usd": float(np.sum(c_save)),
        "capped_total_MWh": cap_e,
        "capped_total_usd": float(np.sum(c_cap)),
        "reviewer_total_MWh": rev_e,
        "reviewer_total_usd": float(np.sum(c_save[accepted])),
        "reviewer_capped_total_MWh": rev_cap_e,
        "reviewer_capped_total_usd": float(np.sum(c_cap[accepted])),
        "raw_capture_rate": _ratio(raw_e, total_excess),
        "capped_capture_rate": _ratio(cap_e, total_excess),
        "reviewer_capture_rate": _ratio(rev_cap_e, total_excess),
        "accepted_actions": int(accepted.sum()),
        "action_frequency": _ratio(float(accepted.sum()), float(n)) or 0.0,
        "material_intervals": int(material.sum()),
        "in_distribution_intervals": int(in_dist.sum()),
        **{f"coverage_{k}_pct": (100.0 * float(np.mean(v)) if n else 0.0) for k, v in flags.items()},
        "coverage_all_pct": 100.0 * float(np.mean(in_dist)) if n else 0.0,
        **{f"breaches_{k}": v for k, v in breaches.items()},
        "breaches_total": int(sum(breaches.values())),
        **ramp_indicators(ledger, cfg.ramp_tsup_limit),
    }

    breach_rows = np.asarray(ledger.breaches, dtype=bool)
    status = np.array(["ok" if not row.any() else ";".join(r for r, b in zip(RAILS, row) if b) for row in breach_rows],
                      dtype=object) if n else np.zeros(0, dtype=object)
    log = pd.DataFrame({
        "timestamp": np.asarray(ledger.timestamps).astype("datetime64[s]"),
        "d_tsup": ledger.d_tsup,
        "s_dom": ledger.s_dom,
        "s_non": ledger.s_non,
        "saving_MW": saving,
        "e_save_MWh": e_save,
        "e_save_capped_MWh": e_cap,
        "c_save_usd": c_save,
        "materiality": material.astype(int),
        **{f"in_dist_{k}": v.astype(int) for k, v in flags.items()},
        "in_distribution": in_dist.astype(int),
        "hysteresis": hyst.astype(int),
        "accepted": accepted.astype(int),
        "guardrails": status,
    })
    return ReviewReport(
        timestamps=np.asarray(ledger.timestamps),
        materiality=material,
        in_dist_flags=flags,
        in_distribution=in_dist,
        hysteresis=hyst,
        accepted=accepted,
        e_save_capped=e_cap,
        c_save_capped=c_cap,
        summary=summary,
        log=log,
    )
