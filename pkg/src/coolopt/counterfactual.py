"""Per-interval counterfactual search over supply-temperature and flow moves.

Each 10-minute interval is frozen: calendar and history features keep their
factual values, the physics features are recomputed for the moved state, and
the surrogate prices the result.  Five guardrails decide feasibility; the
best feasible saving per interval goes into the savings ledger.

Two routes compute the same thing.  ``counterfactual_state`` /
``guardrail_check`` / ``select_action`` work on one interval and one action
at a time; ``run_counterfactual`` evaluates whole blocks of intervals
against the full grid in one batched prediction.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .errors import InvalidConfig, LengthMismatch
from .excess import DT_HOURS, KWH_PER_MWH
from .features import physics_columns
from .surrogate import implied_pue
from .telemetry import N_LOOPS, calendar_arrays

log = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-9  # MW
FLOW_HARD_FLOOR = 0.90

# rail names in check order
RAILS = ("pue_physical", "cooling_preserved", "min_lift", "flow_floor", "t_sup_cap")

# feature columns rewritten for a counterfactual state
_PHYSICS_KEYS = ("q_tot", "q_tot_heat", "q_tot_cubed", "imbalance", "mean_delta_t",
                 "interact_pit_tsup", "interact_qtot_dt")


@dataclass(frozen=True)
class Action:
    d_tsup: float
    s_dom: float
    s_non: float
    s_non_b: Optional[float] = None  # second non-dominant loop when scaled independently

    def __post_init__(self):
        if not self.d_tsup >= 0:
            raise InvalidConfig(f"d_tsup must be >= 0, got {self.d_tsup}")
        for s in self.scales_non + (self.s_dom,):
            if not FLOW_HARD_FLOOR - 1e-12 <= s <= 1.0:
                raise InvalidConfig(f"flow scales must lie in [{FLOW_HARD_FLOOR}, 1], got {s}")

    @property
    def scales_non(self):
        return (self.s_non, self.s_non if self.s_non_b is None else self.s_non_b)

    def loop_scales(self, dominant):
        """Per-loop flow scales; non-dominant loops take s_non, s_non_b in index order."""
        out = [0.0] * N_LOOPS
        rest = iter(self.scales_non)
        for k in range(N_LOOPS):
            out[k] = self.s_dom if k == dominant else next(rest)
        return tuple(out)

    def is_null(self):
        return self.d_tsup == 0 and self.s_dom == 1 and all(s == 1 for s in self.scales_non)


@dataclass(frozen=True)
class ActionGrid:
    d_tsup: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.5)
    s_dom: tuple = (1.00, 0.98, 0.96, 0.94, 0.92, 0.90)
    s_non: tuple = (1.00, 0.99, 0.98, 0.97, 0.96, 0.95)
    independent_non: bool = False

    def __post_init__(self):
        for name in ("d_tsup", "s_dom", "s_non"):
            vals = tuple(float(v) for v in getattr(self, name))
            object.__setattr__(self, name, vals)
            if not vals:
                raise InvalidConfig(f"action grid {name} is empty")
            if len(set(vals)) != len(vals):
                raise InvalidConfig(f"action grid {name} has duplicates")
        if 0.0 not in self.d_tsup or 1.0 not in self.s_dom or 1.0 not in self.s_non:
            raise InvalidConfig("action grid must contain the null action")


@dataclass(frozen=True)
class GuardrailConfig:
    alpha: float = 0.97
    delta_t_min: float = 0.5  # K
    t_sup_max: Optional[float] = None  # degC; None -> model.t_sup_max
    flow_floor: float = 0.90

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise InvalidConfig("alpha must lie in (0, 1]")
        if not self.delta_t_min > 0:
            raise InvalidConfig("delta_t_min must be positive")
        if not 0 < self.flow_floor <= 1:
            raise InvalidConfig("flow_floor must lie in (0, 1]")

    def resolve(self, model):
        if self.t_sup_max is not None:
            return self
        return GuardrailConfig(self.alpha, self.delta_t_min, float(model.t_sup_max), self.flow_floor)


@dataclass(frozen=True)
class CounterfactualConfig:
    grid: ActionGrid = field(default_factory=ActionGrid)
    guardrails: GuardrailConfig = field(default_factory=GuardrailConfig)
    chunk_intervals: int = 512

    def __post_init__(self):
        if self.chunk_intervals < 1:
            raise InvalidConfig("chunk_intervals must be positive")


@dataclass
class FactualState:
    """One interval's factual operating point plus its surrogate feature row."""
    timestamp: np.datetime64
    p_it: float
    t_sup: float
    t_ret: tuple
    q: tuple
    p_acc: float
    q_tot_heat: float  # factual total loop heat, MW
    x: np.ndarray

    @classmethod
    def from_dataset(cls, dataset, features, i):
        return cls(
            timestamp=dataset.timestamps[i],
            p_it=float(dataset.p_it[i]),
            t_sup=float(dataset.t_sup[i]),
            t_ret=tuple(float(v) for v in dataset.t_ret[i]),
            q=tuple(float(v) for v in dataset.q[i]),
            p_acc=float(dataset.p_acc[i]),
            q_tot_heat=float(features.column("q_tot_heat")[i]),
            x=np.array(features.X[i], dtype=float),
        )


@dataclass
class ActionOutcome:
    action: Action
    t_sup_cf: float
    q_cf: tuple
    delta_t_cf: tuple
    q_tot_cf: float
    q_tot_heat_cf: float
    mean_delta_t_cf: float
    p_acc_cf: float
    pue_cf: float
    regime_cf: int
    dominant_loop: int
    feasible: bool = True
    guardrail_failures: frozenset = frozenset()
    saving: float = 0.0


def enumerate_actions(grid=None):
    """Actions in tie-break order: d_tsup ascending, then scales closest to 1."""
    grid = grid or ActionGrid()
    d_vals = sorted(grid.d_tsup)
    dom_vals = sorted(grid.s_dom, reverse=True)
    non_vals = sorted(grid.s_non, reverse=True)
    out = []
    for d in d_vals:
        for sd in dom_vals:
            for sn in non_vals:
                if grid.independent_non:
                    for sb in non_vals:
                        out.append(Action(d, sd, sn, sb))
                else:
                    out.append(Action(d, sd, sn))
    return out


def dominant_loop(q_heat):
    """Index of the loop carrying the most heat; ties go to the lowest index."""
    return np.argmax(np.asarray(q_heat, dtype=float), axis=-1)


def counterfactual_state(row, action, model, cfg):
    """Features and surrogate price of one interval under one action (no guardrails)."""
    cfg = cfg.resolve(model)
    fcfg = model.feature_config
    names = model.schema.names
    t_ret = np.asarray(row.t_ret, dtype=float)
    q = np.asarray(row.q, dtype=float)

    heat_factual = np.array([row.x[names.index(f"q_heat_{k + 1}")] for k in range(N_LOOPS)])
    dom = int(dominant_loop(heat_factual))
    t_sup_cf = min(row.t_sup + action.d_tsup, cfg.t_sup_max)
    q_cf = np.array(action.loop_scales(dom)) * q
    lift_cf = np.maximum(t_ret - t_sup_cf, cfg.delta_t_min)
    phys = physics_columns(row.p_it, t_sup_cf, t_ret, q_cf, delta_t=lift_cf, c_w=fcfg.c_w)
    regime_cf = int(model.regimes.assign(phys["q_tot"], t_sup_cf))

    x = np.array(row.x, dtype=float)
    x[names.index("t_sup")] = t_sup_cf
    for k in range(N_LOOPS):
        x[names.index(f"q_{k + 1}")] = q_cf[k]
        x[names.index(f"delta_t_{k + 1}")] = phys["delta_t"][k]
        x[names.index(f"q_heat_{k + 1}")] = phys["q_heat"][k]
    for key in _PHYSICS_KEYS:
        x[names.index(key)] = phys[key]
    x[names.index("regime")] = regime_cf

    p_cf = float(model.predict(x[None, :])[0])
    return ActionOutcome(
        action=action,
        t_sup_cf=float(t_sup_cf),
        q_cf=tuple(float(v) for v in q_cf),
        delta_t_cf=tuple(float(v) for v in lift_cf),
        q_tot_cf=float(phys["q_tot"]),
        q_tot_heat_cf=float(phys["q_tot_heat"]),
        mean_delta_t_cf=float(phys["mean_delta_t"]),
        p_acc_cf=p_cf,
        pue_cf=float(implied_pue(row.p_it, p_cf)),
        regime_cf=regime_cf,
        dominant_loop=dom,
    )


def guardrail_check(outcome, factual, cfg):
    """Return (feasible, failures) for the five guardrails."""
    q = np.asarray(factual.q, dtype=float)
    failures = set()
    pue_raw = (factual.p_it + outcome.p_acc_cf) / factual.p_it
    if not pue_raw >= 1.0:
        failures.add("pue_physical")
    if not outcome.q_tot_heat_cf >= cfg.alpha * factual.q_tot_heat:
        failures.add("cooling_preserved")
    if not all(dt >= cfg.delta_t_min for dt in outcome.delta_t_cf):
        failures.add("min_lift")
    if not all(qc >= cfg.flow_floor * qf for qc, qf in zip(outcome.q_cf, q)):
        failures.add("flow_floor")
    if cfg.t_sup_max is None or not outcome.t_sup_cf <= cfg.t_sup_max:
        failures.add("t_sup_cap")
    return not failures, frozenset(failures)


def step_saving(p_acc_actual, p_acc_cf):
    out = np.maximum(np.subtract(p_acc_actual, p_acc_cf), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def select_action(outcomes):
    """Best feasible outcome; near-ties go to the earliest in enumeration order.

    When nothing feasible saves more than zero the null action is returned
    with zero saving and no failures (holding the factual state breaks no rail).
    """
    best = max((o.saving for o in outcomes if o.feasible), default=0.0)
    if best > 0:
        for o in outcomes:
            if o.feasible and o.saving >= best - TIE_TOLERANCE:
                return o
    for o in outcomes:
        if o.action.is_null():
            return ActionOutcome(**{**o.__dict__, "feasible": True, "guardrail_failures": frozenset(), "saving": 0.0})
    raise InvalidConfig("outcome list does not include the null action")


def evaluate_interval(row, model, cfg=None, actions=None):
    """Scalar route: every action for one interval, then selection."""
    cfg = (cfg or GuardrailConfig()).resolve(model)
    actions = actions if actions is not None else enumerate_actions()
    outcomes = []
    for a in actions:
        o = counterfactual_state(row, a, model, cfg)
        o.feasible, o.guardrail_failures = guardrail_check(o, row, cfg)
        # holding the factual state is not a move and claims nothing
        o.saving = step_saving(row.p_acc, o.p_acc_cf) if o.feasible and not a.is_null() else 0.0
        outcomes.append(o)
    return select_action(outcomes), outcomes


LEDGER_COLUMNS = ("timestamp", "d_tsup", "s_dom", "s_non", "dominant_loop", "saving_MW",
                  "e_save_MWh", "c_save_usd", "regime", "regime_cf", "pue_cf")


@dataclass
class SavingsLedger:
    timestamps: np.ndarray
    action_index: np.ndarray
    d_tsup: np.ndarray
    s_dom: np.ndarray
    s_non: np.ndarray
    s_non_b: np.ndarray
    dominant_loop: np.ndarray
    saving: np.ndarray
    e_save: np.ndarray
    c_save: np.ndarray
    regime: np.ndarray
    regime_cf: np.ndarray
    pue_cf: np.ndarray
    p_acc_actual: np.ndarray
    p_acc_cf: np.ndarray
    t_sup_cf: np.ndarray
    q_tot_cf: np.ndarray
    mean_delta_t_cf: np.ndarray
    q_tot_heat_cf: np.ndarray
    n_feasible: np.ndarray
    breaches: np.ndarray  # rail failures of the chosen action, one column per rail

    def __len__(self):
        return len(self.timestamps)

    def breach_counts(self):
        return {name: int(self.breaches[:, k].sum()) for k, name in enumerate(RAILS)}

    def to_frame(self):
        df = pd.DataFrame({
            "timestamp": self.timestamps.astype("datetime64[s]"),
            "d_tsup": self.d_tsup,
            "s_dom": self.s_dom,
            "s_non": self.s_non,
            "dominant_loop": self.dominant_loop.astype(int),
            "saving_MW": self.saving,
            "e_save_MWh": self.e_save,
            "c_save_usd": self.c_save,
            "regime": self.regime.astype(int),
            "regime_cf": self.regime_cf.astype(int),
            "pue_cf": self.pue_cf,
            "s_non_b": self.s_non_b,
            "action_index": self.action_index.astype(int),
            "p_acc_actual": self.p_acc_actual,
            "p_acc_cf": self.p_acc_cf,
            "t_sup_cf": self.t_sup_cf,
            "q_tot_cf": self.q_tot_cf,
            "mean_delta_t_cf": self.mean_delta_t_cf,
            "q_tot_heat_cf": self.q_tot_heat_cf,
            "n_feasible": self.n_feasible.astype(int),
        })
        for k, name in enumerate(RAILS):
            df[f"breach_{name}"] = self.breaches[:, k].astype(int)
        return df

    @classmethod
    def from_frame(cls, df):
        missing = [c for c in LEDGER_COLUMNS if c not in df]
        if missing:
            raise LengthMismatch(f"ledger is missing columns {missing}")
        n = len(df)

        def col(name, default, dtype=float):
            return df[name].to_numpy(dtype) if name in df else np.full(n, default, dtype=dtype)

        breaches = np.column_stack([col(f"breach_{r}", 0, int) for r in RAILS]) if n else np.zeros((0, len(RAILS)), int)
        return cls(
            timestamps=pd.to_datetime(df["timestamp"]).to_numpy().astype("datetime64[m]"),
            action_index=col("action_index", -1, int),
            d_tsup=col("d_tsup", np.nan),
            s_dom=col("s_dom", np.nan),
            s_non=col("s_non", np.nan),
            s_non_b=col("s_non_b", np.nan),
            dominant_loop=col("dominant_loop", -1, int),
            saving=col("saving_MW", np.nan),
            e_save=col("e_save_MWh", np.nan),
            c_save=col("c_save_usd", np.nan),
            regime=col("regime", -1, int),
            regime_cf=col("regime_cf", -1, int),
            pue_cf=col("pue_cf", np.nan),
            p_acc_actual=col("p_acc_actual", np.nan),
            p_acc_cf=col("p_acc_cf", np.nan),
            t_sup_cf=col("t_sup_cf", np.nan),
            q_tot_cf=col("q_tot_cf", np.nan),
            mean_delta_t_cf=col("mean_delta_t_cf", np.nan),
            q_tot_heat_cf=col("q_tot_heat_cf", np.nan),
            n_feasible=col("n_feasible", -1, int),
            breaches=breaches,
        )

    def aggregates(self):
        """Savings by month, hour of day, factual regime and dominant loop."""
        hour, _, _ = calendar_arrays(self.timestamps)
        df = pd.DataFrame({
            "month": self.timestamps.astype("datetime64[M]").astype("datetime64[s]"),
            "hour": hour,
            "regime": self.regime.astype(int),
            "dominant_loop": self.dominant_loop.astype(int),
            "saving_MW": self.saving,
            "e_save_MWh": self.e_save,
            "c_save_usd": self.c_save,
            "acted": self.action_index > 0,
        })
        out = {}
        for key in ("month", "hour", "regime", "dominant_loop"):
            g = df.groupby(key, sort=True).agg(
                e_save_MWh=("e_save_MWh", "sum"),
                c_save_usd=("c_save_usd", "sum"),
                intervals=("e_save_MWh", "size"),
                actions=("acted", "sum"),
                mean_saving_MW=("saving_MW", "mean"),
            ).reset_index()
            if key == "month":
                g["month"] = g["month"].dt.strftime("%Y-%m")
            out[key] = g
        return out

    def summary(self):
        return {
            "intervals": int(len(self)),
            "total_saving_MW_steps": float(np.sum(self.saving)),
            "total_e_save_MWh": float(np.sum(self.e_save)),
            "total_c_save_usd": float(np.sum(self.c_save)),
            "intervals_with_action": int(np.sum(self.action_index > 0)),
            "max_d_tsup": float(np.max(self.d_tsup)) if len(self) else 0.0,
            **{f"breaches_{k}": v for k, v in self.breach_counts().items()},
        }


def _action_arrays(actions):
    d = np.array([a.d_tsup for a in actions])
    # (3 dominant choices, A actions, 3 loops)
    scales = np.array([[a.loop_scales(dom) for a in actions] for dom in range(N_LOOPS)])
    return d, scales


def _evaluate_block(model, cfg, X, p_it, t_sup, t_ret, q, p_acc, d_grid, scales):
    """Batched route for a block of m intervals against all A actions.

    Returns per-(interval, action) arrays plus the dominant loop per interval.
    """
    names = model.schema.names
    c_w = model.feature_config.c_w
    m, A = X.shape[0], d_grid.shape[0]

    # factual heat comes from the feature row so both routes round identically
    heat_f = X[:, [names.index(f"q_heat_{k + 1}") for k in range(N_LOOPS)]]
    heat_tot_f = X[:, names.index("q_tot_heat")]
    dom = dominant_loop(heat_f)
    t_sup_cf = np.minimum(t_sup[:, None] + d_grid[None, :], cfg.t_sup_max)
    s = scales[dom]  # (m, A, 3)
    q_cf = q[:, None, :] * s
    lift = np.maximum(t_ret[:, None, :] - t_sup_cf[:, :, None], cfg.delta_t_min)
    phys = physics_columns(p_it[:, None], t_sup_cf, None, q_cf, delta_t=lift, c_w=c_w)
    regime_cf = model.regimes.assign(phys["q_tot"], t_sup_cf)

    Xc = np.repeat(X[:, None, :], A, axis=1)
    Xc[:, :, names.index("t_sup")] = t_sup_cf
    for k in range(N_LOOPS):
        Xc[:, :, names.index(f"q_{k + 1}")] = q_cf[:, :, k]
        Xc[:, :, names.index(f"delta_t_{k + 1}")] = lift[:, :, k]
        Xc[:, :, names.index(f"q_heat_{k + 1}")] = phys["q_heat"][:, :, k]
    for key in _PHYSICS_KEYS:
        Xc[:, :, names.index(key)] = phys[key]
    Xc[:, :, names.index("regime")] = regime_cf
    p_cf = model.predict(Xc.reshape(m * A, -1)).reshape(m, A)

    fail = np.zeros((m, A, len(RAILS)), dtype=bool)
    fail[:, :, 0] = ~((p_it[:, None] + p_cf) / p_it[:, None] >= 1.0)
    fail[:, :, 1] = ~(phys["q_tot_heat"] >= cfg.alpha * heat_tot_f[:, None])
    fail[:, :, 2] = ~np.all(lift >= cfg.delta_t_min, axis=2)
    fail[:, :, 3] = ~np.all(q_cf >= cfg.flow_floor * q[:, None, :], axis=2)
    fail[:, :, 4] = ~(t_sup_cf <= cfg.t_sup_max)
    feasible = ~fail.any(axis=2)
    saving = np.where(feasible, np.maximum(p_acc[:, None] - p_cf, 0.0), 0.0)
    return {
        "dominant": dom,
        "t_sup_cf": t_sup_cf,
        "q_tot_cf": phys["q_tot"],
        "q_tot_heat_cf": phys["q_tot_heat"],
        "mean_delta_t_cf": phys["mean_delta_t"],
        "regime_cf": regime_cf,
        "p_acc_cf": p_cf,
        "fail": fail,
        "feasible": feasible,
        "saving": saving,
    }


def _select_batch(saving, feasible):
    """Chosen action index per row (0 = null fallback) following select_action."""
    best = np.max(np.where(feasible, saving, 0.0), axis=1)
    ok = feasible & (saving >= (best - TIE_TOLERANCE)[:, None])
    idx = np.argmax(ok, axis=1)
    return np.where(best > 0, idx, 0)


def run_counterfactual(dataset, model, tariff, cfg=None, features=None):
    """Savings ledger for every interval of a cleaned dataset."""
    cfg = cfg or CounterfactualConfig()
    rails = cfg.guardrails.resolve(model)
    actions = enumerate_actions(cfg.grid)
    if not actions[0].is_null():
        raise InvalidConfig("first enumerated action must be the null action")
    d_grid, scales = _action_arrays(actions)
    fm = features if features is not None else model.features(dataset)
    n = len(dataset)

    chosen = np.zeros(n, dtype=np.int64)
    cols = {k: np.zeros(n) for k in ("saving", "p_acc_cf", "t_sup_cf", "q_tot_cf", "mean_delta_t_cf", "q_tot_heat_cf")}
    dom = np.zeros(n, dtype=np.int64)
    regime_cf = np.zeros(n, dtype=np.int64)
    n_feasible = np.zeros(n, dtype=np.int64)
    breaches = np.zeros((n, len(RAILS)), dtype=bool)

    step = cfg.chunk_intervals
    for start in range(0, n, step):
        sl = slice(start, min(n, start + step))
        r = _evaluate_block(model, rails, fm.X[sl], dataset.p_it[sl], dataset.t_sup[sl], dataset.t_ret[sl],
                            dataset.q[sl], dataset.p_acc[sl], d_grid, scales)
        r["saving"][:, 0] = 0.0  # null action: no move, no saving
        idx = _select_batch(r["saving"], r["feasible"])
        rows = np.arange(idx.shape[0])
        chosen[sl] = idx
        dom[sl] = r["dominant"]
        regime_cf[sl] = r["regime_cf"][rows, idx]
        n_feasible[sl] = r["feasible"].sum(axis=1)
        for key in cols:
            cols[key][sl] = r[key][rows, idx]
        # a null fallback holds the factual state, which breaks no rail
        held = r["saving"][rows, idx] <= 0
        breaches[sl] = np.where(held[:, None], False, r["fail"][rows, idx])
        cols["saving"][sl] = np.where(held, 0.0, cols["saving"][sl])

    e_save = cols["saving"] * DT_HOURS
    c_save = e_save * KWH_PER_MWH * tariff.price(dataset.timestamps)
    chosen = np.where(cols["saving"] > 0, chosen, 0)
    led = SavingsLedger(
        timestamps=np.asarray(dataset.timestamps),
        action_index=chosen,
        d_tsup=np.array([actions[i].d_tsup for i in chosen]) if n else np.zeros(0),
        s_dom=np.array([actions[i].s_dom for i in chosen]) if n else np.zeros(0),
        s_non=np.array([actions[i].scales_non[0] for i in chosen]) if n else np.zeros(0),
        s_non_b=np.array([actions[i].scales_non[1] for i in chosen]) if n else np.zeros(0),
        dominant_loop=dom,
        saving=cols["saving"],
        e_save=e_save,
        c_save=c_save,
        regime=fm.column("regime").astype(np.int64),
        regime_cf=regime_cf,
        pue_cf=implied_pue(dataset.p_it, cols["p_acc_cf"]) if n else np.zeros(0),
        p_acc_actual=np.asarray(dataset.p_acc, dtype=float),
        p_acc_cf=cols["p_acc_cf"],
        t_sup_cf=cols["t_sup_cf"],
        q_tot_cf=cols["q_tot_cf"],
        mean_delta_t_cf=cols["mean_delta_t_cf"],
        q_tot_heat_cf=cols["q_tot_heat_cf"],
        n_feasible=n_feasible,
        breaches=breaches,
    )
    log.info("counterfactual: %d intervals x %d actions, %.3f MWh saved", n, len(actions), float(e_save.sum()))
    return led
