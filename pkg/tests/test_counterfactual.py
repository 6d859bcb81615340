import math

import numpy as np
import pandas as pd
import pytest

from coolopt.counterfactual import (
    LEDGER_COLUMNS,
    RAILS,
    Action,
    ActionGrid,
    ActionOutcome,
    CounterfactualConfig,
    FactualState,
    GuardrailConfig,
    SavingsLedger,
    counterfactual_state,
    enumerate_actions,
    evaluate_interval,
    guardrail_check,
    run_counterfactual,
    select_action,
    step_saving,
)
from coolopt.errors import InvalidConfig
from coolopt.excess import DT_HOURS, TariffSchedule

FLAT = TariffSchedule(flat_price=0.06)
NULL_GRID = ActionGrid(d_tsup=(0.0,), s_dom=(1.0,), s_non=(1.0,))
SMALL_GRID = ActionGrid(d_tsup=(0.0, 0.4), s_dom=(1.0, 0.96, 0.92), s_non=(1.0, 0.98))


@pytest.fixture(scope="module")
def ledger(small_scenario, small_model, small_features):
    return run_counterfactual(small_scenario[1], small_model, FLAT, features=small_features)


def outcome(action, saving=0.0, feasible=True, **kw):
    base = dict(action=action, t_sup_cf=28.0, q_cf=(300.0, 200.0, 100.0), delta_t_cf=(4.0, 4.0, 4.0),
                q_tot_cf=600.0, q_tot_heat_cf=10.0, mean_delta_t_cf=4.0, p_acc_cf=0.6, pue_cf=1.05,
                regime_cf=1, dominant_loop=0)
    base.update(kw)
    return ActionOutcome(**base, feasible=feasible, saving=saving,
                         guardrail_failures=frozenset() if feasible else frozenset({"cooling_preserved"}))


def test_enumeration():
    acts = enumerate_actions()
    assert len(acts) == 324
    assert acts[0] == Action(0.0, 1.0, 1.0) and acts[0].is_null()
    assert all(min(a.s_dom, a.s_non) >= 0.90 for a in acts)
    keys = [(a.d_tsup, -a.s_dom, -a.s_non) for a in acts]
    assert keys == sorted(keys)
    assert sorted({a.d_tsup for a in acts}) == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.5]
    assert len(enumerate_actions(ActionGrid(independent_non=True))) == 9 * 6 * 36


def test_action_validation():
    with pytest.raises(InvalidConfig):
        Action(0.0, 0.89, 1.0)
    with pytest.raises(InvalidConfig):
        Action(-0.2, 1.0, 1.0)
    with pytest.raises(InvalidConfig):
        ActionGrid(d_tsup=(0.2, 0.4))
    assert Action(0.0, 0.96, 0.98).loop_scales(1) == (0.98, 0.96, 0.98)
    assert Action(0.0, 0.96, 0.98, 0.95).loop_scales(0) == (0.96, 0.98, 0.95)


def crafted_row(small_features, t_sup=31.8, q=(300.0, 200.0, 100.0)):
    fm = small_features
    x = fm.X[200].copy()
    t_ret = (t_sup + 4.0, t_sup + 3.5, t_sup + 3.0)
    heat = [0.004186 * qi * (tr - t_sup) for qi, tr in zip(q, t_ret)]
    for k in range(3):
        x[fm.schema.index(f"q_heat_{k + 1}")] = heat[k]
    x[fm.schema.index("q_tot_heat")] = sum(heat)
    return FactualState(np.datetime64("2023-01-02T10:00"), 12.0, t_sup, t_ret, q, 0.7, sum(heat), x)


def test_cap_and_flow_examples(small_model, small_features):
    row = crafted_row(small_features)
    cfg = GuardrailConfig(t_sup_max=32.0)
    o = counterfactual_state(row, Action(0.4, 0.96, 0.98), small_model, cfg)
    assert o.t_sup_cf == 32.0
    np.testing.assert_allclose(o.q_cf, [288.0, 196.0, 98.0])
    assert o.dominant_loop == 0
    assert o.delta_t_cf == pytest.approx((3.8, 3.3, 2.8))
    # heat falls to 2015.6 / 2200 of factual, below alpha
    assert guardrail_check(o, row, cfg) == (False, frozenset({"cooling_preserved"}))


def test_null_action_identity(small_model, small_scenario, small_features):
    ds = small_scenario[1]
    cfg = GuardrailConfig().resolve(small_model)
    for i in (10, 500, 2000):
        row = FactualState.from_dataset(ds, small_features, i)
        o = counterfactual_state(row, Action(0.0, 1.0, 1.0), small_model, cfg)
        assert o.p_acc_cf == small_model.predict(small_features.X[i:i + 1])[0]
        assert guardrail_check(o, row, cfg) == (True, frozenset())


def test_cooling_preserved_failure(small_features):
    row = crafted_row(small_features)
    o = outcome(Action(0.0, 0.9, 0.95), q_tot_heat_cf=0.95 * row.q_tot_heat, t_sup_cf=row.t_sup,
                q_cf=tuple(0.95 * v for v in row.q))
    assert guardrail_check(o, row, GuardrailConfig(t_sup_max=40.0)) == (False, frozenset({"cooling_preserved"}))
    bad = outcome(Action(0.0, 1.0, 1.0), q_cf=(250.0, 200.0, 100.0), t_sup_cf=45.0, p_acc_cf=-1.0,
                  q_tot_heat_cf=0.0, delta_t_cf=(0.1, 1.0, 1.0))
    ok, failures = guardrail_check(bad, row, GuardrailConfig(t_sup_max=40.0))
    assert not ok and failures == frozenset(RAILS)


@pytest.mark.parametrize("a,cf,s", [(0.70, 0.64, 0.06), (0.70, 0.75, 0.0), (0.70, 0.70, 0.0)])
def test_step_saving(a, cf, s):
    assert step_saving(a, cf) == pytest.approx(s, abs=1e-12)


def test_select_action_examples():
    null, a2, a4 = Action(0.0, 1.0, 1.0), Action(0.2, 1.0, 1.0), Action(0.4, 1.0, 1.0)
    chosen = select_action([outcome(null), outcome(a2, 0.3, feasible=False), outcome(a4, 0.2, feasible=False)])
    assert chosen.action == null and chosen.saving == 0.0 and chosen.feasible
    assert select_action([outcome(null), outcome(a2, 0.05), outcome(a4, 0.05)]).action == a2
    assert select_action([outcome(null), outcome(a2, 0.05 - 5e-10), outcome(a4, 0.05)]).action == a2
    assert select_action([outcome(null), outcome(a2, 0.04), outcome(a4, 0.05)]).action == a4
    with pytest.raises(InvalidConfig):
        select_action([outcome(a2)])


def test_ledger_invariants(ledger, small_model):
    assert ledger.breaches.sum() == 0
    assert np.all(ledger.saving >= 0)
    assert np.array_equal(ledger.e_save, ledger.saving * DT_HOURS)
    assert math.fsum(ledger.e_save) == pytest.approx(math.fsum(ledger.saving) / 6, rel=1e-15, abs=1e-15)
    assert np.all(np.diff(ledger.timestamps.astype(np.int64)) > 0)
    assert np.all(ledger.t_sup_cf <= small_model.t_sup_max + 1e-12)
    assert np.all((ledger.s_dom >= 0.9) & (ledger.s_non >= 0.9))
    assert np.all(ledger.n_feasible >= 1)
    assert ledger.saving.sum() > 0
    agg = ledger.aggregates()
    for key in ("month", "hour", "regime", "dominant_loop"):
        assert agg[key]["e_save_MWh"].sum() == pytest.approx(ledger.e_save.sum(), abs=1e-9)


def test_scalar_route_matches_batched(ledger, small_scenario, small_model, small_features):
    ds = small_scenario[1]
    actions = enumerate_actions()
    for i in np.random.default_rng(0).choice(len(ds), 12, replace=False):
        row = FactualState.from_dataset(ds, small_features, i)
        chosen, outcomes = evaluate_interval(row, small_model, actions=actions)
        idx = actions.index(chosen.action)
        assert idx == ledger.action_index[i]
        assert chosen.saving == ledger.saving[i]
        assert chosen.p_acc_cf == ledger.p_acc_cf[i]
        assert sum(o.feasible for o in outcomes) == ledger.n_feasible[i]


def test_chunking_does_not_change_ledger(ledger, small_scenario, small_model, small_features):
    other = run_counterfactual(small_scenario[1], small_model, FLAT, CounterfactualConfig(chunk_intervals=97),
                               features=small_features)
    assert other.to_frame().equals(ledger.to_frame())


def test_null_grid_and_superset(ledger, small_scenario, small_model, small_features):
    ds = small_scenario[1]
    null = run_counterfactual(ds, small_model, FLAT, CounterfactualConfig(grid=NULL_GRID), features=small_features)
    assert np.all(null.saving == 0) and np.all(null.action_index == 0) and null.breaches.sum() == 0
    sub = run_counterfactual(ds, small_model, FLAT, CounterfactualConfig(grid=SMALL_GRID), features=small_features)
    assert np.all(ledger.saving >= sub.saving - 1e-9)
    assert np.all(sub.saving >= null.saving)


def test_independent_mode(small_scenario, small_model, small_features):
    ds = small_scenario[1]
    grid = ActionGrid(d_tsup=(0.0,), s_dom=(1.0, 0.94), s_non=(1.0, 0.97), independent_non=True)
    shared = ActionGrid(d_tsup=(0.0,), s_dom=(1.0, 0.94), s_non=(1.0, 0.97))
    a = run_counterfactual(ds, small_model, FLAT, CounterfactualConfig(grid=grid), features=small_features)
    b = run_counterfactual(ds, small_model, FLAT, CounterfactualConfig(grid=shared), features=small_features)
    assert np.all(a.saving >= b.saving - 1e-9)
    assert a.breaches.sum() == 0


def test_ledger_frame_round_trip(ledger, tmp_path):
    df = ledger.to_frame()
    assert tuple(df.columns[: len(LEDGER_COLUMNS)]) == LEDGER_COLUMNS
    path = tmp_path / "ledger.csv"
    df.to_csv(path, index=False, float_format="%.17g")
    back = SavingsLedger.from_frame(pd.read_csv(path, float_precision="round_trip"))
    assert np.array_equal(back.saving, ledger.saving)
    assert np.array_equal(back.timestamps, ledger.timestamps)
    assert back.breach_counts() == ledger.breach_counts()
