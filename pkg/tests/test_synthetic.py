import numpy as np
import pytest

from coolopt.errors import InvalidConfig
from coolopt.excess import DT_HOURS
from coolopt.features import C_WATER
from coolopt.synthetic import (
    Episode,
    PlantLaw,
    ScenarioConfig,
    generate_scenario,
    injected_energy,
    oracle_accessory_power,
    oracle_excess,
)
from coolopt.telemetry import clean_and_order

ZERO_NOISE = PlantLaw(sigma=0.0)


def test_zero_noise_equals_oracle():
    cfg = ScenarioConfig(duration_days=7, law=ZERO_NOISE)
    ds, side = generate_scenario(cfg)
    assert len(ds) == 7 * 144
    assert np.array_equal(ds.p_acc, side["p_acc_clean"].to_numpy())
    heat = (C_WATER * ds.q * (ds.t_ret - ds.t_sup[:, None])).sum(axis=1)
    np.testing.assert_allclose(ds.p_acc, oracle_accessory_power(ZERO_NOISE, ds.q.sum(axis=1), heat, ds.t_sup), rtol=1e-12)


def test_episode_marks_36_intervals():
    cfg = ScenarioConfig(duration_days=3, episodes=(Episode("2023-01-02T03:00", 6.0, 1.2),))
    _, side = generate_scenario(cfg)
    assert int(side["episode"].sum()) == 36
    assert side.loc[side["episode"], "timestamp"].iloc[0] == np.datetime64("2023-01-02T03:00")


def test_determinism():
    cfg = ScenarioConfig(duration_days=5)
    a, sa = generate_scenario(cfg)
    b, sb = generate_scenario(cfg)
    for name in ("p_it", "t_sup", "t_ret", "q", "p_acc"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert sa.equals(sb)


def test_oracle_law_examples():
    law = PlantLaw(k_p=1e-9, b=0.4, k_h=0.0, k_t=0.0)
    assert oracle_accessory_power(law, 0.0, 0.0, law.t_ref) == 0.4
    pump = lambda q: oracle_accessory_power(law, q, 0.0, law.t_ref) - law.b
    assert pump(800.0) == pytest.approx(8 * pump(400.0), rel=1e-12)
    law = PlantLaw()
    a = oracle_accessory_power(law, 700.0, 11.0, 28.0)
    b = oracle_accessory_power(law, 700.0, 11.0, 29.0)
    assert a - b == pytest.approx(law.k_t, abs=1e-12)
    assert oracle_accessory_power(PlantLaw(b=0.4, k_t=10.0), 0.0, 0.0, 40.0) == pytest.approx(0.02)


def test_oracle_monotone(rng):
    law = PlantLaw()
    q = rng.uniform(300, 1500, 2000)
    h = rng.uniform(5, 30, 2000)
    t = rng.uniform(24, 33, 2000)
    base = oracle_accessory_power(law, q, h, t)
    assert np.all(oracle_accessory_power(law, q * 1.01, h, t) >= base)
    assert np.all(oracle_accessory_power(law, q, h + 0.5, t) >= base)
    assert np.all(oracle_accessory_power(law, q, h, t + 0.5) <= base)


def test_oracle_excess_and_closed_form():
    ep = Episode("2023-01-03T00:00", 12.0, 1.2)
    cfg = ScenarioConfig(duration_days=6, episodes=(ep,))
    ds, side = generate_scenario(cfg)
    true = oracle_excess(ds, side, cfg.law)
    inside = side["episode"].to_numpy()
    assert np.all(true[~inside] == 0) and np.all(true[inside] > 0)
    q_tot = ds.q.sum(axis=1)
    np.testing.assert_allclose(true[inside], cfg.law.k_p * (1.2 ** 3 - 1) * q_tot[inside] ** 3, rtol=1e-9)
    assert np.sum(true) * DT_HOURS == pytest.approx(injected_energy(cfg), abs=1e-9)
    assert np.sum(side["true_excess"]) * DT_HOURS == pytest.approx(injected_energy(cfg), abs=1e-9)
    other, side2 = generate_scenario(ScenarioConfig(duration_days=6, episodes=(ep,), seed=8))
    assert np.all(oracle_excess(other, side2, cfg.law)[~side2["episode"].to_numpy()] == 0)


def test_generated_data_passes_telemetry(small_scenario):
    _, ds, _ = small_scenario
    again = clean_and_order(ds.records)
    assert len(again) == len(ds) and again.removed == [] and again.gaps == []
    assert 0.4 <= ds.p_acc.min() and ds.p_acc.max() <= 0.95
    lift = ds.t_ret - ds.t_sup[:, None]
    # well clear of the 0.5 K lift floor
    assert 1.0 <= lift.min() and lift.max() <= 8.0


def test_invalid_configs():
    with pytest.raises(InvalidConfig):
        Episode("2023-01-01T00:00", 6.0, 0.9)
    with pytest.raises(InvalidConfig):
        ScenarioConfig(duration_days=0)
    with pytest.raises(InvalidConfig):
        ScenarioConfig(loop_heat_shares=(0.5, 0.5, 0.5))
    with pytest.raises(InvalidConfig):
        PlantLaw(sigma=-1.0)
