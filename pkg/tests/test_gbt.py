import json

import numpy as np
import pytest

from coolopt.errors import FeatureCountMismatch, NonFiniteTarget, TooFewSamples
from coolopt.gbt import BoostedEnsemble, TrainConfig, check_monotonicity, fit_ensemble, grow_tree, predict

from oracles import best_split_exhaustive, ensemble_output

FAST = TrainConfig(max_trees=300, early_stopping_rounds=20, learning_rate=0.1)


def linear_data(rng, n=1000, slope=2.0):
    X = rng.uniform(0, 1, (n, 2))
    y = slope * X[:, 0] + rng.normal(0, 0.01, n)
    return X, y


def test_constant_target():
    X = np.random.default_rng(0).normal(size=(200, 3))
    ens, report = fit_ensemble(X, np.full(200, 0.7), cfg=FAST)
    assert np.allclose(ens.predict(X), 0.7, atol=1e-9)
    assert predict(ens, X[0]) == pytest.approx(0.7, abs=1e-9)
    assert report["stop_reason"] == "no_split"


def test_monotone_linear(rng):
    X, y = linear_data(rng)
    ens, report = fit_ensemble(X, y, cfg=FAST, monotone=(1, 0))
    assert report["valid_rmse"][report["selected_trees"]] <= 0.05
    assert check_monotonicity(ens, probes=1000, seed=1) == 0


def test_decreasing_target_flattens(rng):
    X, y = linear_data(rng, slope=-2.0)
    ens, report = fit_ensemble(X, y, cfg=FAST, monotone=(1, 0))
    assert check_monotonicity(ens, probes=1000, seed=2) == 0
    y_val = y[-report["n_valid"]:]
    assert report["valid_rmse"][report["selected_trees"]] == pytest.approx(np.std(y_val), rel=0.15)
    grid = np.column_stack([np.linspace(0, 1, 50), np.full(50, 0.5)])
    assert np.ptp(ens.predict(grid)) < 1e-9


def test_monotone_subtree_bounds(rng):
    X, y = linear_data(rng)
    y = y + 0.3 * np.sin(12 * X[:, 0])
    ens, _ = fit_ensemble(X, y, cfg=FAST, monotone=(1, 0))
    for tree in ens.trees:
        for node in np.flatnonzero(tree.feature == 0):
            left = [tree.value[k] for k in tree.leaves_under(tree.left[node])]
            right = [tree.value[k] for k in tree.leaves_under(tree.right[node])]
            assert max(left) <= min(right) + 1e-12


def test_predict_matches_reference_walk(rng):
    X = rng.normal(size=(600, 4))
    y = X[:, 0] ** 2 + np.sin(X[:, 1]) + rng.normal(0, 0.05, 600)
    X[rng.random(X.shape) < 0.05] = np.nan
    ens, _ = fit_ensemble(X, y, cfg=TrainConfig(max_trees=40, early_stopping_rounds=40))
    probe = rng.normal(size=(300, 4))
    probe[rng.random(probe.shape) < 0.1] = np.nan
    fast = ens.predict(probe)
    slow = np.array([ensemble_output(ens, x) for x in probe])
    np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-12)


def test_missing_values_go_left():
    X = np.concatenate([np.zeros(100), np.ones(100)])[:, None]
    y = np.concatenate([np.zeros(100), np.ones(100)])
    tree = grow_tree(X, y - y.mean(), TrainConfig(max_leaves=2, min_samples_leaf=1))
    left = tree.value[tree.left[0]]
    ens = BoostedEnsemble(0.0, [tree], 1.0, (0,), 1)
    assert ens.predict(np.array([[np.nan]]))[0] == left


def test_empty_ensemble_base_score():
    ens = BoostedEnsemble(0.65, [], 0.05, (0, 0), 2)
    assert ens.predict(np.zeros((3, 2))).tolist() == [0.65] * 3
    with pytest.raises(FeatureCountMismatch):
        ens.predict(np.zeros((1, 3)))


def test_reproducible_and_round_trip(rng):
    X, y = linear_data(rng, n=500)
    a, _ = fit_ensemble(X, y, cfg=FAST, monotone=(1, 0))
    b, _ = fit_ensemble(X, y, cfg=FAST, monotone=(1, 0))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    back = BoostedEnsemble.from_dict(json.loads(json.dumps(a.to_dict())))
    assert np.array_equal(back.predict(X), a.predict(X))


def test_early_stopping_selects_minimum(rng):
    X, y = linear_data(rng, n=400)
    y = y + rng.normal(0, 0.3, 400)
    _, report = fit_ensemble(X, y, cfg=TrainConfig(max_trees=200, early_stopping_rounds=15, learning_rate=0.3))
    v = report["valid_rmse"]
    assert report["selected_trees"] == int(np.argmin(v))
    assert report["stop_reason"] in ("early_stopping", "max_trees", "no_split")


def test_input_errors():
    with pytest.raises(TooFewSamples):
        fit_ensemble(np.zeros((99, 1)), np.zeros(99))
    y = np.zeros(150)
    y[3] = np.nan
    with pytest.raises(NonFiniteTarget):
        fit_ensemble(np.zeros((150, 1)), y)


def test_corrupted_leaves_detected(rng):
    X, y = linear_data(rng)
    ens, _ = fit_ensemble(X, y, cfg=FAST, monotone=(1, 0))
    assert check_monotonicity(ens, probes=0) == 0
    for tree in ens.trees:
        leaves = np.flatnonzero(tree.feature < 0)
        tree.value[leaves] = tree.value[leaves][::-1].copy()
    ens._flat = None
    assert check_monotonicity(ens, probes=1000, seed=3) > 0


def test_single_tree_split_small(rng):
    for _ in range(10):
        n = int(rng.integers(8, 65))
        X = np.round(rng.normal(size=(n, 2)), 2)
        y = rng.normal(size=n)
        r = y - y.mean()
        tree = grow_tree(X, r, TrainConfig(max_leaves=2, min_samples_leaf=1, exact_splits=True))
        gain, f, thr = best_split_exhaustive(X, r)
        assert tree.feature[0] == f
        assert tree.threshold[0] == thr
