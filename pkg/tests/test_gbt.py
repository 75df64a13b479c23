import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regimevol.gbt import (GBTModel, GBTParams, class_probabilities, contiguous_folds, predict, predict_proba,
                           random_search, train)


def separable(rng, n=60):
    X = rng.normal(size=(n, 3))
    return X, (X[:, 1] > 0).astype(int)


def test_separable_data_is_fit(rng):
    X, y = separable(rng)
    model = train(X, y, GBTParams(n_estimators=30, max_depth=2))
    assert np.all(predict(model, X) == y)


def test_constant_labels_give_degenerate_model(rng):
    X = rng.normal(size=(10, 2))
    model = train(X, np.full(10, 2))
    assert model.degenerate and model.n_trees == 0
    P = class_probabilities(model, X, 3)
    np.testing.assert_array_equal(P, np.tile([0.0, 0.0, 1.0], (10, 1)))


def test_huge_split_penalty_returns_class_priors(rng):
    X = rng.normal(size=(40, 2))
    y = np.r_[np.zeros(30, int), np.ones(10, int)]
    model = train(X, y, GBTParams(n_estimators=5, gamma=1e9, learning_rate=1.0, reg_lambda=1e9))
    np.testing.assert_allclose(predict_proba(model, X), np.tile([0.75, 0.25], (40, 1)), atol=1e-6)


def test_stump_leaf_matches_hand_computed_newton_step():
    X = np.arange(8.0)[:, None]
    y = np.array([0, 0, 0, 0, 1, 1, 1, 0])
    lam, eta = 2.0, 0.5
    model = train(X, y, GBTParams(n_estimators=1, max_depth=1, learning_rate=eta, reg_lambda=lam))
    p = np.full(8, y.mean())  # prior probability of class 1 at every row
    g1, h = p - (y == 1), 2 * p * (1 - p)
    g0 = -g1
    raw0 = model.raw_scores(X)
    # find the split the tree chose for class 1 and compare its leaves to -eta G / (H + lam)
    left = X[:, 0] <= model.thr[model.roots[1]]
    expected = np.where(left, -eta * g1[left].sum() / (h[left].sum() + lam),
                        -eta * g1[~left].sum() / (h[~left].sum() + lam))
    np.testing.assert_allclose(raw0[:, 1] - np.log(p[0]), expected, atol=1e-12)
    left0 = X[:, 0] <= model.thr[model.roots[0]]
    expected0 = np.where(left0, -eta * g0[left0].sum() / (h[left0].sum() + lam),
                         -eta * g0[~left0].sum() / (h[~left0].sum() + lam))
    np.testing.assert_allclose(raw0[:, 0] - np.log(1 - p[0]), expected0, atol=1e-12)


def test_larger_lambda_shrinks_leaves():
    X = np.arange(8.0)[:, None]
    y = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    spread = []
    for lam in (0.0, 1.0, 10.0):
        raw = train(X, y, GBTParams(n_estimators=1, max_depth=1, reg_lambda=lam)).raw_scores(X)
        spread.append(np.ptp(raw[:, 1]))
    assert spread[0] > spread[1] > spread[2] > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_probabilities_form_a_simplex_and_loss_falls(seed, K):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    y = rng.integers(0, K, size=30)
    model = train(X, y, GBTParams(n_estimators=15, max_depth=3, learning_rate=0.3), seed=seed)
    if model.degenerate:
        return
    P = predict_proba(model, rng.normal(size=(12, 3)))
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(P >= 0)
    assert np.all(np.diff(model.loss_history) <= 1e-12)


def test_rank_preserving_transform_leaves_fit_unchanged(rng):
    X, y = separable(rng, 40)
    params = GBTParams(n_estimators=10, max_depth=3)
    a = predict_proba(train(X, y, params), X)
    Xt = X ** 3 + 5 * X
    b = predict_proba(train(Xt, y, params), Xt)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_depth_limit_is_respected(rng):
    X, y = separable(rng)
    y = (X[:, 0] * X[:, 2] > 0).astype(int)
    model = train(X, y, GBTParams(n_estimators=5, max_depth=2))
    assert max(model.tree_depth(t) for t in range(model.n_trees)) <= 2


def test_json_round_trip(rng):
    X, y = separable(rng)
    y[::7] = 2
    model = train(X, y, GBTParams(n_estimators=8, subsample=0.8, colsample_bytree=0.67), seed=3,
                  feature_names=("a", "b", "c"))
    back = GBTModel.from_json(model.to_json())
    np.testing.assert_array_equal(back.raw_scores(X), model.raw_scores(X))
    assert back.feature_names == ("a", "b", "c")
    assert json.loads(model.to_json())["trees"][0]["class_index"] == 0


def test_params_validation():
    with pytest.raises(ValueError):
        GBTParams(learning_rate=0.0)
    with pytest.raises(ValueError):
        GBTParams(subsample=1.5)


def test_contiguous_folds_cover_rows():
    spans = contiguous_folds(10, 3)
    assert spans[0][0] == 0 and spans[-1][1] == 10
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))


def test_random_search(rng):
    X, y = separable(rng, 60)
    order = np.argsort(rng.random(60))
    X, y = X[order], y[order]
    one = random_search(X, y, n_iter=1, seed=2)
    assert len(one.candidates) == 1
    res = random_search(X, y, n_iter=4, seed=2)
    assert res.best_score >= 0.9
    again = random_search(X, y, n_iter=4, seed=2)
    assert res.best == again.best and res.scores == again.scores
    with pytest.raises(ValueError):
        random_search(X[:4], y[:4], folds=3)


def test_search_flags_single_class_folds():
    X = np.arange(12.0)[:, None]
    y = np.r_[np.zeros(6, int), np.ones(6, int)]
    res = random_search(X, y, n_iter=1, folds=3)
    assert any("single-class validation fold" in f for f in res.flags)


def test_one_dimensional_threshold():
    x = np.random.default_rng(7).random(200)
    y = (x > 0.5).astype(int)
    model = train(x[:, None], y, GBTParams(n_estimators=50, max_depth=1))
    assert np.all(predict(model, x[:, None]) == y)
    own = predict_proba(model, x[:, None])[np.arange(200), y]
    assert own.min() > 0.9
