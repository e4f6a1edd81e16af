import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from susgrade.lexres import tokenize
from susgrade.regressor import (
    FAMILIES, EnsembleRegressor, QuantileNormal, VotingRegressor, evaluate, fit_ensemble, fit_numeric, fit_text,
    load_model, predict_dataset, save_model, select_numeric, subset_train_eval, write_eval_csv, write_grid_csv,
)
from susgrade.toy import suspicion_dataset
from susgrade.victim import vectorize_tokens

FAST = {"random_forest": {"n_trees": 20}, "gradient_boosting": {"n_rounds": 30}}


def planted(n=40, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    coef = np.array([0.4, -0.2, 0.1])
    return X, 3.0 + X @ coef, coef


def test_linear_recovers_planted_model():
    X, y, coef = planted()
    m = fit_numeric(X, y, "linear")
    assert np.max(np.abs(m.coef - coef)) < 1e-6
    assert m.intercept == pytest.approx(3.0, abs=1e-6)


def test_singular_design_falls_back(caplog):
    X, y, _ = planted()
    X = np.hstack([X, X[:, :1]])
    m = fit_numeric(X, y, "linear")
    assert "ridge" in caplog.text
    assert np.allclose(m.predict(X), y, atol=1e-4)


@pytest.mark.parametrize("family", FAMILIES)
def test_constant_target(family):
    X = np.random.default_rng(1).normal(size=(20, 3))
    m = fit_numeric(X, np.full(20, 2.5), family, FAST.get(family))
    assert np.allclose(m.predict(X), 2.5, atol=1e-9)


def test_huber_resists_outlier():
    x = np.arange(20, dtype=float)
    y = 1.5 + 0.1 * x
    X = np.append(x, 10.0)[:, None]
    y = np.append(y, 5.0)
    ls = fit_numeric(X, y, "linear")
    hub = fit_numeric(X, y, "huber")
    clean = np.arange(20)
    err_ls = np.max(np.abs(ls.predict(X[clean]) - y[clean]))
    err_hub = np.max(np.abs(hub.predict(X[clean]) - y[clean]))
    assert err_hub < err_ls


def test_fit_numeric_preconditions():
    X, y, _ = planted()
    with pytest.raises(ValueError):
        fit_numeric(X[:5], y[:5])
    with pytest.raises(ValueError):
        fit_numeric(X, y + 10)
    with pytest.raises(ValueError):
        fit_numeric(X, y, "svm")
    m = fit_numeric(X, y)
    with pytest.raises(ValueError, match="width"):
        m.predict(X[:, :2])


def test_missing_values_imputed_from_train_means():
    X, y, _ = planted()
    X = X.copy()
    X[0, 1] = np.nan
    X[:, 2] = np.nan
    m = fit_numeric(X, y)
    assert m.impute_means[2] == 0.0
    assert m.impute_means[1] == pytest.approx(np.nanmean(X[:, 1]))
    assert np.isfinite(m.predict(np.full((1, 3), np.nan))).all()


@pytest.mark.parametrize("family", ["random_forest", "gradient_boosting"])
def test_tree_families_deterministic_and_order_free(family):
    X, y, _ = planted(60)
    a = fit_numeric(X, y, family, FAST[family], seed=3)
    b = fit_numeric(X, y, family, FAST[family], seed=3)
    perm = np.random.default_rng(9).permutation(len(X))
    c = fit_numeric(X[perm], y[perm], family, FAST[family], seed=3)
    assert np.array_equal(a.predict(X), b.predict(X))
    assert np.array_equal(a.predict(X), c.predict(X))


def test_forest_is_mean_of_trees():
    X, y, _ = planted(60)
    m = fit_numeric(X, y, "random_forest", {"n_trees": 7})
    assert np.allclose(m.predict(X), np.mean([t.predict(X) for t in m.trees], axis=0))


def test_boosting_rate_zero_predicts_mean():
    X, y, _ = planted()
    m = fit_numeric(X, y, "gradient_boosting", {"learning_rate": 0.0})
    assert np.allclose(m.predict(X), y.mean())


@pytest.mark.parametrize("family", FAMILIES)
def test_json_round_trip(tmp_path, family):
    X, y, _ = planted(60)
    m = fit_numeric(X, y, family, FAST.get(family), normalize=True)
    save_model(m, tmp_path / "m.json")
    assert np.array_equal(load_model(tmp_path / "m.json").predict(X), m.predict(X))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_quantile_normal_is_monotone(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(50, 2)) * rng.uniform(0.1, 10)
    tf = QuantileNormal.fit(X)
    Z = tf.transform(X)
    for j in range(2):
        order = np.argsort(X[:, j])
        assert np.all(np.diff(Z[order, j]) >= -1e-12)
    assert np.all(np.isfinite(tf.transform(X * 100)))


def test_text_leg_matches_normal_equations():
    texts, y = ["good film", "bad film", "good good", "bad"], np.array([2.0, 4.0, 1.5, 4.5])
    lam = 0.5
    m = fit_text(texts, y, lam)
    X = np.vstack([vectorize_tokens(tokenize(t), m.vocabulary, m.idf) for t in texts])
    Xc = X - X.mean(axis=0)
    w = np.linalg.solve(Xc.T @ Xc + lam * np.eye(X.shape[1]), Xc.T @ (y - y.mean()))
    assert np.allclose(m.weights, w)
    assert m.intercept == pytest.approx(y.mean() - X.mean(axis=0) @ w)


def test_text_leg_limits():
    texts = ["good film", "good film", "bad film", "awful plot"]
    y = np.array([2.0, 2.0, 4.0, 5.0])
    tight = fit_text(texts, y, 1e-9)
    assert tight.predict(["good film"])[0] == pytest.approx(2.0, abs=1e-6)
    loose = fit_text(texts, y, 1e9)
    assert np.allclose(loose.predict(texts), y.mean(), atol=1e-6)
    with pytest.raises(ValueError):
        fit_text(texts, y, 0.0)


class _Fixed:
    def __init__(self, value):
        self.value = value

    def predict(self, X):
        return np.full(len(np.atleast_2d(X)) if not isinstance(X, list) else len(X), self.value)


def test_ensemble_combine_rule():
    ens = EnsembleRegressor(_Fixed(2.0), _Fixed(4.0))
    (p,) = ens.predict_detailed(["x"], np.zeros((1, 2)))
    assert p.score == 3.0 and p.raw == 3.0
    ens = EnsembleRegressor(_Fixed(3.3), _Fixed(3.3))
    assert ens.predict(["x"], np.zeros((1, 2)))[0] == pytest.approx(3.3)
    ens = EnsembleRegressor(_Fixed(5.4), _Fixed(5.8))
    (p,) = ens.predict_detailed(["x"], np.zeros((1, 2)))
    assert p.score == 5.0 and p.raw == pytest.approx(5.6)


def test_evaluate_truth_and_constant():
    d = suspicion_dataset(60, 0)
    truth = type("Truth", (), {"predict": lambda self, X: d.targets.copy()})()
    rep = evaluate(truth, d)
    assert rep.overall.pearson_r == pytest.approx(1.0) and rep.overall.rmse == pytest.approx(0.0)
    rep = evaluate(_Fixed(3.0), d)
    assert rep.overall.pearson_r is None
    assert rep.overall.rmse == pytest.approx(np.sqrt(np.mean((d.targets - 3.0) ** 2)))
    assert set(rep.subsets) == set(d.groups)


def test_ensemble_not_worse_than_legs():
    d = suspicion_dataset(500, 0)
    train, test = d.subset(range(300)), d.subset(range(300, 500))
    ens = fit_ensemble(train, family="linear")
    r = evaluate(ens, test).overall.pearson_r
    assert r >= evaluate(ens.text_leg, test).overall.pearson_r - 0.02
    assert r >= evaluate(ens.numeric_leg, test).overall.pearson_r - 0.02


def test_ensemble_persistence_and_selection(tmp_path):
    d = suspicion_dataset(300, 1)
    train, dev = d.subset(range(200)), d.subset(range(200, 300))
    ens = fit_ensemble(train, dev, family="huber")
    save_model(ens, tmp_path / "e.json")
    assert np.array_equal(predict_dataset(load_model(tmp_path / "e.json"), dev), predict_dataset(ens, dev))
    m, info = select_numeric(train, dev, "huber")
    assert info["params"] in ({"delta": 1.0}, {"delta": 1.345}, {"delta": 2.0})
    vote = VotingRegressor([fit_numeric(train.features, train.targets, f) for f in ("linear", "huber")])
    assert np.allclose(vote.predict(dev.features), (vote.members[0].predict(dev.features) + vote.members[1].predict(dev.features)) / 2)


def _linear_fit(data):
    return fit_numeric(data.features, data.targets, "linear")


def test_subset_grid():
    d = suspicion_dataset(600, 2, noise_groups=("bae",))
    train, test = d.subset(range(400)), d.subset(range(400, 600))
    grid = subset_train_eval(train, test, _linear_fit)
    assert list(grid) == ["all", "original", "pruthi", "alzantot", "textfooler", "bae"]
    for g in grid:
        assert grid[g][g] is not None
    assert grid["all"]["all"] == pytest.approx(evaluate(_linear_fit(train), test).overall.pearson_r)
    assert abs(grid["bae"]["all"]) <= 0.15


def test_subset_grid_marks_small_subsets():
    d = suspicion_dataset(60, 3)
    grid = subset_train_eval(d.subset(range(40)), d.subset(range(40, 60)), _linear_fit)
    assert all(v is None for v in grid["bae"].values())


def test_csv_exports(tmp_path):
    d = suspicion_dataset(200, 4)
    train, test = d.subset(range(150)), d.subset(range(150, 200))
    write_grid_csv(tmp_path / "g.csv", subset_train_eval(train, test, _linear_fit, min_rows=5))
    rows = list(csv.reader(open(tmp_path / "g.csv")))
    assert rows[0][0] == "train_subset" and rows[1][0] == "all"
    write_eval_csv(tmp_path / "e.csv", {"linear": evaluate(_linear_fit(train), test)})
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0] == ["model", "subset", "pearson_r", "spearman_rho", "rmse", "n"]
    assert rows[1][:2] == ["linear", "all"] and rows[1][-1] == "50"
