"""Suspicion-score regressors.

* ``NumericRegressor``: linear (least squares), Huber (IRLS), random forest
  and gradient boosting over the feature matrix, with mean imputation of
  absent values and an optional quantile-to-normal transform fitted on the
  training rows.
* ``TextRegressor``: ridge regression over L2-normalised tf-idf vectors.
* ``EnsembleRegressor``: mean of a text leg and a numeric leg, clamped to the
  score range (the unclamped value is kept).

Tree ensembles grow scikit-learn CART trees but store and evaluate them as
plain node arrays, so fitted models round-trip through JSON.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm
from sklearn.tree import DecisionTreeRegressor

from .corpus import SOURCES
from .lexres import IdfTable, tokenize
from .metrics import CorrelationReport, correlations
from .victim import vectorize_tokens

log = logging.getLogger(__name__)

FAMILIES = ("linear", "huber", "random_forest", "gradient_boosting")

DEFAULTS: Dict[str, Dict[str, float]] = {
    "linear": {},
    "huber": {"delta": 1.0, "max_iter": 200, "tol": 1e-8},
    "random_forest": {"n_trees": 200, "max_depth": 8, "bootstrap_fraction": 1.0, "max_features": "sqrt"},
    "gradient_boosting": {"n_rounds": 200, "max_depth": 3, "learning_rate": 0.05},
}

# candidates scored on the dev split when selecting hyperparameters
GRIDS: Dict[str, List[Dict[str, float]]] = {
    "linear": [{}],
    "huber": [{"delta": 1.0}, {"delta": 1.345}, {"delta": 2.0}],
    "random_forest": [{"max_depth": 4}, {"max_depth": 8}, {"max_depth": 12}],
    "gradient_boosting": [
        {"n_rounds": 100, "learning_rate": 0.05},
        {"n_rounds": 200, "learning_rate": 0.05},
        {"n_rounds": 200, "learning_rate": 0.1},
    ],
}


# -- preprocessing -------------------------------------------------------------


@dataclass
class QuantileNormal:
    """Per-column map of training quantiles onto standard-normal scores.

    Values between reference points are interpolated linearly; values
    outside the training range clip to the extreme quantiles.
    """

    references: List[np.ndarray]
    n_quantiles: int = 1000
    eps: float = 1e-7

    @classmethod
    def fit(cls, X: np.ndarray, n_quantiles: int = 1000) -> "QuantileNormal":
        X = np.asarray(X, dtype=float)
        nq = max(2, min(n_quantiles, len(X)))
        levels = np.linspace(0, 1, nq)
        return cls([np.quantile(X[:, j], levels) for j in range(X.shape[1])], nq)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != len(self.references):
            raise ValueError(f"expected {len(self.references)} columns, got {X.shape[1]}")
        q = np.full_like(X, 0.5)
        for j, ref in enumerate(self.references):
            if ref[-1] == ref[0]:
                continue
            levels = np.linspace(0, 1, len(ref))
            # average the forward and backward interpolation so ties map to the middle level
            up = np.interp(X[:, j], ref, levels)
            down = 1 - np.interp(-X[:, j], -ref[::-1], levels)
            q[:, j] = np.clip(0.5 * (up + down), self.eps, 1 - self.eps)
        return norm.ppf(q)

    def to_json(self) -> dict:
        return {"n_quantiles": self.n_quantiles, "references": [r.tolist() for r in self.references]}

    @classmethod
    def from_json(cls, obj: dict) -> "QuantileNormal":
        return cls([np.array(r, dtype=float) for r in obj["references"]], int(obj["n_quantiles"]))


def _impute_fit(X: np.ndarray) -> np.ndarray:
    ok = np.isfinite(X)
    n = ok.sum(axis=0)
    sums = np.where(ok, X, 0.0).sum(axis=0)
    # a column absent in every row imputes to 0
    return np.divide(sums, n, out=np.zeros(X.shape[1]), where=n > 0)


def _impute(X: np.ndarray, means: np.ndarray) -> np.ndarray:
    X = np.array(X, dtype=float)
    bad = ~np.isfinite(X)
    if bad.any():
        X[bad] = np.broadcast_to(means, X.shape)[bad]
    return X


# -- trees as arrays -------------------------------------------------------------


@dataclass
class TreeArrays:
    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray

    @classmethod
    def from_sklearn(cls, tree: DecisionTreeRegressor) -> "TreeArrays":
        t = tree.tree_
        return cls(t.children_left.copy(), t.children_right.copy(), t.feature.copy(), t.threshold.copy(),
                   t.value[:, 0, 0].copy())

    def predict(self, X: np.ndarray) -> np.ndarray:
        # CART compares float32-rounded inputs against its thresholds
        X = np.asarray(X, dtype=np.float32).astype(np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            active = self.left[node] >= 0
            if not active.any():
                break
            r, nd = rows[active], node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]

    def to_json(self) -> dict:
        return {"left": self.left.tolist(), "right": self.right.tolist(), "feature": self.feature.tolist(),
                "threshold": self.threshold.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "TreeArrays":
        return cls(np.array(obj["left"], dtype=np.int64), np.array(obj["right"], dtype=np.int64),
                   np.array(obj["feature"], dtype=np.int64), np.array(obj["threshold"], dtype=float),
                   np.array(obj["value"], dtype=float))


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row order that depends only on row contents, not on input order."""
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def _tree_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


# -- numeric families --------------------------------------------------------------


def _fit_linear(X, y):
    A = np.hstack([np.ones((len(X), 1)), X])
    rank = np.linalg.matrix_rank(A)
    if rank < A.shape[1]:
        log.warning("singular design (rank %d < %d); falling back to ridge", rank, A.shape[1])
        return _ridge_closed_form(X, y, 1e-6)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef[1:], float(coef[0])


def _ridge_closed_form(X, y, lam):
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    w = np.linalg.solve(Xc.T @ Xc + lam * np.eye(X.shape[1]), Xc.T @ (y - ym))
    return w, float(ym - xm @ w)


def _fit_huber(X, y, delta=1.0, max_iter=200, tol=1e-8):
    """IRLS for the Huber loss on residuals scaled by a MAD estimate."""
    A = np.hstack([np.ones((len(X), 1)), X])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    for _ in range(int(max_iter)):
        r = y - A @ coef
        scale = np.median(np.abs(r - np.median(r))) / 0.6745
        if scale < 1e-12:
            scale = max(float(np.mean(np.abs(r))), 1e-12)
        u = np.abs(r) / scale
        wts = np.where(u <= delta, 1.0, delta / np.maximum(u, 1e-300))
        sw = np.sqrt(wts)
        new, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
        if np.max(np.abs(new - coef)) < tol:
            coef = new
            break
        coef = new
    return coef[1:], float(coef[0])


def _max_features(setting, p):
    if setting == "sqrt":
        return max(1, int(np.sqrt(p)))
    if setting is None:
        return p
    return int(setting)


def _fit_forest(X, y, seed, n_trees=200, max_depth=8, bootstrap_fraction=1.0, max_features="sqrt"):
    order = _canonical_order(X, y)
    X, y = X[order], y[order]
    n = len(X)
    m = max(1, int(round(bootstrap_fraction * n)))
    trees = []
    for t in range(int(n_trees)):
        rng = _tree_seed(seed, t)
        idx = np.sort(rng.integers(0, n, size=m))
        tree = DecisionTreeRegressor(max_depth=int(max_depth), max_features=_max_features(max_features, X.shape[1]),
                                     random_state=int(rng.integers(2 ** 31 - 1)))
        tree.fit(X[idx], y[idx])
        trees.append(TreeArrays.from_sklearn(tree))
    return trees


def _fit_boosting(X, y, seed, n_rounds=200, max_depth=3, learning_rate=0.05):
    order = _canonical_order(X, y)
    X, y = X[order], y[order]
    init = float(y.mean())
    pred = np.full(len(y), init)
    trees = []
    if learning_rate == 0:
        return init, trees
    for t in range(int(n_rounds)):
        tree = DecisionTreeRegressor(max_depth=int(max_depth), random_state=int(_tree_seed(seed, t).integers(2 ** 31 - 1)))
        tree.fit(X, y - pred)
        arr = TreeArrays.from_sklearn(tree)
        pred = pred + learning_rate * arr.predict(X)
        trees.append(arr)
    return init, trees


@dataclass
class NumericRegressor:
    family: str
    params: Dict
    seed: int
    n_features: int
    impute_means: np.ndarray
    transform: Optional[QuantileNormal] = None
    coef: Optional[np.ndarray] = None
    intercept: float = 0.0
    trees: List[TreeArrays] = field(default_factory=list)
    init: float = 0.0

    def _prep(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"feature width mismatch: model expects {self.n_features}, got {X.shape[1]}")
        X = _impute(X, self.impute_means)
        return self.transform.transform(X) if self.transform is not None else X

    def predict(self, X) -> np.ndarray:
        Z = self._prep(X)
        if self.family in ("linear", "huber"):
            return Z @ self.coef + self.intercept
        if self.family == "random_forest":
            return np.mean([t.predict(Z) for t in self.trees], axis=0)
        out = np.full(len(Z), self.init)
        for t in self.trees:
            out += self.params["learning_rate"] * t.predict(Z)
        return out

    def to_json(self) -> dict:
        return {
            "kind": "numeric",
            "family": self.family,
            "params": self.params,
            "seed": self.seed,
            "n_features": self.n_features,
            "impute_means": self.impute_means.tolist(),
            "transform": None if self.transform is None else self.transform.to_json(),
            "coef": None if self.coef is None else self.coef.tolist(),
            "intercept": self.intercept,
            "init": self.init,
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NumericRegressor":
        return cls(
            family=obj["family"],
            params=dict(obj["params"]),
            seed=int(obj["seed"]),
            n_features=int(obj["n_features"]),
            impute_means=np.array(obj["impute_means"], dtype=float),
            transform=None if obj["transform"] is None else QuantileNormal.from_json(obj["transform"]),
            coef=None if obj["coef"] is None else np.array(obj["coef"], dtype=float),
            intercept=float(obj["intercept"]),
            trees=[TreeArrays.from_json(t) for t in obj["trees"]],
            init=float(obj["init"]),
        )


def fit_numeric(X, y, family: str = "linear", params: Optional[Mapping] = None, seed: int = 0,
                normalize: bool = False, target_range: Tuple[float, float] = (1.0, 5.0)) -> NumericRegressor:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(X) != len(y):
        raise ValueError("X and y differ in length")
    if len(X) < 10:
        raise ValueError("need at least 10 rows")
    lo, hi = target_range
    if np.any(y < lo) or np.any(y > hi):
        raise ValueError(f"targets must lie in [{lo}, {hi}]")
    hp = {**DEFAULTS[family], **(params or {})}
    means = _impute_fit(X)
    Z = _impute(X, means)
    tf = QuantileNormal.fit(Z) if normalize else None
    if tf is not None:
        Z = tf.transform(Z)
    model = NumericRegressor(family, hp, seed, X.shape[1], means, tf)
    if family == "linear":
        model.coef, model.intercept = _fit_linear(Z, y)
    elif family == "huber":
        model.coef, model.intercept = _fit_huber(Z, y, hp["delta"], hp["max_iter"], hp["tol"])
    elif family == "random_forest":
        model.trees = _fit_forest(Z, y, seed, hp["n_trees"], hp["max_depth"], hp["bootstrap_fraction"], hp["max_features"])
    else:
        model.init, model.trees = _fit_boosting(Z, y, seed, hp["n_rounds"], hp["max_depth"], hp["learning_rate"])
    return model


# -- text leg ------------------------------------------------------------------------


@dataclass
class TextRegressor:
    vocabulary: Dict[str, int]
    idf: IdfTable
    weights: np.ndarray
    intercept: float
    lam: float

    def vectorize(self, texts: Sequence[str]) -> np.ndarray:
        if not len(texts):
            return np.zeros((0, len(self.vocabulary)))
        return np.vstack([vectorize_tokens(tokenize(t), self.vocabulary, self.idf) for t in texts])

    def predict(self, texts: Sequence[str]) -> np.ndarray:
        return self.vectorize(texts) @ self.weights + self.intercept

    def to_json(self) -> dict:
        return {"kind": "text", "vocabulary": sorted(self.vocabulary, key=self.vocabulary.get), "idf": self.idf.to_json(),
                "weights": self.weights.tolist(), "intercept": self.intercept, "lambda": self.lam}

    @classmethod
    def from_json(cls, obj: dict) -> "TextRegressor":
        return cls({w: i for i, w in enumerate(obj["vocabulary"])}, IdfTable.from_json(obj["idf"]),
                   np.array(obj["weights"], dtype=float), float(obj["intercept"]), float(obj["lambda"]))


def fit_text(texts: Sequence[str], y, lam: float = 1.0) -> TextRegressor:
    """Ridge over tf-idf vectors; the intercept is not penalised."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    y = np.asarray(y, dtype=float)
    if len(texts) != len(y):
        raise ValueError("texts and targets differ in length")
    if len(texts) < 2:
        raise ValueError("need at least 2 texts")
    toks = [tokenize(t) for t in texts]
    idf = IdfTable.fit(toks)
    vocab = {w: i for i, w in enumerate(sorted({w for ts in toks for w in ts}))}
    X = np.vstack([vectorize_tokens(ts, vocab, idf) for ts in toks])
    w, b = _ridge_closed_form(X, y, lam)
    return TextRegressor(vocab, idf, w, b, float(lam))


# -- ensemble ------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsemblePrediction:
    score: float
    raw: float
    text: float
    numeric: float


@dataclass
class EnsembleRegressor:
    text_leg: TextRegressor
    numeric_leg: NumericRegressor
    clamp: Tuple[float, float] = (1.0, 5.0)
    name: str = "text+num"

    def predict_detailed(self, texts: Sequence[str], X) -> List[EnsemblePrediction]:
        t = self.text_leg.predict(texts)
        n = self.numeric_leg.predict(X)
        if len(t) != len(n):
            raise ValueError("texts and feature rows differ in number")
        raw = (t + n) / 2
        lo, hi = self.clamp
        return [EnsemblePrediction(float(min(hi, max(lo, r))), float(r), float(a), float(b)) for r, a, b in zip(raw, t, n)]

    def predict(self, texts: Sequence[str], X) -> np.ndarray:
        return np.array([p.score for p in self.predict_detailed(texts, X)])

    def to_json(self) -> dict:
        return {"kind": "ensemble", "name": self.name, "clamp": list(self.clamp),
                "text_leg": self.text_leg.to_json(), "numeric_leg": self.numeric_leg.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "EnsembleRegressor":
        return cls(TextRegressor.from_json(obj["text_leg"]), NumericRegressor.from_json(obj["numeric_leg"]),
                   tuple(obj["clamp"]), obj.get("name", "text+num"))


@dataclass
class VotingRegressor:
    """Mean prediction of several fitted numeric families."""

    members: List[NumericRegressor]

    def predict(self, X) -> np.ndarray:
        return np.mean([m.predict(X) for m in self.members], axis=0)

    def to_json(self) -> dict:
        return {"kind": "voting", "members": [m.to_json() for m in self.members]}

    @classmethod
    def from_json(cls, obj: dict) -> "VotingRegressor":
        return cls([NumericRegressor.from_json(m) for m in obj["members"]])


def model_from_json(obj: dict):
    kinds = {"numeric": NumericRegressor, "text": TextRegressor, "ensemble": EnsembleRegressor, "voting": VotingRegressor}
    return kinds[obj["kind"]].from_json(obj)


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf8") as fh:
        json.dump(model.to_json(), fh)


def load_model(path):
    with open(path, encoding="utf8") as fh:
        return model_from_json(json.load(fh))


# -- selection and evaluation ----------------------------------------------------------


@dataclass
class Dataset:
    texts: List[str]
    features: np.ndarray
    targets: np.ndarray
    groups: List[str]

    def __len__(self):
        return len(self.targets)

    def subset(self, idx) -> "Dataset":
        idx = list(idx)
        return Dataset([self.texts[i] for i in idx], self.features[idx], self.targets[idx], [self.groups[i] for i in idx])


def select_numeric(train: Dataset, dev: Dataset, family: str, seed: int = 0, normalize: bool = True,
                   grid: Optional[Sequence[Mapping]] = None) -> Tuple[NumericRegressor, Dict]:
    """Fit each grid point and keep the one with the best dev Pearson r."""
    best, best_r, best_hp = None, -np.inf, None
    for hp in grid if grid is not None else GRIDS[family]:
        m = fit_numeric(train.features, train.targets, family, hp, seed, normalize)
        r = correlations(m.predict(dev.features), dev.targets).pearson_r
        r = -np.inf if r is None else r
        if best is None or r > best_r:
            best, best_r, best_hp = m, r, dict(hp)
    return best, {"params": best_hp, "dev_pearson": None if not np.isfinite(best_r) else best_r}


def select_text(train: Dataset, dev: Dataset, lams: Sequence[float] = (0.1, 1.0, 10.0)) -> Tuple[TextRegressor, Dict]:
    best, best_r, best_lam = None, -np.inf, None
    for lam in lams:
        m = fit_text(train.texts, train.targets, lam)
        r = correlations(m.predict(dev.texts), dev.targets).pearson_r
        r = -np.inf if r is None else r
        if best is None or r > best_r:
            best, best_r, best_lam = m, r, lam
    return best, {"lambda": best_lam, "dev_pearson": None if not np.isfinite(best_r) else best_r}


def fit_ensemble(train: Dataset, dev: Optional[Dataset] = None, family: str = "random_forest", seed: int = 0,
                 lam: float = 1.0, params: Optional[Mapping] = None, clamp=(1.0, 5.0)) -> EnsembleRegressor:
    if dev is not None:
        text_leg, _ = select_text(train, dev)
        num_leg, _ = select_numeric(train, dev, family, seed)
    else:
        text_leg = fit_text(train.texts, train.targets, lam)
        num_leg = fit_numeric(train.features, train.targets, family, params, seed, normalize=True, target_range=clamp)
    return EnsembleRegressor(text_leg, num_leg, tuple(clamp))


def predict_dataset(model, data: Dataset) -> np.ndarray:
    if isinstance(model, EnsembleRegressor):
        return model.predict(data.texts, data.features)
    if isinstance(model, TextRegressor):
        return model.predict(data.texts)
    return model.predict(data.features)


@dataclass
class EvalReport:
    overall: CorrelationReport
    subsets: Dict[str, Optional[CorrelationReport]]


def evaluate(model, data: Dataset) -> EvalReport:
    if len(data) < 3:
        raise ValueError("need at least 3 test items")
    pred = predict_dataset(model, data)
    subsets: Dict[str, Optional[CorrelationReport]] = {}
    for g in dict.fromkeys(data.groups):
        idx = [i for i, gg in enumerate(data.groups) if gg == g]
        subsets[g] = correlations(pred[idx], data.targets[idx]) if len(idx) >= 3 else None
    return EvalReport(correlations(pred, data.targets), subsets)


ALL = "all"


def subset_train_eval(train: Dataset, test: Dataset, fit: Callable[[Dataset], object],
                      min_rows: int = 10) -> Dict[str, Dict[str, Optional[float]]]:
    """Pearson r for every (training subset, test subset) pair, with ``all``
    as both a row and a column. Undersized subsets give ``None`` cells."""
    def groups_of(d):
        seen = list(dict.fromkeys(d.groups))
        return [ALL, *sorted(seen, key=lambda g: (SOURCES.index(g) if g in SOURCES else len(SOURCES), seen.index(g)))]

    grid: Dict[str, Dict[str, Optional[float]]] = {}
    test_cols = groups_of(test)
    for g in groups_of(train):
        idx = range(len(train)) if g == ALL else [i for i, gg in enumerate(train.groups) if gg == g]
        idx = list(idx)
        if len(idx) < min_rows:
            grid[g] = {c: None for c in test_cols}
            continue
        model = fit(train.subset(idx))
        pred = predict_dataset(model, test)
        row = {}
        for c in test_cols:
            tidx = list(range(len(test))) if c == ALL else [i for i, gg in enumerate(test.groups) if gg == c]
            row[c] = correlations(pred[tidx], test.targets[tidx]).pearson_r if len(tidx) >= 3 else None
        grid[g] = row
    return grid


def write_grid_csv(path, grid: Mapping[str, Mapping[str, Optional[float]]]) -> None:
    cols = list(next(iter(grid.values()))) if grid else []
    with open(path, "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["train_subset", *cols])
        for g, row in grid.items():
            w.writerow([g, *("" if row[c] is None else f"{row[c]:.3f}" for c in cols)])


def write_eval_csv(path, reports: Mapping[str, EvalReport]) -> None:
    with open(path, "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "subset", "pearson_r", "spearman_rho", "rmse", "n"])
        for name, rep in reports.items():
            for sub, cr in [("all", rep.overall), *rep.subsets.items()]:
                if cr is None:
                    w.writerow([name, sub, "", "", "", ""])
                    continue
                w.writerow([name, sub, _f3(cr.pearson_r), _f3(cr.spearman_rho), _f3(cr.rmse), cr.n])


def _f3(x):
    return "" if x is None else f"{x:.3f}"
