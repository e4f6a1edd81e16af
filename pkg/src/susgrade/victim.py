"""Desk-scale target classifier.

An L2-normalised tf-idf bag of words fed to an L2-regularised logistic
regression. Besides predictions it exposes the representation "layers" used
by the detector features, closed-form influence scores and deep-kNN
neighbour statistics over the training set.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .lexres import IdfTable, tokenize

log = logging.getLogger(__name__)

LABELS = ("negative", "positive")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class Prediction:
    label: int
    probability: float
    probs: Tuple[float, float]


@dataclass(frozen=True)
class DknnStats:
    useful_rank: int
    harmful_rank: int
    useful_distance: float
    harmful_distance: float
    if_score: float


@dataclass
class VictimModel:
    vocabulary: Dict[str, int]
    idf: IdfTable
    weights: np.ndarray
    bias: float
    lam: float
    train_texts: Tuple[str, ...]
    train_labels: np.ndarray
    seed: int = 0
    epochs_run: int = 0
    _X: Optional[np.ndarray] = field(default=None, repr=False)
    _chol: Optional[np.ndarray] = field(default=None, repr=False)
    _train_grads: Optional[np.ndarray] = field(default=None, repr=False)

    # -- representation ----------------------------------------------------

    def vectorize(self, text: str) -> np.ndarray:
        return vectorize_tokens(tokenize(text), self.vocabulary, self.idf)

    def vectorize_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, len(self.vocabulary)))
        return np.vstack([self.vectorize(t) for t in texts])

    @property
    def X(self) -> np.ndarray:
        if self._X is None:
            self._X = self.vectorize_many(self.train_texts)
            self._X.setflags(write=False)
        return self._X

    def margin(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.bias

    def layers(self, x: np.ndarray) -> List[np.ndarray]:
        """Representation layers: the tf-idf vector and the pre-sigmoid margin."""
        x = np.atleast_2d(x)
        return [x, self.margin(x)[:, None]]

    @property
    def n_layers(self) -> int:
        return 2

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.X).tobytes()).hexdigest()

    # -- persistence -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "vocabulary": sorted(self.vocabulary, key=self.vocabulary.get),
            "idf": self.idf.to_json(),
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "lambda": self.lam,
            "seed": self.seed,
            "epochs_run": self.epochs_run,
            "train_texts": list(self.train_texts),
            "train_labels": [int(y) for y in self.train_labels],
            "train_matrix_sha256": self.digest(),
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def from_json(cls, obj: dict) -> "VictimModel":
        model = cls(
            vocabulary={w: i for i, w in enumerate(obj["vocabulary"])},
            idf=IdfTable.from_json(obj["idf"]),
            weights=np.array(obj["weights"], dtype=float),
            bias=float(obj["bias"]),
            lam=float(obj["lambda"]),
            train_texts=tuple(obj["train_texts"]),
            train_labels=np.array(obj["train_labels"], dtype=int),
            seed=int(obj.get("seed", 0)),
            epochs_run=int(obj.get("epochs_run", 0)),
        )
        want = obj.get("train_matrix_sha256")
        if want and model.digest() != want:
            raise ValueError("training matrix digest mismatch; model file does not match its training data")
        return model

    @classmethod
    def load(cls, path) -> "VictimModel":
        with open(path, encoding="utf8") as fh:
            return cls.from_json(json.load(fh))

    # -- influence helpers ---------------------------------------------------

    def _hessian_factor(self) -> np.ndarray:
        if self._chol is None:
            X = self.X
            s = _sigmoid(self.margin(X))
            H = (X * (s * (1 - s))[:, None]).T @ X / len(X) + self.lam * np.eye(X.shape[1])
            try:
                self._chol = np.linalg.cholesky(H)
            except np.linalg.LinAlgError as exc:
                raise ValueError("Hessian is not positive definite (is lambda > 0?)") from exc
        return self._chol

    def hessian_solve(self, g: np.ndarray) -> np.ndarray:
        L = self._hessian_factor()
        y = np.linalg.solve(L, g)
        return np.linalg.solve(L.T, y)

    def train_gradients(self) -> np.ndarray:
        """Per-example log-loss gradients w.r.t. the weights (bias held fixed)."""
        if self._train_grads is None:
            X = self.X
            r = _sigmoid(self.margin(X)) - self.train_labels
            self._train_grads = X * r[:, None]
        return self._train_grads


def vectorize_tokens(tokens: Sequence[str], vocabulary: Dict[str, int], idf: IdfTable) -> np.ndarray:
    x = np.zeros(len(vocabulary))
    for tok in tokens:
        j = vocabulary.get(tok)
        if j is not None:
            x[j] += 1.0
    for tok, j in vocabulary.items():
        if x[j]:
            x[j] *= idf[tok]
    n = np.linalg.norm(x)
    return x / n if n > 0 else x


def train(
    texts: Sequence[str],
    labels: Sequence[int],
    lam: float = 1e-3,
    seed: int = 0,
    idf: Optional[IdfTable] = None,
    max_epochs: int = 500,
    tol: float = 1e-6,
    vocabulary: Optional[Dict[str, int]] = None,
) -> VictimModel:
    """Fit the victim by full-batch gradient descent.

    Objective: mean log-loss + lam/2 * ||w||^2 (bias unregularised). The
    weights and the bias each step by 0.5/L for their own block's Lipschitz
    bound L, so a large lam does not freeze the bias; iteration stops once
    the gradient norm drops below ``tol`` or after ``max_epochs``.
    """
    y = np.asarray(labels, dtype=int)
    if len(texts) != len(y):
        raise ValueError("texts and labels differ in length")
    if len(set(y.tolist())) < 2:
        raise ValueError("training corpus must contain both classes")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    token_lists = [tokenize(t) for t in texts]
    if idf is None:
        idf = IdfTable.fit(token_lists)
    if vocabulary is None:
        vocab_words = sorted({w for toks in token_lists for w in toks})
        vocabulary = {w: i for i, w in enumerate(vocab_words)}
    X = np.vstack([vectorize_tokens(t, vocabulary, idf) for t in token_lists])
    n, d = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    step = np.full(d + 1, 0.5 / (0.25 * np.linalg.norm(X, 2) ** 2 / n + lam))
    step[-1] = 0.5 / 0.25
    theta = np.zeros(d + 1)
    reg = np.full(d + 1, lam)
    reg[-1] = 0.0
    epochs = 0
    for epochs in range(1, max_epochs + 1):
        r = _sigmoid(Xb @ theta) - y
        grad = Xb.T @ r / n + reg * theta
        if np.linalg.norm(grad) < tol:
            break
        theta -= step * grad
    model = VictimModel(
        vocabulary=vocabulary,
        idf=idf,
        weights=theta[:-1].copy(),
        bias=float(theta[-1]),
        lam=float(lam),
        train_texts=tuple(texts),
        train_labels=y,
        seed=seed,
        epochs_run=epochs,
    )
    model._X = X
    X.setflags(write=False)
    return model


def predict(model: VictimModel, text: str) -> Prediction:
    p = float(_sigmoid(model.margin(model.vectorize(text))))
    label = int(p >= 0.5)
    return Prediction(label=label, probability=p if label else 1.0 - p, probs=(1.0 - p, p))


def positive_probability_tokens(model: VictimModel, tokens: Sequence[str]) -> float:
    """Positive-class probability of an already tokenized text."""
    return float(_sigmoid(model.margin(vectorize_tokens(tokens, model.vocabulary, model.idf))))


def predict_proba_many(model: VictimModel, texts: Sequence[str]) -> np.ndarray:
    """Positive-class probabilities for a batch of texts."""
    if not texts:
        return np.zeros(0)
    return _sigmoid(model.margin(model.vectorize_many(texts)))


def accuracy(model: VictimModel, texts: Sequence[str], labels: Sequence[int]) -> float:
    p = predict_proba_many(model, texts)
    return float(np.mean((p >= 0.5).astype(int) == np.asarray(labels)))


def test_gradient(model: VictimModel, text: str, label: Optional[int] = None) -> np.ndarray:
    x = model.vectorize(text)
    p = float(_sigmoid(model.margin(x)))
    if label is None:
        label = int(p >= 0.5)
    return (p - label) * x


def influence_scores(model: VictimModel, test_text: str, label: Optional[int] = None) -> np.ndarray:
    """-grad L(test)^T H^-1 grad L(train_i) for every training example.

    ``label`` defaults to the model's own prediction, which is what is
    available for unlabelled (e.g. adversarial) inputs.
    """
    g = test_gradient(model, test_text, label)
    return -model.train_gradients() @ model.hessian_solve(g)


def influence_score(model: VictimModel, test_text: str, train_index: int, label: Optional[int] = None) -> float:
    if not 0 <= train_index < len(model.train_texts):
        raise IndexError("train_index out of range")
    g = test_gradient(model, test_text, label)
    return float(-model.train_gradients()[train_index] @ model.hessian_solve(g))


def aggregate_influence(scores: np.ndarray, m: int = 10) -> float:
    """Mean magnitude of the ``m`` most influential training points."""
    if len(scores) == 0:
        return 0.0
    mags = np.sort(np.abs(scores))[::-1]
    return float(np.mean(mags[:m]))


def _kth_of_class(order: np.ndarray, dists: np.ndarray, mask: np.ndarray, k: int, what: str) -> Tuple[int, float]:
    pop = int(mask.sum())
    if pop == 0:
        raise ValueError(f"no training points carry the {what} label")
    if k > pop:
        log.warning("k=%d exceeds %s class population %d; clamping", k, what, pop)
        k = pop
    hits = np.flatnonzero(mask[order])
    pos = int(hits[k - 1])
    return pos + 1, float(dists[order[pos]])


def dknn_stats(model: VictimModel, text: str, k: int = 1, m: int = 10) -> DknnStats:
    """Deep-kNN neighbour statistics in the tf-idf space.

    The useful neighbour is the k-th nearest training point whose gold label
    equals the predicted label, the harmful one the k-th nearest with the
    other label; ranks are 1-based positions in the global distance order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x = model.vectorize(text)
    dists = np.linalg.norm(model.X - x, axis=1)
    order = np.lexsort((np.arange(len(dists)), dists))
    pred = predict(model, text).label
    same = model.train_labels == pred
    u_rank, u_dist = _kth_of_class(order, dists, same, k, "predicted")
    h_rank, h_dist = _kth_of_class(order, dists, ~same, k, "opposite")
    return DknnStats(
        useful_rank=u_rank,
        harmful_rank=h_rank,
        useful_distance=u_dist,
        harmful_distance=h_dist,
        if_score=aggregate_influence(influence_scores(model, text), m),
    )


def loo_loss_delta(model: VictimModel, test_text: str, train_index: int, label: Optional[int] = None, **train_kw) -> float:
    """Change in test loss caused by the presence of one training point,
    measured by actually retraining without it (slow; used as an oracle)."""
    keep = [i for i in range(len(model.train_texts)) if i != train_index]
    sub = train(
        [model.train_texts[i] for i in keep],
        model.train_labels[keep],
        lam=model.lam,
        idf=model.idf,
        vocabulary=model.vocabulary,
        **train_kw,
    )
    if label is None:
        label = predict(model, test_text).label

    def loss(mdl):
        p = float(_sigmoid(mdl.margin(mdl.vectorize(test_text))))
        p = min(max(p, 1e-15), 1 - 1e-15)
        return -math.log(p) if label == 1 else -math.log(1 - p)

    return loss(model) - loss(sub)
