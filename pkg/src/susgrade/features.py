"""Numeric feature vector describing how suspicious a text may look.

Blocks, in order:

* ``perturbation``: share of original words changed (0 without an original)
* ``embedding``: idf-weighted mean word vector
* ``nnif``: aggregated influence score plus deep-kNN useful/harmful ranks and
  distances from the victim
* ``lid``: local intrinsic dimensionality in each victim representation
  layer, then their mean
* ``grammar``: out-of-lexicon rate and share of improbable bigrams
* ``llm``: optional 1-5 score from an external judge

A block whose extractor fails (or, for ``llm``, is not configured) is filled
with NaN and flagged absent in ``mask``; downstream models impute it from
training statistics.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .lexres import Resources, sentence_vector, tokenize
from .metrics import levenshtein
from .victim import VictimModel, dknn_stats

log = logging.getLogger(__name__)

BLOCKS = ("perturbation", "embedding", "nnif", "lid", "grammar", "llm")
NNIF_NAMES = ("if_score", "useful_rank", "harmful_rank", "useful_distance", "harmful_distance")

LlmScorer = Callable[[str], Optional[float]]


def perturbation_rate(original: str, perturbed: str) -> float:
    """Token-level edit distance over the original length, capped at 1."""
    a, b = tokenize(original), tokenize(perturbed)
    if not a:
        raise ValueError("original has no tokens")
    return min(1.0, levenshtein(a, b) / len(a))


def lid_estimate(distances: Sequence[float], k: int = 20) -> Optional[float]:
    """Maximum-likelihood LID from the ``k`` smallest positive distances.

    Zero distances (the point itself, duplicates) are ignored. Returns
    ``None`` when fewer than two positive distances remain or all of them
    are equal, where the estimator is undefined.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    d = np.sort(np.asarray(distances, dtype=float))
    d = d[d > 0][:k]
    if len(d) < 2 or d[-1] <= 0:
        return None
    s = float(np.mean(np.log(d / d[-1])))
    if s == 0.0:
        return None
    return -1.0 / s


def grammar_scores(text: str, resources: Resources) -> Tuple[float, float, bool]:
    """``(oov_rate, anomaly_score, empty)``.

    oov_rate counts tokens missing from both the POS lexicon and the
    embedding table; anomaly_score is the share of consecutive-token
    transitions whose n-gram log-probability falls below the calibrated floor.
    """
    toks = tokenize(text)
    if not toks:
        return 0.0, 0.0, True
    oov = sum(1 for t in toks if not resources.known(t)) / len(toks)
    if len(toks) < 2:
        return oov, 0.0, False
    if resources.anomaly_floor is None:
        raise ValueError("resources carry no calibrated anomaly floor")
    lm = resources.ngram
    low = sum(
        1 for i in range(1, len(toks))
        if lm.logprob(toks[i], toks[max(0, i - lm.order + 1):i]) < resources.anomaly_floor
    )
    return oov, low / (len(toks) - 1), False


def layer_lids(model: VictimModel, text: str, k: int = 20) -> List[Optional[float]]:
    x = model.vectorize(text)
    train_layers = _train_layers(model)
    out = []
    for q, ref in zip(model.layers(x), train_layers):
        dists = np.linalg.norm(ref - q, axis=1)
        out.append(lid_estimate(dists, min(k, len(dists))))
    return out


_LAYER_CACHE: Dict[int, Tuple[object, List[np.ndarray]]] = {}


def _train_layers(model: VictimModel) -> List[np.ndarray]:
    hit = _LAYER_CACHE.get(id(model))
    if hit is not None and hit[0] is model:
        return hit[1]
    layers = model.layers(model.X)
    _LAYER_CACHE[id(model)] = (model, layers)
    return layers


def feature_names(dim: int, n_layers: int) -> Tuple[str, ...]:
    return (
        ("perturbation_rate",)
        + tuple(f"emb_{i}" for i in range(dim))
        + NNIF_NAMES
        + tuple(f"lid_layer{i}" for i in range(n_layers))
        + ("lid_mean", "oov_rate", "anomaly_score", "llm_score")
    )


def block_slices(dim: int, n_layers: int) -> Dict[str, slice]:
    widths = (("perturbation", 1), ("embedding", dim), ("nnif", 5), ("lid", n_layers + 1), ("grammar", 2), ("llm", 1))
    out, start = {}, 0
    for name, w in widths:
        out[name] = slice(start, start + w)
        start += w
    return out


@dataclass
class SuspicionFeatureVector:
    values: np.ndarray
    names: Tuple[str, ...]
    mask: Dict[str, bool]
    dim: int
    n_layers: int
    notes: Dict[str, str] = field(default_factory=dict)

    @property
    def width(self) -> int:
        return len(self.values)

    def block(self, name: str) -> np.ndarray:
        return self.values[block_slices(self.dim, self.n_layers)[name]]

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, (float(v) for v in self.values)))


def extract(text: str, original: Optional[str], model: VictimModel, resources: Resources,
            llm: Optional[LlmScorer] = None, k_lid: int = 20, m_if: int = 10, dknn_k: int = 1) -> SuspicionFeatureVector:
    dim, n_layers = resources.embeddings.dim, model.n_layers
    names = feature_names(dim, n_layers)
    sl = block_slices(dim, n_layers)
    values = np.full(len(names), np.nan)
    mask = {b: False for b in BLOCKS}
    notes: Dict[str, str] = {}

    def run(block, fn):
        try:
            v = np.asarray(fn(), dtype=float)
            values[sl[block]] = v
            mask[block] = bool(np.all(np.isfinite(v)))
            if not mask[block]:
                notes[block] = "undefined value"
        except Exception as exc:  # one failing block must not sink the vector
            log.warning("feature block %s failed: %s", block, exc)
            notes[block] = f"{type(exc).__name__}: {exc}"

    run("perturbation", lambda: [0.0 if original is None else perturbation_rate(original, text)])
    run("embedding", lambda: sentence_vector(tokenize(text), resources.embeddings, resources.idf)[0])

    def nnif():
        s = dknn_stats(model, text, k=dknn_k, m=m_if)
        return [s.if_score, s.useful_rank, s.harmful_rank, s.useful_distance, s.harmful_distance]

    run("nnif", nnif)

    def lid():
        per = [np.nan if v is None else v for v in layer_lids(model, text, k_lid)]
        finite = [v for v in per if np.isfinite(v)]
        return per + [float(np.mean(finite)) if len(finite) == len(per) else np.nan]

    run("lid", lid)

    def grammar():
        oov, anomaly, empty = grammar_scores(text, resources)
        if empty:
            notes["grammar"] = "empty text"
        return [oov, anomaly]

    run("grammar", grammar)
    if llm is not None:
        def llm_block():
            s = llm(text)
            if s is None:
                raise ValueError("no score")
            return [float(s)]
        run("llm", llm_block)
    else:
        notes["llm"] = "no client"
    return SuspicionFeatureVector(values, names, mask, dim, n_layers, notes)


@dataclass
class FeatureMatrix:
    ids: List[str]
    values: np.ndarray
    names: Tuple[str, ...]
    masks: List[Dict[str, bool]]
    dim: int
    n_layers: int

    def sidecar(self) -> dict:
        return {"dim": self.dim, "n_layers": self.n_layers, "width": len(self.names),
                "names": list(self.names), "blocks": {b: [s.start, s.stop] for b, s in block_slices(self.dim, self.n_layers).items()}}


def extract_many(items: Sequence[Tuple[str, str, Optional[str]]], model: VictimModel, resources: Resources,
                 llm: Optional[LlmScorer] = None, workers: int = 1, **kw) -> FeatureMatrix:
    """``items`` are ``(id, text, original_or_None)``; rows keep input order."""

    def one(item):
        _, text, orig = item
        return extract(text, orig, model, resources, llm=llm, **kw)

    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            vecs = list(ex.map(one, items))
    else:
        vecs = [one(it) for it in items]
    dim, n_layers = resources.embeddings.dim, model.n_layers
    values = np.vstack([v.values for v in vecs]) if vecs else np.zeros((0, len(feature_names(dim, n_layers))))
    return FeatureMatrix([i for i, _, _ in items], values, feature_names(dim, n_layers), [v.mask for v in vecs], dim, n_layers)


def write_features(path, fm: FeatureMatrix, extra: Optional[dict] = None) -> None:
    """CSV with an ``item_id`` column and one named column per feature (empty
    cell = absent), plus ``<path>.json`` describing the layout."""
    with open(path, "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", *fm.names])
        for rid, row in zip(fm.ids, fm.values):
            w.writerow([rid, *("" if not math.isfinite(v) else repr(float(v)) for v in row)])
    side = fm.sidecar()
    if extra:
        side.update(extra)
    with open(str(path) + ".json", "w", encoding="utf8") as fh:
        json.dump(side, fh, indent=1)


def read_features(path) -> FeatureMatrix:
    with open(str(path) + ".json", encoding="utf8") as fh:
        side = json.load(fh)
    with open(path, newline="", encoding="utf8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header[1:]) != tuple(side["names"]):
            raise ValueError("feature CSV header does not match its sidecar")
        ids, rows = [], []
        for row in r:
            ids.append(row[0])
            rows.append([float(v) if v else np.nan for v in row[1:]])
    values = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
    sl = block_slices(side["dim"], side["n_layers"])
    masks = [{b: bool(np.all(np.isfinite(v[s]))) for b, s in sl.items()} for v in values]
    return FeatureMatrix(ids, values, tuple(side["names"]), masks, side["dim"], side["n_layers"])
