"""Linguistic resources shared by the attacks and the feature extractor.

Word embeddings with cosine nearest-neighbour search, an IDF table, a small
add-alpha n-gram language model, a coarse POS lexicon and a QWERTY keyboard
adjacency map. Everything here is immutable once built.
"""

from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

POS_TAGS = ("NOUN", "VERB", "ADJ", "ADV", "OTHER")

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

_CHUNK = re.compile(r"\S+")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("P", "S")


def token_spans(text: str) -> List[Tuple[int, int, str]]:
    """Tokenize ``text`` and return ``(start, end, token)`` triples.

    Chunks are split on Unicode whitespace; leading and trailing punctuation is
    stripped (internal apostrophes and hyphens survive) and the token is
    lowercased. The span covers the stripped core inside the original string.
    """
    spans = []
    for m in _CHUNK.finditer(text):
        start, end = m.start(), m.end()
        while start < end and _is_punct(text[start]):
            start += 1
        while end > start and _is_punct(text[end - 1]):
            end -= 1
        if start < end:
            spans.append((start, end, text[start:end].lower()))
    return spans


def tokenize(text: str) -> List[str]:
    return [tok for _, _, tok in token_spans(text)]


# ---------------------------------------------------------------------------
# Embeddings


class EmbeddingTable:
    """Word vectors with exhaustive cosine search.

    Lookup of an unknown word returns ``None``; a zero vector is never handed
    out silently.
    """

    def __init__(self, words: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise ValueError("vectors must be a |V| x d matrix aligned with words")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding vectors must be finite")
        self.words: Tuple[str, ...] = tuple(words)
        self.index: Dict[str, int] = {}
        for i, w in enumerate(self.words):
            # first occurrence wins for duplicated surface forms
            self.index.setdefault(w, i)
        self.vectors = vectors
        self.vectors.setflags(write=False)
        norms = np.linalg.norm(vectors, axis=1)
        self._norms = norms
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = vectors / np.where(norms > 0, norms, 1.0)[:, None]
        self._unit = unit

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def __len__(self) -> int:
        return len(self.words)

    def get(self, word: str) -> Optional[np.ndarray]:
        i = self.index.get(word)
        return None if i is None else self.vectors[i]

    def cosine(self, a: str, b: str) -> Optional[float]:
        ia, ib = self.index.get(a), self.index.get(b)
        if ia is None or ib is None:
            return None
        return float(self._unit[ia] @ self._unit[ib])

    def nearest_neighbors(self, word: str, k: int, min_cos: float = -1.0) -> List[Tuple[str, float]]:
        """Return up to ``k`` ``(word, cosine)`` pairs ranked by cosine.

        The query's own surface form is excluded (including duplicated rows).
        Ties are broken alphabetically so the ordering is total.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if not -1.0 <= min_cos <= 1.0:
            raise ValueError("min_cos must lie in [-1, 1]")
        i = self.index.get(word)
        if i is None:
            return []
        sims = self._unit @ self._unit[i]
        best: Dict[str, float] = {}
        for j, s in enumerate(sims):
            w = self.words[j]
            if w == word:
                continue
            s = float(min(1.0, max(-1.0, s)))
            # exact duplicates can come out a hair under 1.0 after normalisation
            if abs(s - 1.0) < 1e-12:
                s = 1.0
            if s >= min_cos and s > best.get(w, -2.0):
                best[w] = s
        ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
        return ranked[:k]

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        words, rows = [], []
        with open(path, encoding="utf8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split(" ")
                if not parts or parts == [""]:
                    continue
                # tolerate a word2vec-style "count dim" header line
                if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                    continue
                try:
                    rows.append([float(x) for x in parts[1:]])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: bad vector") from exc
                words.append(parts[0])
        if not words:
            raise ValueError(f"{path}: no vectors")
        if len({len(r) for r in rows}) != 1:
            raise ValueError(f"{path}: ragged vectors")
        return cls(words, np.array(rows))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf8", newline="\n") as fh:
            for w, v in zip(self.words, self.vectors):
                fh.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")


# ---------------------------------------------------------------------------
# IDF


@dataclass(frozen=True)
class IdfTable:
    idf: Dict[str, float]
    n_docs: int

    @classmethod
    def fit(cls, documents: Iterable[Sequence[str]]) -> "IdfTable":
        df: Counter = Counter()
        n = 0
        for doc in documents:
            n += 1
            df.update(set(doc))
        idf = {w: math.log((n + 1) / (c + 1)) + 1.0 for w, c in df.items()}
        return cls(idf=idf, n_docs=n)

    @property
    def default_idf(self) -> float:
        return math.log(self.n_docs + 1) + 1.0

    def __getitem__(self, word: str) -> float:
        return self.idf.get(word, self.default_idf)

    def to_json(self) -> dict:
        return {"n_docs": self.n_docs, "idf": dict(sorted(self.idf.items()))}

    @classmethod
    def from_json(cls, obj: dict) -> "IdfTable":
        return cls(idf={k: float(v) for k, v in obj["idf"].items()}, n_docs=int(obj["n_docs"]))


def sentence_vector(tokens: Sequence[str], emb: EmbeddingTable, idf: IdfTable) -> Tuple[np.ndarray, bool]:
    """IDF-weighted mean of the in-vocabulary token vectors.

    Returns ``(vector, all_oov)``; when no token has a vector the zero vector
    is returned with ``all_oov=True``.
    """
    total = np.zeros(emb.dim)
    weight = 0.0
    for tok in tokens:
        v = emb.get(tok)
        if v is None:
            continue
        w = idf[tok]
        total += w * v
        weight += w
    if weight == 0.0:
        return total, True
    return total / weight, False


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v / (nu * nv))


# ---------------------------------------------------------------------------
# n-gram LM


class NgramModel:
    """Add-alpha smoothed n-gram model (n = 2 or 3).

    The vocabulary always contains ``</s>`` and ``<unk>``; unseen words are
    scored as ``<unk>``, so every conditional distribution is proper.
    """

    def __init__(self, order: int, alpha: float, vocab: Iterable[str], counts: Dict[Tuple[str, ...], int]):
        if order not in (2, 3):
            raise ValueError("order must be 2 or 3")
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.order = order
        self.alpha = float(alpha)
        self.vocab: FrozenSet[str] = frozenset(vocab) | {EOS, UNK}
        self.counts = dict(counts)
        self.context_counts: Counter = Counter()
        for gram, c in self.counts.items():
            self.context_counts[gram[:-1]] += c

    @classmethod
    def fit(cls, sentences: Iterable[Sequence[str]], order: int = 2, alpha: float = 0.1) -> "NgramModel":
        sentences = [list(s) for s in sentences]
        vocab = {w for s in sentences for w in s}
        counts: Counter = Counter()
        for s in sentences:
            padded = [BOS] * (order - 1) + s + [EOS]
            for i in range(order - 1, len(padded)):
                counts[tuple(padded[i - order + 1:i + 1])] += 1
        return cls(order, alpha, vocab, counts)

    def _norm(self, w: str) -> str:
        return w if w in self.vocab or w == BOS else UNK

    def prob(self, word: str, context: Sequence[str]) -> float:
        ctx = tuple(self._norm(w) for w in context[-(self.order - 1):])
        w = self._norm(word)
        num = self.counts.get(ctx + (w,), 0) + self.alpha
        den = self.context_counts.get(ctx, 0) + self.alpha * len(self.vocab)
        return num / den

    def logprob(self, word: str, context: Sequence[str]) -> float:
        return math.log(self.prob(word, context))

    def context_score(self, tokens: Sequence[str], position: int, candidate: str) -> float:
        """Sum of log-probabilities of every n-gram window touching ``position``
        once ``candidate`` is substituted there."""
        if not 0 <= position < len(tokens):
            raise IndexError("position out of range")
        n = self.order
        padded = [BOS] * (n - 1) + list(tokens) + [EOS]
        p = position + n - 1
        padded[p] = candidate
        total = 0.0
        # a window ending at index e covers padded[e-n+1 .. e]
        for e in range(p, min(p + n, len(padded))):
            total += self.logprob(padded[e], padded[e - n + 1:e])
        return total

    def to_json(self) -> dict:
        return {
            "order": self.order,
            "alpha": self.alpha,
            "vocab": sorted(self.vocab),
            "counts": [[list(g), c] for g, c in sorted(self.counts.items())],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NgramModel":
        counts = {tuple(g): int(c) for g, c in obj["counts"]}
        return cls(int(obj["order"]), float(obj["alpha"]), obj["vocab"], counts)


# ---------------------------------------------------------------------------
# POS lexicon

_SUFFIX_RULES: Tuple[Tuple[str, str], ...] = (
    ("ly", "ADV"),
    ("ness", "NOUN"),
    ("ment", "NOUN"),
    ("tion", "NOUN"),
    ("sion", "NOUN"),
    ("ity", "NOUN"),
    ("ous", "ADJ"),
    ("ful", "ADJ"),
    ("ive", "ADJ"),
    ("able", "ADJ"),
    ("ible", "ADJ"),
    ("less", "ADJ"),
    ("ing", "VERB"),
    ("ed", "VERB"),
    ("ize", "VERB"),
    ("ise", "VERB"),
)


@dataclass(frozen=True)
class PosLexicon:
    tags: Dict[str, FrozenSet[str]] = field(default_factory=dict)
    suffix_rules: Tuple[Tuple[str, str], ...] = _SUFFIX_RULES

    def lookup(self, word: str) -> FrozenSet[str]:
        if word in self.tags:
            return self.tags[word]
        for suffix, tag in self.suffix_rules:
            if len(word) > len(suffix) + 1 and word.endswith(suffix):
                return frozenset({tag})
        return frozenset({"OTHER"})

    def __contains__(self, word: str) -> bool:
        return word in self.tags

    @classmethod
    def load(cls, path) -> "PosLexicon":
        tags = {}
        with open(path, encoding="utf8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    word, raw = line.split("\t")
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: expected 'word<TAB>tags'") from exc
                ts = frozenset(t for t in raw.split(",") if t)
                unknown = ts - set(POS_TAGS)
                if unknown or not ts:
                    raise ValueError(f"{path}:{lineno}: bad tags {raw!r}")
                tags[word] = ts
        return cls(tags)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf8", newline="\n") as fh:
            for w in sorted(self.tags):
                fh.write(f"{w}\t{','.join(sorted(self.tags[w]))}\n")


def pos_compatible(word_a: str, word_b: str, lex: PosLexicon) -> bool:
    return bool(lex.lookup(word_a) & lex.lookup(word_b))


# ---------------------------------------------------------------------------
# Keyboard

_QWERTY_ROWS = ("qwertyuiop", "asdfghjkl", "zxcvbnm")


class KeyboardLayout:
    """Symmetric QWERTY adjacency: same-row neighbours plus the two keys
    touching from the row above/below (staggered layout)."""

    def __init__(self, rows: Sequence[str] = _QWERTY_ROWS):
        adj: Dict[str, set] = {c: set() for row in rows for c in row}

        def link(a, b):
            adj[a].add(b)
            adj[b].add(a)

        for r, row in enumerate(rows):
            for i, c in enumerate(row):
                if i + 1 < len(row):
                    link(c, row[i + 1])
                if r + 1 < len(rows):
                    below = rows[r + 1]
                    for j in (i - 1, i):
                        if 0 <= j < len(below):
                            link(c, below[j])
        self.adjacent: Dict[str, FrozenSet[str]] = {c: frozenset(s) for c, s in adj.items()}

    def neighbors(self, ch: str) -> FrozenSet[str]:
        return self.adjacent.get(ch.lower(), frozenset())


# ---------------------------------------------------------------------------
# Bundle


@dataclass(frozen=True)
class Resources:
    """Everything the attacks and the feature extractor read from."""

    embeddings: EmbeddingTable
    idf: IdfTable
    ngram: NgramModel
    pos: PosLexicon
    keyboard: KeyboardLayout = field(default_factory=KeyboardLayout)
    anomaly_floor: Optional[float] = None

    def known(self, word: str) -> bool:
        return word in self.pos or word in self.embeddings

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.embeddings.save(d / "embeddings.txt")
        self.pos.save(d / "pos.tsv")
        (d / "idf.json").write_text(json.dumps(self.idf.to_json()), encoding="utf8")
        (d / "ngram.json").write_text(json.dumps(self.ngram.to_json()), encoding="utf8")
        (d / "meta.json").write_text(json.dumps({"anomaly_floor": self.anomaly_floor}), encoding="utf8")

    @classmethod
    def load(cls, directory) -> "Resources":
        d = Path(directory)
        meta = json.loads((d / "meta.json").read_text(encoding="utf8")) if (d / "meta.json").exists() else {}
        return cls(
            embeddings=EmbeddingTable.load(d / "embeddings.txt"),
            idf=IdfTable.from_json(json.loads((d / "idf.json").read_text(encoding="utf8"))),
            ngram=NgramModel.from_json(json.loads((d / "ngram.json").read_text(encoding="utf8"))),
            pos=PosLexicon.load(d / "pos.tsv"),
            anomaly_floor=meta.get("anomaly_floor"),
        )


def calibrate_anomaly_floor(model: NgramModel, sentences: Iterable[Sequence[str]], quantile: float = 0.05) -> float:
    """Low quantile of the bigram log-probabilities seen on fluent text."""
    scores = []
    for s in sentences:
        for i in range(1, len(s)):
            scores.append(model.logprob(s[i], s[max(0, i - model.order + 1):i]))
    if not scores:
        raise ValueError("no bigrams to calibrate on")
    return float(np.quantile(scores, quantile))
