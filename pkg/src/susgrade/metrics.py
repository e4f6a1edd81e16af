"""Sentence-level overlap metrics, correlation statistics and an exact
binomial test.

Overlap metrics take token lists (use ``lexres.tokenize``); Levenshtein works
on any pair of sequences, usually raw strings.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import rankdata

from .lexres import EmbeddingTable, tokenize

log = logging.getLogger(__name__)

METRIC_NAMES = ("bleu", "meteor_lite", "rouge1", "rouge2", "rouge3", "rougeL", "levenshtein")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# -- BLEU ----------------------------------------------------------------------


def bleu(reference: Sequence[str], candidate: Sequence[str], max_n: int = 4) -> float:
    """Sentence BLEU: geometric mean of clipped n-gram precisions times the
    brevity penalty. Orders 2..max_n with no clipped match get add-one
    smoothing on numerator and denominator; a unigram order without matches
    makes the score 0."""
    if not candidate:
        log.warning("bleu: empty candidate, returning 0")
        return 0.0
    if not reference:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        ref = _ngrams(reference, n)
        match = sum(min(c, ref[g]) for g, c in cand.items())
        total = sum(cand.values())
        if match == 0:
            if n == 1:
                return 0.0
            match, total = 1, total + 1
        log_p += math.log(match / total)
    c, r = len(candidate), len(reference)
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    return bp * math.exp(log_p / max_n)


# -- ROUGE ---------------------------------------------------------------------


def _f1(overlap: int, n_ref: int, n_cand: int) -> float:
    if overlap == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge(reference: Sequence[str], candidate: Sequence[str], variant: Union[int, str] = 1) -> float:
    """ROUGE-N (clipped n-gram overlap) or ROUGE-L (LCS) F1.

    When neither side is long enough to hold an n-gram the score is 1 for
    identical sequences and 0 otherwise.
    """
    if not reference or not candidate:
        return 0.0
    if str(variant).upper() == "L":
        return _f1(lcs_length(reference, candidate), len(reference), len(candidate))
    n = int(variant)
    if n < 1:
        raise ValueError("rouge order must be >= 1")
    ref, cand = _ngrams(reference, n), _ngrams(candidate, n)
    if not ref and not cand:
        return 1.0 if list(reference) == list(candidate) else 0.0
    if not ref or not cand:
        return 0.0
    overlap = sum(min(c, ref[g]) for g, c in cand.items())
    return _f1(overlap, sum(ref.values()), sum(cand.values()))


# -- METEOR (exact / stem / embedding-synonym stages) ---------------------------

_SUFFIXES = ("ingly", "edly", "ings", "ing", "ies", "ied", "ed", "es", "ly", "s")


def light_stem(word: str) -> str:
    for suf in _SUFFIXES:
        if word.endswith(suf) and len(word) - len(suf) >= 3:
            stem = word[: -len(suf)]
            if suf in ("ies", "ied"):
                stem += "y"
            return stem
    return word


SynonymSource = Union[EmbeddingTable, Callable[[str, str], bool], None]


def _synonym_fn(source: SynonymSource, min_cos: float) -> Optional[Callable[[str, str], bool]]:
    if source is None:
        return None
    if isinstance(source, EmbeddingTable):
        def fn(a, b):
            c = source.cosine(a, b)
            return c is not None and c >= min_cos
        return fn
    return source


def meteor_alignment(reference: Sequence[str], candidate: Sequence[str], synonyms: SynonymSource = None,
                     min_cos: float = 0.7) -> List[Tuple[int, int]]:
    """One-to-one (candidate, reference) index pairs built in stages
    exact -> stem -> synonym. Within a stage candidates are scanned left to
    right and prefer the reference slot right after the previous alignment,
    falling back to the leftmost free slot."""
    syn = _synonym_fn(synonyms, min_cos)
    stages: List[Callable[[str, str], bool]] = [
        lambda a, b: a == b,
        lambda a, b: light_stem(a) == light_stem(b),
    ]
    if syn is not None:
        stages.append(syn)
    cand_free = set(range(len(candidate)))
    ref_free = set(range(len(reference)))
    aligned: Dict[int, int] = {}
    for match in stages:
        for i in range(len(candidate)):
            if i not in cand_free:
                continue
            options = [j for j in sorted(ref_free) if match(candidate[i], reference[j])]
            if not options:
                continue
            prev = max((k for k in aligned if k < i), default=None)
            want = aligned[prev] + 1 if prev is not None else None
            j = want if want in options else options[0]
            aligned[i] = j
            cand_free.discard(i)
            ref_free.discard(j)
    return sorted(aligned.items())


def count_chunks(alignment: Sequence[Tuple[int, int]]) -> int:
    """Runs of alignments contiguous and in order on both sides."""
    chunks = 0
    prev = None
    for i, j in sorted(alignment):
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_from_alignment(n_ref: int, n_cand: int, alignment, alpha=0.9, beta=3.0, gamma=0.5) -> float:
    m = len(alignment)
    if m == 0 or n_ref == 0 or n_cand == 0:
        return 0.0
    p, r = m / n_cand, m / n_ref
    fmean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (count_chunks(alignment) / m) ** beta
    return fmean * (1 - penalty)


def meteor_lite(reference: Sequence[str], candidate: Sequence[str], synonyms: SynonymSource = None,
                alpha: float = 0.9, beta: float = 3.0, gamma: float = 0.5, min_cos: float = 0.7) -> float:
    al = meteor_alignment(reference, candidate, synonyms, min_cos)
    return meteor_from_alignment(len(reference), len(candidate), al, alpha, beta, gamma)


# -- edit distance -------------------------------------------------------------


def levenshtein(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class OverlapScores:
    bleu: float
    meteor_lite: float
    rouge1: float
    rouge2: float
    rouge3: float
    rougeL: float
    levenshtein: int

    def as_dict(self) -> Dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def overlap_scores(original: str, perturbed: str, synonyms: SynonymSource = None) -> OverlapScores:
    ref, cand = tokenize(original), tokenize(perturbed)
    return OverlapScores(
        bleu=bleu(ref, cand),
        meteor_lite=meteor_lite(ref, cand, synonyms),
        rouge1=rouge(ref, cand, 1),
        rouge2=rouge(ref, cand, 2),
        rouge3=rouge(ref, cand, 3),
        rougeL=rouge(ref, cand, "L"),
        levenshtein=levenshtein(original, perturbed),
    )


# -- correlation / error -------------------------------------------------------


@dataclass(frozen=True)
class CorrelationReport:
    """``None`` marks a coefficient that is undefined (a constant input)."""

    pearson_r: Optional[float]
    spearman_rho: Optional[float]
    rmse: float
    n: int
    undefined: Tuple[str, ...] = field(default=())


def _pearson(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(xc @ xc)), math.sqrt(float(yc @ yc))
    if sx == 0 or sy == 0 or sx < 1e-12 * max(1.0, float(np.abs(x).max())) or sy < 1e-12 * max(1.0, float(np.abs(y).max())):
        return None
    # one square root of the product keeps identical rank vectors at exactly 1
    return float(np.clip((xc @ yc) / math.sqrt(float(xc @ xc) * float(yc @ yc)), -1.0, 1.0))


def pearson(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    return _pearson(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    return _pearson(rankdata(x, method="average"), rankdata(y, method="average"))


def correlations(predicted: Sequence[float], observed: Sequence[float]) -> CorrelationReport:
    p = np.asarray(predicted, dtype=float)
    o = np.asarray(observed, dtype=float)
    if p.shape != o.shape or p.ndim != 1:
        raise ValueError("predicted and observed must be 1-d and equally long")
    if len(p) < 3:
        raise ValueError("need at least 3 points")
    if not (np.isfinite(p).all() and np.isfinite(o).all()):
        raise ValueError("non-finite values")
    r = _pearson(p, o)
    rho = _pearson(rankdata(p), rankdata(o))
    undefined = tuple(name for name, v in (("pearson_r", r), ("spearman_rho", rho)) if v is None)
    rmse = math.sqrt(float(np.mean((p - o) ** 2)))
    return CorrelationReport(r, rho, rmse, len(p), undefined)


# -- exact binomial test -------------------------------------------------------


def binomial_two_sided(successes: int, trials: int, p0: float = 0.5) -> float:
    """Two-sided exact p-value: total probability of outcomes no more likely
    than the observed one, summed in rational arithmetic."""
    if not 0 <= successes <= trials:
        raise ValueError("need 0 <= successes <= trials")
    p = Fraction(str(p0)) if not isinstance(p0, Fraction) else p0
    if not 0 <= p <= 1:
        raise ValueError("p0 must lie in [0, 1]")
    q = 1 - p
    probs = [math.comb(trials, k) * p ** k * q ** (trials - k) for k in range(trials + 1)]
    observed = probs[successes]
    total = sum((pk for pk in probs if pk <= observed), Fraction(0))
    return float(min(total, Fraction(1)))


# -- Table-9 style summary -----------------------------------------------------


@dataclass(frozen=True)
class MetricRow:
    metric: str
    group_means: Dict[str, float]
    overall: float
    r: Optional[float]


def metric_suspicion_correlation(pairs: Sequence[Tuple[str, str, str]], scores: Sequence[float],
                                 synonyms: SynonymSource = None,
                                 metrics: Iterable[str] = METRIC_NAMES) -> List[MetricRow]:
    """Per-metric mean by attack method, overall mean and Pearson r against
    suspicion. ``pairs`` are ``(original, adversarial, method)``."""
    if len(pairs) != len(scores):
        raise ValueError("pairs and scores differ in length")
    if not pairs:
        return []
    per_pair = [overlap_scores(o, a, synonyms).as_dict() for o, a, _ in pairs]
    methods = []
    for _, _, m in pairs:
        if m not in methods:
            methods.append(m)
    rows = []
    for name in metrics:
        vals = np.array([d[name] for d in per_pair], dtype=float)
        means = {m: float(np.mean([v for v, (_, _, mm) in zip(vals, pairs) if mm == m])) for m in methods}
        r = pearson(vals, scores) if len(vals) >= 2 else None
        rows.append(MetricRow(name, means, float(vals.mean()), r))
    return rows


def write_metric_table(path, rows: Sequence[MetricRow]) -> None:
    methods = list(rows[0].group_means) if rows else []
    with open(path, "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", *methods, "overall", "r"])
        for row in rows:
            w.writerow([row.metric, *(f"{row.group_means[m]:.3f}" for m in methods), f"{row.overall:.3f}",
                        "" if row.r is None else f"{row.r:.3f}"])
