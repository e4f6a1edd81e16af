"""Rebuild a Likert annotation file from published aggregate tables.

The released per-judgement data are not bundled. This module synthesises a
file whose labels are consistent with the published per-source score
histograms and per-source disagreement frequency tables, and whose texts come
from the toy review generator. Only the raw count tables are used as input;
means, binarised proportions and disagreement levels are left to be
recomputed from the file.

Layout: 603 groups of (original + four variants). 63 groups form the
triple-annotated common set, 540 are singly annotated; 15 common-set groups
also carry a second, three-annotator "non_mturk" condition.
"""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import numpy as np

from .corpus import SOURCES, AnnotationRecord, SentenceRecord
from .lexres import KeyboardLayout
from .toy import CLUSTERS, ToyGenerator

# score histograms per source, scores 1..5 (each row sums to 603)
HISTOGRAMS: Dict[str, Tuple[int, ...]] = {
    "original": (234, 227, 39, 83, 20),
    "pruthi": (147, 217, 58, 124, 57),
    "alzantot": (203, 225, 45, 91, 39),
    "textfooler": (210, 209, 56, 88, 40),
    "bae": (150, 184, 56, 135, 78),
}

# frequency of the unnormalised disagreement 0..4 on the common set, per source
COMMON_DISAGREEMENT: Dict[str, Tuple[int, ...]] = {
    "original": (13, 24, 9, 15, 2),
    "pruthi": (7, 20, 12, 19, 5),
    "alzantot": (11, 24, 4, 17, 7),
    "textfooler": (6, 26, 9, 20, 2),
    "bae": (6, 10, 23, 17, 7),
}

# second annotator pool: 15 originals and 60 adversarial items
NON_MTURK_DISAGREEMENT = {
    "original": (1, 4, 7, 2, 1),
    "adversarial": (3, 16, 24, 14, 3),
}

N_GROUPS = 603
N_COMMON = 63
N_NON_MTURK_GROUPS = 15


def _largest_remainder(weights: Sequence[int], total: int) -> List[int]:
    w = np.asarray(weights, dtype=float)
    raw = w / w.sum() * total
    out = np.floor(raw).astype(int)
    rem = raw - out
    for i in np.argsort(-rem, kind="stable")[: total - out.sum()]:
        out[i] += 1
    return out.tolist()


def _triples(freqs: Sequence[int], medians: Sequence[int], rng: np.random.Generator) -> List[Tuple[int, int, int]]:
    """Label triples whose range equals the disagreement value and whose
    median is prescribed (for three labels the unnormalised disagreement
    about the median equals max - min)."""
    cds = [c for c, f in enumerate(freqs) for _ in range(f)]
    meds = list(medians)
    rng.shuffle(cds)
    out = []
    for c, m in zip(cds, meds):
        lows = [a for a in range(max(1, m - c), min(m, 5 - c) + 1)]
        a = int(rng.choice(lows))
        t = [a, m, a + c]
        rng.shuffle(t)
        out.append(tuple(int(x) for x in t))
    return out


class _Perturber:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.kb = KeyboardLayout()
        self.syn = {w: [v for v in ws if v != w] for _, _, ws in CLUSTERS for w in ws}

    def char_edit(self, word: str) -> str:
        r = self.rng
        kind = int(r.integers(4)) if len(word) > 2 else 2
        i = int(r.integers(len(word)))
        if kind == 0 and len(word) > 1:
            i = min(i, len(word) - 2)
            return word[:i] + word[i + 1] + word[i] + word[i + 2:]
        if kind == 1:
            return word[:i] + word[i + 1:]
        if kind == 2:
            return word[:i] + "abcdefghijklmnopqrstuvwxyz"[int(r.integers(26))] + word[i:]
        nb = sorted(self.kb.neighbors(word[i]))
        return word[:i] + (nb[int(r.integers(len(nb)))] if nb else word[i]) + word[i + 1:]

    def variant(self, text: str, method: str) -> Tuple[str, int]:
        words = text.split()
        budget = {"pruthi": 2, "alzantot": 4, "textfooler": 3, "bae": 2}[method]
        n_edit = 1 + int(self.rng.integers(budget))
        if method == "pruthi":
            positions = [i for i, w in enumerate(words) if len(w) > 3]
        else:
            positions = [i for i, w in enumerate(words) if self.syn.get(w)]
        if not positions:
            positions = list(range(len(words)))
        chosen = self.rng.choice(positions, size=min(n_edit, len(positions)), replace=False)
        for i in sorted(int(c) for c in chosen):
            w = words[i]
            if method == "pruthi" or not self.syn.get(w):
                new = self.char_edit(w)
            else:
                new = self.syn[w][int(self.rng.integers(len(self.syn[w])))]
            words[i] = new
        out = " ".join(words)
        return out, sum(a != b for a, b in zip(out.split(), text.split()))


def reconstruct(seed: int = 2024) -> Tuple[List[SentenceRecord], List[AnnotationRecord]]:
    rng = np.random.default_rng(seed)
    gen = ToyGenerator(seed)
    pert = _Perturber(rng)

    records: List[SentenceRecord] = []
    severity: Dict[str, float] = {}
    groups: List[Dict[str, str]] = []
    for g in range(N_GROUPS):
        polarity = int(rng.integers(2))
        text = gen.sentence(polarity)
        oid = f"g{g:03d}-original"
        rec = SentenceRecord(oid, text, "original", None, "positive" if polarity else "negative")
        records.append(rec)
        severity[oid] = 0.0
        ids = {"original": oid}
        for method in SOURCES[1:]:
            vtext, n_changed = pert.variant(text, method)
            if vtext == text:
                vtext, n_changed = pert.variant(text, "pruthi")
            vid = f"g{g:03d}-{method}"
            records.append(SentenceRecord(vid, vtext, method, oid, rec.gold_label))
            severity[vid] = n_changed / max(1, len(text.split()))
            ids[method] = vid
        groups.append(ids)

    order = rng.permutation(N_GROUPS)
    common = sorted(int(i) for i in order[:N_COMMON])
    singles = sorted(int(i) for i in order[N_COMMON:])
    non_mturk = sorted(int(i) for i in rng.choice(common, size=N_NON_MTURK_GROUPS, replace=False))

    annotations: List[AnnotationRecord] = []
    by_item: Dict[str, List[AnnotationRecord]] = {}

    def add(item_id, annotator, label, condition):
        a = AnnotationRecord(item_id, annotator, int(label), condition)
        by_item.setdefault(item_id, []).append(a)

    for source in SOURCES:
        hist = HISTOGRAMS[source]
        medians_per_score = _largest_remainder(hist, N_COMMON)
        medians = [s + 1 for s, n in enumerate(medians_per_score) for _ in range(n)]
        rng.shuffle(medians)
        triples = _triples(COMMON_DISAGREEMENT[source], medians, rng)
        for g, t in zip(common, triples):
            annotators = rng.choice(60, size=3, replace=False)
            for a, label in zip(annotators, t):
                add(groups[g][source], f"cw{int(a):02d}", label, "main")

        remaining = [h - m for h, m in zip(hist, medians_per_score)]
        assert min(remaining) >= 0 and sum(remaining) == len(singles)
        pool = [s + 1 for s, n in enumerate(remaining) for _ in range(n)]
        # more heavily perturbed variants tend to receive higher scores
        items = [groups[g][source] for g in singles]
        keys = np.array([severity[i] for i in items]) + rng.normal(scale=0.15, size=len(items))
        for item, label in zip((items[i] for i in np.argsort(keys, kind="stable")), pool):
            add(item, f"sw{int(rng.integers(400)):03d}", label, "main")

    nm_orig = _triples(NON_MTURK_DISAGREEMENT["original"], rng.integers(1, 4, size=15), rng)
    nm_adv = _triples(NON_MTURK_DISAGREEMENT["adversarial"], rng.integers(1, 5, size=60), rng)
    adv_iter = iter(nm_adv)
    for k, g in enumerate(non_mturk):
        for source in SOURCES:
            t = nm_orig[k] if source == "original" else next(adv_iter)
            for j, label in enumerate(t):
                add(groups[g][source], f"nm{j + 1}", label, "non_mturk")

    for rec in records:
        annotations.extend(by_item.get(rec.id, []))
    return records, annotations
