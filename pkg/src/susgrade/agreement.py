"""Likert score statistics and ordinal inter-annotator disagreement.

Disagreement of one item is the mean absolute deviation of its labels from
their (lower) median; a group's level is the mean over its items. With three
annotators on a five-point scale the per-item value is one of
0, 1/3, 2/3, 1, 4/3.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .corpus import SOURCES, ScoredItem

SCALE = (1, 2, 3, 4, 5)
SPLITS = ("symmetry", "one_vs_other")
OVERALL = "overall"
ADVERSARIAL = "adversarial"


def lower_median(labels: Sequence[int]) -> int:
    s = sorted(labels)
    return s[(len(s) - 1) // 2]


def disagreement_numerator(labels: Sequence[int]) -> int:
    """Sum of absolute deviations from the lower median (the C*delta_i value)."""
    if len(labels) < 2:
        raise ValueError("disagreement needs at least 2 labels")
    m = lower_median(labels)
    return sum(abs(m - k) for k in labels)


def item_disagreement(labels: Sequence[int]) -> Fraction:
    return Fraction(disagreement_numerator(labels), len(labels))


@dataclass(frozen=True)
class DisagreementReport:
    group: str
    per_item: Dict[str, int]
    n_annotators: Dict[str, int]

    @property
    def n_items(self) -> int:
        return len(self.per_item)

    @property
    def item_deltas(self) -> Dict[str, Fraction]:
        return {i: Fraction(c, self.n_annotators[i]) for i, c in self.per_item.items()}

    @property
    def delta_exact(self) -> Fraction:
        return sum(self.item_deltas.values(), Fraction(0)) / self.n_items

    @property
    def delta(self) -> float:
        return float(self.delta_exact)

    def frequencies(self, max_value: Optional[int] = None) -> Tuple[int, ...]:
        """Counts of each numerator value 0..max_value (default: max seen, at least 4)."""
        c = Counter(self.per_item.values())
        top = max_value if max_value is not None else max([4, *c])
        return tuple(c.get(v, 0) for v in range(top + 1))


def average_disagreement(items: Mapping[str, Sequence[int]], group: str = OVERALL) -> DisagreementReport:
    if not items:
        raise ValueError(f"group {group!r} has no items")
    per_item = {}
    for item_id, labels in items.items():
        try:
            per_item[item_id] = disagreement_numerator(labels)
        except ValueError:
            raise ValueError(f"item {item_id}: disagreement needs at least 2 labels") from None
    return DisagreementReport(group, per_item, {i: len(ls) for i, ls in items.items()})


Grouping = Union[Mapping[str, str], Callable[[str], str]]


def _group_fn(grouping: Optional[Grouping]) -> Callable[[str], str]:
    if grouping is None:
        return lambda _: OVERALL
    if callable(grouping):
        return grouping
    return grouping.__getitem__


def _ordered_groups(names: Iterable[str]) -> List[str]:
    names = set(names)
    known = [s for s in SOURCES if s in names]
    return known + sorted(names - set(known))


def disagreement_by_group(items: Mapping[str, Sequence[int]], grouping: Grouping) -> Dict[str, DisagreementReport]:
    """Per-group reports plus an ``overall`` report over every item."""
    fn = _group_fn(grouping)
    buckets: Dict[str, Dict[str, Sequence[int]]] = {}
    for item_id, labels in items.items():
        buckets.setdefault(fn(item_id), {})[item_id] = labels
    out = {OVERALL: average_disagreement(items, OVERALL)}
    out.update((g, average_disagreement(buckets[g], g)) for g in _ordered_groups(buckets) if g != OVERALL)
    return out


@dataclass(frozen=True)
class LikertHistogram:
    counts: Dict[str, Tuple[int, int, int, int, int]]

    def mean(self, group: str) -> Optional[float]:
        c = self.counts[group]
        n = sum(c)
        if n == 0:
            return None
        return float(Fraction(sum(s * k for s, k in zip(SCALE, c)), n))

    @property
    def means(self) -> Dict[str, Optional[float]]:
        return {g: self.mean(g) for g in self.counts}

    @classmethod
    def from_counts(cls, counts: Mapping[str, Sequence[int]]) -> "LikertHistogram":
        """Adds an ``overall`` total and, when attack sources are present, an
        ``adversarial`` total over them; totals come first."""
        groups = {g: tuple(int(x) for x in c) for g, c in counts.items()}
        for g, c in groups.items():
            if len(c) != 5 or min(c) < 0:
                raise ValueError(f"group {g}: need 5 non-negative counts")
        base = {g: c for g, c in groups.items() if g not in (OVERALL, ADVERSARIAL)}

        def total(cs):
            return tuple(sum(c[i] for c in cs) for i in range(5))

        out = {OVERALL: groups.get(OVERALL) or total(base.values())}
        if "original" in base:
            out["original"] = base["original"]
        attacks = [base[s] for s in SOURCES[1:] if s in base]
        if ADVERSARIAL in groups or attacks:
            out[ADVERSARIAL] = groups.get(ADVERSARIAL) or total(attacks)
        out.update(base)
        return cls(out)


def histogram_and_means(scored: Iterable[ScoredItem], grouping: Optional[Grouping] = None) -> LikertHistogram:
    """Per-group score counts; non-integer scores (means) are rounded half up."""
    fn = _group_fn(grouping)
    tallies: Dict[str, List[int]] = {}
    for item in scored:
        s = int(item.score + Fraction(1, 2)) if item.score.denominator != 1 else int(item.score)
        if s not in SCALE:
            raise ValueError(f"item {item.item_id}: score {item.score} outside 1..5")
        tallies.setdefault(fn(item.item_id), [0] * 5)[s - 1] += 1
    return LikertHistogram.from_counts({g: tallies[g] for g in _ordered_groups(tallies)})


@dataclass(frozen=True)
class BinarySplitReport:
    split: str
    proportions: Dict[str, Tuple[Optional[float], Optional[float]]]


def binarize(scored: Union[LikertHistogram, Iterable[ScoredItem]], split: str,
             grouping: Optional[Grouping] = None) -> BinarySplitReport:
    """(human, computer) proportions per group.

    symmetry: {1,2} vs {4,5}, score 3 dropped from the numerators but kept in
    the denominator. one_vs_other: {1} vs {2..5}.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    hist = scored if isinstance(scored, LikertHistogram) else histogram_and_means(scored, grouping)
    out = {}
    for g, c in hist.counts.items():
        n = sum(c)
        if n == 0:
            out[g] = (None, None)
        elif split == "symmetry":
            out[g] = ((c[0] + c[1]) / n, (c[3] + c[4]) / n)
        else:
            out[g] = (c[0] / n, sum(c[1:]) / n)
    return BinarySplitReport(split, out)


# -- CSV exports mirroring the published table layouts --------------------------


def write_histogram_csv(path, hist: LikertHistogram) -> None:
    groups = list(hist.counts)
    with open(path, "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["score", *groups])
        for i, s in enumerate(SCALE):
            w.writerow([s, *(hist.counts[g][i] for g in groups)])
        w.writerow(["mean", *(_fmt(hist.mean(g)) for g in groups)])


def write_disagreement_csv(path, reports: Mapping[str, DisagreementReport]) -> None:
    groups = list(reports)
    top = max(len(r.frequencies()) - 1 for r in reports.values())
    with open(path, "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["c_delta", *groups])
        for v in range(top + 1):
            w.writerow([v, *(reports[g].frequencies(top)[v] for g in groups)])
        w.writerow(["delta", *(_fmt(reports[g].delta) for g in groups)])


def write_binary_csv(path, reports: Sequence[BinarySplitReport]) -> None:
    with open(path, "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "group", "human", "computer"])
        for rep in reports:
            for g, (h, c) in rep.proportions.items():
                w.writerow([rep.split, g, _fmt(h), _fmt(c)])


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.2f}"
