"""Loading, validating and splitting Likert suspicion annotations.

The canonical annotation file is UTF-8 TSV with a header row and one row per
judgement::

    item_id  text  source  original_id  label  annotator_id  condition

Sentence fields repeat on every judgement row of the same item and must agree.
The Morris binary-vote file uses ``item_id text source votes_computer
votes_total``.
"""

from __future__ import annotations

import csv
import json
import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

log = logging.getLogger(__name__)

SOURCES = ("original", "pruthi", "alzantot", "textfooler", "bae")
CONDITIONS = ("main", "prevalence_informed", "non_mturk")
AGGREGATIONS = ("single", "median", "mean")
GOLD_LABELS = ("positive", "negative")

ANNOTATION_COLUMNS = ("item_id", "text", "source", "original_id", "label", "annotator_id", "condition")
MORRIS_COLUMNS = ("item_id", "text", "source", "votes_computer", "votes_total")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class SentenceRecord:
    id: str
    text: str
    source: str
    original_id: Optional[str] = None
    gold_label: Optional[str] = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise CorpusError(f"unknown source {self.source!r}")
        if not " ".join(self.text.split()):
            raise CorpusError(f"item {self.id}: empty text")
        if (self.source == "original") != (self.original_id is None):
            raise CorpusError(f"item {self.id}: original_id must be empty exactly for originals")
        if self.gold_label is not None and self.gold_label not in GOLD_LABELS:
            raise CorpusError(f"item {self.id}: bad gold label {self.gold_label!r}")


@dataclass(frozen=True)
class AnnotationRecord:
    item_id: str
    annotator_id: str
    label: int
    condition: str = "main"

    def __post_init__(self):
        if self.label not in (1, 2, 3, 4, 5):
            raise CorpusError(f"label {self.label!r} outside 1..5")
        if self.condition not in CONDITIONS:
            raise CorpusError(f"unknown condition {self.condition!r}")


@dataclass(frozen=True)
class ScoredItem:
    item_id: str
    score: Fraction
    n_annotations: int
    aggregation: str


@dataclass(frozen=True)
class MorrisItem:
    item_id: str
    votes_computer: int
    votes_total: int

    def __post_init__(self):
        if self.votes_total <= 0 or not 0 <= self.votes_computer <= self.votes_total:
            raise CorpusError(f"item {self.item_id}: bad vote counts")

    @property
    def score(self) -> Fraction:
        return Fraction(self.votes_computer, self.votes_total)


@dataclass(frozen=True)
class DatasetSplit:
    train: Tuple[str, ...]
    dev: Tuple[str, ...]
    test: Tuple[str, ...]
    seed: int

    def to_json(self) -> dict:
        return {"seed": self.seed, "train": list(self.train), "dev": list(self.dev), "test": list(self.test)}

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetSplit":
        return cls(tuple(obj["train"]), tuple(obj["dev"]), tuple(obj["test"]), int(obj["seed"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1), encoding="utf8")

    @classmethod
    def load(cls, path) -> "DatasetSplit":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf8")))


@dataclass
class AnnotationSet:
    """Result of loading an annotation file; unpacks as ``records, annotations``."""

    records: List[SentenceRecord]
    annotations: List[AnnotationRecord]
    rejected: List[Tuple[int, str]] = field(default_factory=list)

    def __iter__(self) -> Iterator:
        return iter((self.records, self.annotations))

    def source_counts(self) -> Dict[str, int]:
        return source_counts(self.records)


def source_counts(records: Iterable[SentenceRecord]) -> Dict[str, int]:
    c = Counter(r.source for r in records)
    return {s: c.get(s, 0) for s in SOURCES}


def _read_tsv(path, columns: Sequence[str]) -> Iterator[Tuple[int, Dict[str, str]]]:
    with open(path, encoding="utf8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            return
        if tuple(header) != tuple(columns):
            raise CorpusError(f"{path}: row 1: expected header {list(columns)}, got {header}")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise CorpusError(f"{path}: row {rowno}: expected {len(columns)} columns, got {len(row)}")
            yield rowno, dict(zip(columns, row))


def load_annotations(path, condition: Optional[str] = "main") -> AnnotationSet:
    """Load the judgements of one condition (``None`` keeps every condition).

    Structurally malformed rows abort the load with the offending row number;
    rows whose Likert label falls outside 1..5 are dropped and listed in
    ``rejected``.
    """
    if condition is not None and condition not in CONDITIONS:
        raise CorpusError(f"unknown condition {condition!r}")
    records: Dict[str, SentenceRecord] = {}
    annotations: List[AnnotationRecord] = []
    seen = set()
    rejected: List[Tuple[int, str]] = []
    for rowno, row in _read_tsv(path, ANNOTATION_COLUMNS):
        try:
            label = int(row["label"])
        except ValueError:
            raise CorpusError(f"{path}: row {rowno}: label {row['label']!r} is not an integer") from None
        if row["condition"] not in CONDITIONS:
            raise CorpusError(f"{path}: row {rowno}: unknown condition {row['condition']!r}")
        if condition is not None and row["condition"] != condition:
            continue
        if not 1 <= label <= 5:
            log.warning("%s: row %d: label %d outside 1..5, row rejected", path, rowno, label)
            rejected.append((rowno, f"label {label} outside 1..5"))
            continue
        try:
            rec = SentenceRecord(
                id=row["item_id"],
                text=row["text"],
                source=row["source"],
                original_id=row["original_id"] or None,
            )
            ann = AnnotationRecord(row["item_id"], row["annotator_id"], label, row["condition"])
        except CorpusError as exc:
            raise CorpusError(f"{path}: row {rowno}: {exc}") from None
        prev = records.setdefault(rec.id, rec)
        if prev != rec:
            raise CorpusError(f"{path}: row {rowno}: item {rec.id} disagrees with an earlier row")
        key = (ann.item_id, ann.annotator_id, ann.condition)
        if key in seen:
            raise CorpusError(f"{path}: row {rowno}: duplicate judgement {key}")
        seen.add(key)
        annotations.append(ann)
    if not annotations:
        raise CorpusError(f"{path}: no records")
    out = AnnotationSet(list(records.values()), annotations, rejected)
    log.info("loaded %d items / %d judgements from %s: %s", len(out.records), len(annotations), path, out.source_counts())
    return out


def write_annotations(path, records: Sequence[SentenceRecord], annotations: Sequence[AnnotationRecord]) -> None:
    by_id = {r.id: r for r in records}
    with open(path, "w", encoding="utf8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE, escapechar=None)
        w.writerow(ANNOTATION_COLUMNS)
        for a in annotations:
            r = by_id[a.item_id]
            if "\t" in r.text or "\n" in r.text:
                raise CorpusError(f"item {r.id}: text contains a tab or newline")
            w.writerow((r.id, r.text, r.source, r.original_id or "", a.label, a.annotator_id, a.condition))


def load_morris(path) -> List[Tuple[str, str, MorrisItem]]:
    """Load ``(text, source, MorrisItem)`` rows of a binary-vote file.

    The file carries no original/variant link, so rows are not turned into
    ``SentenceRecord`` objects.
    """
    out = []
    for rowno, row in _read_tsv(path, MORRIS_COLUMNS):
        try:
            if row["source"] not in SOURCES:
                raise CorpusError(f"unknown source {row['source']!r}")
            if not row["text"].strip():
                raise CorpusError("empty text")
            item = MorrisItem(row["item_id"], int(row["votes_computer"]), int(row["votes_total"]))
        except (ValueError, CorpusError) as exc:
            raise CorpusError(f"{path}: row {rowno}: {exc}") from None
        out.append((row["text"], row["source"], item))
    if not out:
        raise CorpusError(f"{path}: no records")
    return out


def _lower_median(values: Sequence[int]):
    s = sorted(values)
    return s[(len(s) - 1) // 2]


def consolidate(annotations: Iterable[AnnotationRecord], aggregation: str = "median") -> List[ScoredItem]:
    """One score per item. Items with a single judgement are tagged
    ``single`` whatever aggregation was requested; even counts use the lower
    median."""
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    labels: Dict[str, List[int]] = defaultdict(list)
    for a in annotations:
        labels[a.item_id].append(a.label)
    out = []
    for item_id, ls in labels.items():
        if len(ls) == 1:
            out.append(ScoredItem(item_id, Fraction(ls[0]), 1, "single"))
        elif aggregation == "single":
            raise ValueError(f"item {item_id} has {len(ls)} judgements; 'single' needs exactly one")
        elif aggregation == "median":
            out.append(ScoredItem(item_id, Fraction(_lower_median(ls)), len(ls), "median"))
        else:
            out.append(ScoredItem(item_id, Fraction(sum(ls), len(ls)), len(ls), "mean"))
    return out


def labels_by_item(annotations: Iterable[AnnotationRecord]) -> Dict[str, List[int]]:
    out: Dict[str, List[int]] = defaultdict(list)
    for a in annotations:
        out[a.item_id].append(a.label)
    return dict(out)


def make_split(items: Sequence[str], fractions: Tuple[float, float] = (0.9, 0.1), seed: int = 0,
               test: Sequence[str] = ()) -> DatasetSplit:
    """Shuffle ``items`` with ``seed`` and cut ``floor(train_frac * N)`` for
    training; dev receives the remainder. Test ids are passed through."""
    train_f, dev_f = fractions
    if train_f < 0 or dev_f < 0 or train_f + dev_f > 1 + 1e-12:
        raise ValueError("fractions must be non-negative and sum to at most 1")
    ids = sorted(set(items))
    if len(ids) != len(items):
        raise ValueError("duplicate ids")
    if len(ids) < 3:
        raise ValueError("need at least 3 items to split")
    overlap = set(ids) & set(test)
    if overlap:
        raise ValueError(f"test ids overlap training pool: {sorted(overlap)[:5]}")
    random.Random(seed).shuffle(ids)
    n_train = int(train_f * len(ids))
    return DatasetSplit(tuple(ids[:n_train]), tuple(ids[n_train:]), tuple(test), seed)


def pair_variants(records: Iterable[SentenceRecord]) -> Dict[str, Dict[str, SentenceRecord]]:
    records = list(records)
    groups: Dict[str, Dict[str, SentenceRecord]] = {r.id: {"original": r} for r in records if r.source == "original"}
    dangling = []
    for r in records:
        if r.source == "original":
            continue
        g = groups.get(r.original_id)
        if g is None:
            dangling.append(r.id)
            continue
        if r.source in g:
            raise CorpusError(f"original {r.original_id} has two {r.source} variants")
        g[r.source] = r
    if dangling:
        raise CorpusError(f"variants with unresolved original_id: {dangling}")
    return groups


def common_and_single(annotations: Iterable[AnnotationRecord]) -> Tuple[List[str], List[str]]:
    """Split item ids into multiply-annotated (the agreement/test set) and singles."""
    counts = Counter(a.item_id for a in annotations)
    multi = sorted(i for i, c in counts.items() if c > 1)
    single = sorted(i for i, c in counts.items() if c == 1)
    return multi, single
