"""Glue shared by the command line and the end-to-end tests."""

from __future__ import annotations

import csv
import hashlib
from fractions import Fraction
from importlib import resources as _res
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import AnnotationSet, common_and_single, consolidate, make_split
from .features import FeatureMatrix
from .regressor import Dataset

BUILTIN = {
    "likert": "data/likert_reconstructed.tsv",
    "morris": "data/morris_examples.tsv",
    "preference": "data/preference_trials.csv",
}

DATASET_COLUMNS = ("item_id", "text", "original", "source", "score", "n_annotations", "split")


def resolve(path: str) -> Path:
    """``builtin:<name>`` names a data file shipped with the package."""
    if str(path).startswith("builtin:"):
        name = str(path).split(":", 1)[1]
        if name not in BUILTIN:
            raise FileNotFoundError(f"unknown builtin dataset {name!r}; choose from {sorted(BUILTIN)}")
        return Path(str(_res.files("susgrade").joinpath(BUILTIN[name])))
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input not found: {path}")
    return p


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def read_table(path, required: Sequence[str] = ()) -> List[Dict[str, str]]:
    with open(resolve(path), newline="", encoding="utf8") as fh:
        r = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        missing = [c for c in required if c not in (r.fieldnames or ())]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        return list(r)


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE, escapechar="\\")
        w.writerow(columns)
        for row in rows:
            w.writerow(row)


def _fmt_score(s: Fraction) -> str:
    return str(s.numerator) if s.denominator == 1 else repr(float(s))


def dataset_rows(data: AnnotationSet, seed: int = 0, fractions: Tuple[float, float] = (0.9, 0.1)) -> List[Tuple]:
    """One row per item with its consolidated score and split membership.

    Multiply annotated items (median score) form the test split; singly
    annotated items are cut into train and dev.
    """
    scored = {s.item_id: s for s in consolidate(data.annotations, "median")}
    multi, single = common_and_single(data.annotations)
    split = make_split(single, fractions, seed, test=multi)
    where = {i: "train" for i in split.train}
    where.update({i: "dev" for i in split.dev})
    where.update({i: "test" for i in split.test})
    texts = {r.id: r.text for r in data.records}
    rows = []
    for r in data.records:
        s = scored.get(r.id)
        if s is None:
            continue
        rows.append((r.id, r.text, texts.get(r.original_id, "") if r.original_id else "", r.source,
                     _fmt_score(s.score), s.n_annotations, where[r.id]))
    return rows


def build_dataset(rows: Sequence[Dict[str, str]], fm: FeatureMatrix, split: Optional[str] = None) -> Dataset:
    """Align dataset rows with feature rows by item id."""
    pos = {i: k for k, i in enumerate(fm.ids)}
    keep = [r for r in rows if split is None or r.get("split") == split]
    missing = [r["item_id"] for r in keep if r["item_id"] not in pos]
    if missing:
        raise ValueError(f"{len(missing)} items lack feature rows, e.g. {missing[:3]}")
    idx = [pos[r["item_id"]] for r in keep]
    return Dataset(
        texts=[r["text"] for r in keep],
        features=fm.values[idx] if idx else np.zeros((0, fm.values.shape[1])),
        targets=np.array([float(r["score"]) for r in keep]),
        groups=[r.get("source", "all") for r in keep],
    )
