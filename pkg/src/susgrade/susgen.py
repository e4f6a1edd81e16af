"""Attacks constrained by a predicted suspicion score, item selection for a
paired human comparison, and the comparison's significance test.

A candidate is accepted when its predicted score is at most ``tau`` and not
more than ``margin`` below the original text's predicted score (a variant
that looks much less suspicious than its own source is itself an anomaly).
"""

from __future__ import annotations

import csv
import logging
import math
import statistics
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .attacks import AttackConfig, AttackOutcome, attack
from .features import extract
from .lexres import Resources
from .metrics import binomial_two_sided
from .regressor import EnsembleRegressor
from .victim import VictimModel

log = logging.getLogger(__name__)

VERDICTS = ("accept", "above_tau", "below_margin")
MODES = ("per_edit", "final")

Scorer = Callable[[str, Optional[str]], float]


@dataclass
class SuspicionConstraint:
    """``scorer(text, original)`` returns a predicted suspicion score. A
    scorer may also offer ``many(texts, original)`` for batched scoring."""

    scorer: Scorer
    tau: float = 2.5
    margin: float = 0.2
    regressor_id: str = ""
    _cache: Dict[Tuple[str, Optional[str]], float] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 1 < self.tau <= 5:
            raise ValueError("tau must lie in (1, 5]")
        if not self.margin >= 0:
            raise ValueError("margin must be >= 0")

    def score(self, text: str, original: Optional[str] = None) -> float:
        return self.score_many([text], original)[0]

    def score_many(self, texts: Sequence[str], original: Optional[str] = None) -> List[float]:
        todo = list(dict.fromkeys(t for t in texts if (t, original) not in self._cache))
        if todo:
            many = getattr(self.scorer, "many", None)
            fresh = many(todo, original) if many is not None else [self.scorer(t, original) for t in todo]
            for t, v in zip(todo, fresh):
                self._cache[(t, original)] = float(v)
        return [self._cache[(t, original)] for t in texts]


class EnsembleScorer:
    """Feature extraction plus Text+Num prediction, batched over candidates."""

    def __init__(self, regressor: EnsembleRegressor, model: VictimModel, resources: Resources, llm=None):
        self.regressor, self.model, self.resources, self.llm = regressor, model, resources, llm

    def many(self, texts: Sequence[str], original: Optional[str]) -> List[float]:
        if not texts:
            return []
        X = np.vstack([extract(t, original, self.model, self.resources, llm=self.llm).values for t in texts])
        return [float(v) for v in self.regressor.predict(list(texts), X)]

    def __call__(self, text: str, original: Optional[str]) -> float:
        return self.many([text], original)[0]


def ensemble_scorer(regressor: EnsembleRegressor, model: VictimModel, resources: Resources, llm=None) -> Scorer:
    return EnsembleScorer(regressor, model, resources, llm)


@dataclass(frozen=True)
class Verdict:
    verdict: str
    predicted: float
    original_score: float


def _verdict(pred: float, orig: float, constraint: SuspicionConstraint) -> Verdict:
    if pred > constraint.tau:
        v = "above_tau"
    elif pred < orig - constraint.margin:
        v = "below_margin"
    else:
        v = "accept"
    return Verdict(v, pred, orig)


def constraint_check(candidate: str, original: str, constraint: SuspicionConstraint) -> Verdict:
    return _verdict(constraint.score(candidate, original), constraint.score(original, None), constraint)


def constraint_check_many(candidates: Sequence[str], original: str, constraint: SuspicionConstraint) -> List[Verdict]:
    orig = constraint.score(original, None)
    return [_verdict(p, orig, constraint) for p in constraint.score_many(candidates, original)]


@dataclass
class ConstrainedOutcome:
    outcome: AttackOutcome
    predicted_score: float
    original_score: float
    accepted: bool
    rejection_reason: Optional[str]
    mode: str
    regressor_id: str = ""

    def to_json(self) -> dict:
        return {"outcome": self.outcome.to_json(), "predicted_score": self.predicted_score,
                "original_score": self.original_score, "accepted": self.accepted,
                "rejection_reason": self.rejection_reason, "mode": self.mode, "regressor_id": self.regressor_id}

    @classmethod
    def from_json(cls, obj: dict) -> "ConstrainedOutcome":
        return cls(AttackOutcome.from_json(obj["outcome"]), obj["predicted_score"], obj["original_score"],
                   obj["accepted"], obj["rejection_reason"], obj["mode"], obj.get("regressor_id", ""))


def constrained_attack(model: VictimModel, text: str, cfg: AttackConfig, constraint: SuspicionConstraint,
                       resources: Resources, label: Optional[int] = None, mode: str = "per_edit",
                       original_id: str = "") -> ConstrainedOutcome:
    """Run the base attack with the suspicion constraint.

    ``per_edit`` filters every candidate the search considers committing;
    ``final`` only checks the finished text.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")

    def accept(candidate: str) -> bool:
        return constraint_check(candidate, text, constraint).verdict == "accept"

    accept.many = lambda cands: [v.verdict == "accept" for v in constraint_check_many(cands, text, constraint)]

    out = attack(model, text, cfg, resources, label=label, accept=accept if mode == "per_edit" else None,
                 original_id=original_id)
    v = constraint_check(out.perturbed_text, text, constraint)
    if not out.success:
        reason = "attack_failed"
    elif v.verdict != "accept":
        reason = v.verdict
    else:
        reason = None
    out.metadata["regressor"] = constraint.regressor_id
    return ConstrainedOutcome(out, v.predicted, v.original_score, reason is None, reason, mode, constraint.regressor_id)


# -- study item selection --------------------------------------------------------


@dataclass(frozen=True)
class ScoredVariant:
    original_id: str
    original_text: str
    text: str
    score: float
    original_score: float
    success: bool = True


@dataclass(frozen=True)
class StudyPair:
    pair_id: str
    original: str
    baseline_text: str
    constrained_text: str
    baseline_score: float
    constrained_score: float
    original_score: float

    @property
    def reduction(self) -> float:
        return self.baseline_score - self.constrained_score


@dataclass
class StudySelection:
    pairs: List[StudyPair]
    counts: Dict[str, int]
    reduction_mean: Optional[float]
    reduction_std: Optional[float]

    @property
    def reducible_fraction(self) -> Optional[float]:
        n = self.counts["above_tau"]
        return self.counts["reduced"] / n if n else None


def select_study_items(constrained: Sequence[ScoredVariant], baseline: Sequence[ScoredVariant], tau: float = 2.5,
                       margin: float = 0.2) -> StudySelection:
    """Pairs whose baseline variant scores above ``tau`` and whose successful
    constrained variant scores lower while respecting the margin rule."""
    by_id = {c.original_id: c for c in constrained if c.success}
    counts = {"baseline": len(baseline), "above_tau": 0, "has_constrained": 0, "reduced": 0, "selected": 0}
    pairs = []
    for b in baseline:
        if not (b.success and b.score > tau):
            continue
        counts["above_tau"] += 1
        c = by_id.get(b.original_id)
        if c is None:
            continue
        counts["has_constrained"] += 1
        if not c.score < b.score:
            continue
        counts["reduced"] += 1
        if c.score < c.original_score - margin:
            continue
        counts["selected"] += 1
        pairs.append(StudyPair(b.original_id, b.original_text, b.text, c.text, b.score, c.score, c.original_score))
    red = [p.reduction for p in pairs]
    mean = statistics.fmean(red) if red else None
    std = statistics.stdev(red) if len(red) >= 2 else None
    return StudySelection(pairs, counts, mean, std)


STUDY_COLUMNS = ("pair_id", "original", "baseline_text", "constrained_text", "baseline_score", "constrained_score",
                 "original_score")


def write_study_items(path, pairs: Sequence[StudyPair]) -> None:
    with open(path, "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for p in pairs:
            w.writerow([p.pair_id, p.original, p.baseline_text, p.constrained_text, repr(p.baseline_score),
                        repr(p.constrained_score), repr(p.original_score)])


def read_study_items(path) -> List[StudyPair]:
    with open(path, newline="", encoding="utf8") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != STUDY_COLUMNS:
            raise ValueError(f"{path}: expected columns {STUDY_COLUMNS}")
        return [StudyPair(row["pair_id"], row["original"], row["baseline_text"], row["constrained_text"],
                          float(row["baseline_score"]), float(row["constrained_score"]), float(row["original_score"]))
                for row in r]


# -- paired preference test -------------------------------------------------------------


@dataclass(frozen=True)
class PreferenceTrial:
    pair_id: str
    votes_a: int
    votes_b: int

    @property
    def winner(self) -> Optional[str]:
        if self.votes_a == self.votes_b:
            return None
        return "a" if self.votes_a > self.votes_b else "b"


@dataclass(frozen=True)
class PreferenceResult:
    wins_a: int
    wins_b: int
    discarded: int
    p_value: float


def preference_eval(trials: Sequence[PreferenceTrial], replication: bool = True) -> PreferenceResult:
    """Majority winner per trial and an exact two-sided binomial p-value.

    In replication mode every trial needs an odd vote total; otherwise tied
    trials are dropped with a warning.
    """
    a = b = dropped = 0
    for t in trials:
        if t.votes_a < 0 or t.votes_b < 0:
            raise ValueError(f"trial {t.pair_id}: negative votes")
        if replication and (t.votes_a + t.votes_b) % 2 == 0:
            raise ValueError(f"trial {t.pair_id}: even vote total in replication mode")
        w = t.winner
        if w is None:
            log.warning("trial %s tied %d-%d; discarded", t.pair_id, t.votes_a, t.votes_b)
            dropped += 1
        elif w == "a":
            a += 1
        else:
            b += 1
    p = binomial_two_sided(a, a + b) if a + b else 1.0
    return PreferenceResult(a, b, dropped, p)


def read_trials(path) -> List[PreferenceTrial]:
    with open(path, newline="", encoding="utf8") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != ("pair_id", "votes_a", "votes_b"):
            raise ValueError(f"{path}: expected columns pair_id, votes_a, votes_b")
        out = []
        for lineno, row in enumerate(r, start=2):
            try:
                out.append(PreferenceTrial(row["pair_id"], int(row["votes_a"]), int(row["votes_b"])))
            except ValueError:
                raise ValueError(f"{path}: row {lineno}: vote counts must be integers") from None
        return out


def write_trials(path, trials: Sequence[PreferenceTrial]) -> None:
    with open(path, "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "votes_a", "votes_b"])
        for t in trials:
            w.writerow([t.pair_id, t.votes_a, t.votes_b])
