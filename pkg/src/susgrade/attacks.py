"""Word- and character-level attacks on the victim classifier.

Each attack is a goal function (push the victim off its original label), a
transformation (char edits or embedding / n-gram substitutions), constraints
(POS, word and sentence similarity, perturbation cap, optional external
acceptance test) and a search (greedy by word importance, or genetic).

Texts are edited in place on the token cores found by ``lexres.token_spans``,
so surrounding punctuation and spacing survive and an edit trace replays to
the exact perturbed string.
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .corpus import SentenceRecord
from .lexres import BOS, EOS, UNK, KeyboardLayout, Resources, cosine, pos_compatible, sentence_vector, token_spans
from .victim import VictimModel, positive_probability_tokens

log = logging.getLogger(__name__)

METHODS = ("pruthi", "alzantot", "textfooler", "bae_standin")
EDIT_KINDS = ("char_swap", "char_delete", "char_insert", "char_keyboard", "word_substitute")
LETTERS = "abcdefghijklmnopqrstuvwxyz"

# An acceptor may also expose ``many(texts) -> list of bools`` to judge a
# whole candidate list at once; the result must equal calling it per text.
Acceptor = Callable[[str], bool]


def _accepted(accept: Acceptor, texts: Sequence[str]) -> List[bool]:
    many = getattr(accept, "many", None)
    if many is not None:
        return [bool(v) for v in many(list(texts))]
    return [accept(t) for t in texts]


class AttackPreconditionError(ValueError):
    """The victim already misclassifies the input."""


class _BudgetExhausted(Exception):
    pass


@dataclass(frozen=True)
class AttackConfig:
    method: str = "textfooler"
    max_perturb_fraction: Optional[float] = None
    min_word_cos: float = 0.5
    min_sentence_cos: float = 0.84
    k_candidates: int = 50
    population: int = 60
    generations: int = 20
    seed: int = 0
    query_budget: int = 2000
    min_perturb_fraction: Optional[float] = None
    lm_floor: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown attack method {self.method!r}")
        if self.max_perturb_fraction is None:
            object.__setattr__(self, "max_perturb_fraction", 0.5 if self.method == "pruthi" else 1.0)
        if not 0 < self.max_perturb_fraction <= 1:
            raise ValueError("max_perturb_fraction must lie in (0, 1]")
        if self.min_perturb_fraction is not None and not 0 <= self.min_perturb_fraction <= self.max_perturb_fraction:
            raise ValueError("min_perturb_fraction must lie in [0, max_perturb_fraction]")
        if not -1 <= self.min_word_cos <= 1 or not -1 <= self.min_sentence_cos <= 1:
            raise ValueError("cosine thresholds must lie in [-1, 1]")
        if self.k_candidates < 1 or self.population < 1 or self.generations < 0 or self.query_budget < 1:
            raise ValueError("k_candidates, population, query_budget must be >= 1 and generations >= 0")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Edit:
    position: int
    kind: str
    before: str
    after: str


@dataclass
class AttackOutcome:
    original_id: str
    original_text: str
    perturbed_text: str
    success: bool
    queries_used: int
    perturbation_rate: float
    trace: Tuple[Edit, ...]
    method: str
    original_label: int
    perturbed_label: int
    original_probability: float
    final_probability: float
    status: str = "failed"
    metadata: Dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["trace"] = [asdict(e) for e in self.trace]
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "AttackOutcome":
        obj = dict(obj)
        obj["trace"] = tuple(Edit(**e) for e in obj["trace"])
        return cls(**obj)


# -- text surgery --------------------------------------------------------------


class _Doc:
    """Original text plus its token cores; renders substituted versions."""

    def __init__(self, text: str):
        self.text = text
        self.spans = token_spans(text)
        self.tokens = tuple(t for _, _, t in self.spans)
        self.surfaces = tuple(text[s:e] for s, e, _ in self.spans)

    def __len__(self):
        return len(self.tokens)

    def render(self, subs: Dict[int, str]) -> str:
        if not subs:
            return self.text
        out, last = [], 0
        for i, (s, e, _) in enumerate(self.spans):
            if i in subs:
                out.append(self.text[last:s])
                out.append(_match_case(self.surfaces[i], subs[i]))
                last = e
        out.append(self.text[last:])
        return "".join(out)

    def tokens_with(self, subs: Dict[int, str]) -> Tuple[str, ...]:
        if not subs:
            return self.tokens
        return tuple(subs[i].lower() if i in subs else t for i, t in enumerate(self.tokens))


def _match_case(surface: str, word: str) -> str:
    if len(surface) > 1 and surface.isupper():
        return word.upper()
    if surface[:1].isupper():
        return word[:1].upper() + word[1:]
    return word


def _clean_token(word: str) -> bool:
    """Substituting ``word`` keeps the token count and boundaries intact."""
    return bool(word) and token_spans(word) == [(0, len(word), word.lower())]


def replay(original: str, trace: Sequence[Edit]) -> str:
    """Apply ``trace`` to ``original`` one edit at a time."""
    text = original
    for e in trace:
        spans = token_spans(text)
        if not 0 <= e.position < len(spans):
            raise ValueError(f"edit position {e.position} out of range")
        s, t, _ = spans[e.position]
        if text[s:t] != e.before:
            raise ValueError(f"edit at {e.position}: expected {e.before!r}, found {text[s:t]!r}")
        text = text[:s] + e.after + text[t:]
    return text


# -- goal function -------------------------------------------------------------


class _Goal:
    """Untargeted goal: change the victim's label. Caches by token tuple and
    charges one query per distinct text."""

    def __init__(self, model: VictimModel, budget: int):
        self.model = model
        self.budget = budget
        self.queries = 0
        self.cache: Dict[Tuple[str, ...], float] = {}
        self.original_label = 0

    def p_pos(self, tokens: Tuple[str, ...]) -> float:
        p = self.cache.get(tokens)
        if p is None:
            if self.queries >= self.budget:
                raise _BudgetExhausted
            self.queries += 1
            p = positive_probability_tokens(self.model, tokens)
            self.cache[tokens] = p
        return p

    def p_orig(self, tokens) -> float:
        p = self.p_pos(tokens)
        return p if self.original_label == 1 else 1.0 - p

    def label(self, tokens) -> int:
        return int(self.p_pos(tokens) >= 0.5)

    def flipped(self, tokens) -> bool:
        return self.label(tokens) != self.original_label


def _rng_for(cfg: AttackConfig, text: str) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, zlib.crc32(text.encode("utf8"))])


def _cap(cfg: AttackConfig, n: int) -> int:
    return int(math.floor(cfg.max_perturb_fraction * n + 1e-9))


# -- transformations -----------------------------------------------------------


def char_variants(word: str, layout: Optional[KeyboardLayout] = None) -> Dict[str, str]:
    """Every single-edit variant mapped to the first edit kind producing it
    (order: swap, delete, insert, keyboard)."""
    layout = layout or KeyboardLayout()
    out: Dict[str, str] = {}

    def add(v, kind):
        if v != word and v not in out:
            out[v] = kind

    if len(word) >= 2:
        for i in range(len(word) - 1):
            add(word[:i] + word[i + 1] + word[i] + word[i + 2:], "char_swap")
        for i in range(len(word)):
            add(word[:i] + word[i + 1:], "char_delete")
    for i in range(len(word) + 1):
        for ch in LETTERS:
            add(word[:i] + ch + word[i:], "char_insert")
    for i, ch in enumerate(word):
        for nb in sorted(layout.neighbors(ch.lower())):
            add(word[:i] + nb + word[i + 1:], "char_keyboard")
    return out


def char_candidates(word: str, layout: Optional[KeyboardLayout] = None) -> List[str]:
    return list(char_variants(word, layout))


def _sentence_ok(tokens: Sequence[str], position: int, cand: str, reference_vec, resources: Resources,
                 min_sentence_cos: float) -> bool:
    if min_sentence_cos <= -1:
        return True
    subst = list(tokens)
    subst[position] = cand
    v, _ = sentence_vector(subst, resources.embeddings, resources.idf)
    return cosine(v, reference_vec) >= min_sentence_cos


def _lm_pool(tokens: Sequence[str], position: int, k: int, resources: Resources) -> List[str]:
    current = tokens[position]
    scored = []
    for w in resources.ngram.vocab:
        if w in (BOS, EOS, UNK) or w == current:
            continue
        scored.append((-resources.ngram.context_score(tokens, position, w), w))
    scored.sort()
    return [w for _, w in scored[:k]]


def word_candidates(text: Union[str, Sequence[str]], position: int, cfg: AttackConfig, resources: Resources,
                    reference: Optional[Sequence[str]] = None) -> List[str]:
    """Substitutes for the token at ``position`` that pass every word-level
    constraint.

    textfooler / alzantot draw the ``k_candidates`` nearest embedding
    neighbours; bae_standin draws the ``k_candidates`` words the n-gram model
    likes best in this context. Both pools are then filtered by POS
    compatibility, word cosine >= ``min_word_cos`` and cosine between the
    substituted and the ``reference`` (default: unmodified) sentence vectors
    >= ``min_sentence_cos``. ``lm_floor``, when set, also drops candidates
    whose context score falls below it.
    """
    tokens = list(text) if not isinstance(text, str) else [t for _, _, t in token_spans(text)]
    if not 0 <= position < len(tokens):
        raise IndexError("position out of range")
    word = tokens[position]
    emb = resources.embeddings
    if word not in emb:
        return []
    if cfg.method == "bae_standin":
        pool = [w for w in _lm_pool(tokens, position, cfg.k_candidates, resources)
                if (emb.cosine(word, w) or -2.0) >= cfg.min_word_cos]
    else:
        pool = [w for w, _ in emb.nearest_neighbors(word, cfg.k_candidates, min_cos=cfg.min_word_cos)]
    ref_vec, _ = sentence_vector(reference if reference is not None else tokens, emb, resources.idf)
    out = []
    for w in pool:
        if not _clean_token(w) or not pos_compatible(word, w, resources.pos):
            continue
        if cfg.lm_floor is not None and resources.ngram.context_score(tokens, position, w) < cfg.lm_floor:
            continue
        if not _sentence_ok(tokens, position, w, ref_vec, resources, cfg.min_sentence_cos):
            continue
        out.append(w)
    return out


# -- search --------------------------------------------------------------------


def word_importance(model: VictimModel, text: Union[str, Sequence[str]], _goal: Optional[_Goal] = None) -> List[int]:
    """Positions ranked by the drop in predicted-class probability when the
    word is deleted. Words the victim does not know are ranked last; ties
    keep position order."""
    tokens = tuple(text) if not isinstance(text, str) else tuple(t for _, _, t in token_spans(text))
    if not tokens:
        raise ValueError("text has no tokens")
    goal = _goal
    if goal is None:
        goal = _Goal(model, budget=10 ** 9)
        goal.original_label = goal.label(tokens)
    base = goal.p_orig(tokens)
    keys = []
    for i, tok in enumerate(tokens):
        known = tok in model.vocabulary
        drop = base - goal.p_orig(tokens[:i] + tokens[i + 1:]) if known else 0.0
        keys.append((not known, -drop, i))
    return [i for _, _, i in sorted(keys)]


@dataclass
class _State:
    doc: _Doc
    goal: _Goal
    cfg: AttackConfig
    original_id: str
    original_probability: float


def _start(model, text, cfg, label, original_id) -> _State:
    doc = _Doc(text)
    if not len(doc):
        raise ValueError("text has no tokens")
    goal = _Goal(model, cfg.query_budget)
    goal.original_label = goal.label(doc.tokens)
    if label is not None and goal.original_label != int(label):
        raise AttackPreconditionError(f"victim misclassifies {original_id or text!r}")
    return _State(doc, goal, cfg, original_id, goal.p_orig(doc.tokens))


def _finish(st: _State, subs: Dict[int, str], trace: List[Edit], status: str, **meta) -> AttackOutcome:
    tokens = st.doc.tokens_with(subs)
    p = st.goal.cache.get(tokens)
    if p is None:
        p = positive_probability_tokens(st.goal.model, tokens)
    label = int(p >= 0.5)
    success = label != st.goal.original_label
    changed = sum(1 for a, b in zip(tokens, st.doc.tokens) if a != b)
    text = st.doc.render(subs)
    if status == "succeeded" and not success:
        status = "failed"
    if success:
        status = "succeeded"
    return AttackOutcome(
        original_id=st.original_id,
        original_text=st.doc.text,
        perturbed_text=text,
        success=success,
        queries_used=st.goal.queries,
        perturbation_rate=changed / len(st.doc),
        trace=tuple(trace),
        method=st.cfg.method,
        original_label=st.goal.original_label,
        perturbed_label=label,
        original_probability=st.original_probability,
        final_probability=p if st.goal.original_label == 1 else 1.0 - p,
        status=status,
        metadata=dict(meta),
    )


def _greedy(st: _State, resources: Resources, accept: Optional[Acceptor], char_level: bool) -> AttackOutcome:
    doc, goal, cfg = st.doc, st.goal, st.cfg
    subs: Dict[int, str] = {}
    trace: List[Edit] = []
    cap = _cap(cfg, len(doc))
    try:
        order = word_importance(goal.model, doc.tokens, goal)
    except _BudgetExhausted:
        return _finish(st, subs, trace, "budget_exhausted")
    current = goal.p_orig(doc.tokens)
    for pos in order:
        if len(subs) >= cap:
            break
        tokens = doc.tokens_with(subs)
        if char_level:
            kinds = {c: k for c, k in char_variants(tokens[pos], resources.keyboard).items() if _clean_token(c)}
            cands = sorted(kinds)
        else:
            cands = sorted(word_candidates(tokens, pos, cfg, resources, reference=doc.tokens))
            kinds = dict.fromkeys(cands, "word_substitute")
        if accept is not None:
            verdicts = _accepted(accept, [doc.render({**subs, pos: c}) for c in cands])
            cands = [c for c, ok in zip(cands, verdicts) if ok]
        best, best_p, exhausted = None, current, False
        for c in cands:
            try:
                p = goal.p_orig(tokens[:pos] + (c,) + tokens[pos + 1:])
            except _BudgetExhausted:
                exhausted = True
                break
            if p < best_p:
                best, best_p = c, p
        if best is not None and (not exhausted or goal.flipped(tokens[:pos] + (best,) + tokens[pos + 1:])):
            before = doc.surfaces[pos]
            subs[pos] = best
            trace.append(Edit(pos, kinds[best], before, _match_case(before, best)))
            current = best_p
            if goal.flipped(doc.tokens_with(subs)):
                return _finish(st, subs, trace, "succeeded")
        if exhausted:
            return _finish(st, subs, trace, "budget_exhausted")
    return _finish(st, subs, trace, "failed")


def greedy_search(model: VictimModel, text: str, cfg: AttackConfig, resources: Resources, label: Optional[int] = None,
                  accept: Optional[Acceptor] = None, original_id: str = "") -> AttackOutcome:
    """Greedy word-importance substitution (textfooler, bae_standin)."""
    st = _start(model, text, cfg, label, original_id)
    return _greedy(st, resources, accept, char_level=False)


def char_search(model: VictimModel, text: str, cfg: AttackConfig, resources: Resources, label: Optional[int] = None,
                accept: Optional[Acceptor] = None, original_id: str = "") -> AttackOutcome:
    """Greedy single-character edits in word-importance order (pruthi)."""
    st = _start(model, text, cfg, label, original_id)
    return _greedy(st, resources, accept, char_level=True)


def genetic_search(model: VictimModel, text: str, cfg: AttackConfig, resources: Resources, label: Optional[int] = None,
                   accept: Optional[Acceptor] = None, original_id: str = "") -> AttackOutcome:
    """Population-based substitution search (alzantot).

    Members are maps position -> substitute. Fitness is the probability of
    the wrong class; the fittest member survives each generation, children
    mix two fitness-proportionally drawn parents position by position and
    then receive one random valid substitution. Members are evaluated one at
    a time and the search returns as soon as one of them flips the label.
    """
    st = _start(model, text, cfg, label, original_id)
    doc, goal = st.doc, st.goal
    rng = _rng_for(cfg, text)
    cands = {i: sorted(word_candidates(doc.tokens, i, cfg, resources, reference=doc.tokens)) for i in range(len(doc))}
    cands = {i: c for i, c in cands.items() if c}
    eligible = sorted(cands)
    cap = _cap(cfg, len(doc))
    floor = 0
    if cfg.min_perturb_fraction is not None:
        floor = min(cap, len(eligible), int(math.ceil(cfg.min_perturb_fraction * len(doc) - 1e-9)))
    if not eligible or cap == 0:
        return _finish(st, {}, [], "failed", generations_run=0)

    def key(m):
        return tuple(sorted(m.items()))

    def perturb(member: Dict[int, str]) -> Dict[int, str]:
        allowed = eligible if len(member) < cap else sorted(member)
        pos = allowed[int(rng.integers(len(allowed)))]
        options = [c for c in cands[pos] if c != member.get(pos)]
        if accept is not None:
            verdicts = _accepted(accept, [doc.render({**member, pos: c}) for c in options])
            options = [c for c, ok in zip(options, verdicts) if ok]
        if not options:
            return member
        out = dict(member)
        out[pos] = options[int(rng.integers(len(options)))]
        return out

    def fill(member):
        for _ in range(4 * len(eligible)):
            if len(member) >= floor:
                break
            member = perturb(member)
        return member

    def fitness(member) -> float:
        return 1.0 - goal.p_orig(doc.tokens_with(member))

    def outcome(member, status, gens):
        trace = [Edit(i, "word_substitute", doc.surfaces[i], _match_case(doc.surfaces[i], w))
                 for i, w in sorted(member.items())]
        return _finish(st, member, trace, status, generations_run=gens)

    population: List[Dict[int, str]] = []
    scores: List[float] = []
    gens = 0
    try:
        for _ in range(cfg.population):
            population.append(fill(perturb({})))
        for m in population:
            scores.append(fitness(m))
            if goal.flipped(doc.tokens_with(m)):
                return outcome(m, "succeeded", 0)
        for gens in range(1, cfg.generations + 1):
            elite = int(np.argmax(scores))
            s = np.asarray(scores)
            probs = s / s.sum() if s.sum() > 0 else np.full(len(s), 1 / len(s))
            nxt = [population[elite]]
            for _ in range(cfg.population - 1):
                a, b = rng.choice(len(population), size=2, p=probs)
                pa, pb = population[int(a)], population[int(b)]
                child = {}
                for pos in sorted(set(pa) | set(pb)):
                    pick = pa if rng.random() < 0.5 else pb
                    if pos in pick:
                        child[pos] = pick[pos]
                if len(child) > cap:
                    drop = rng.choice(sorted(child), size=len(child) - cap, replace=False)
                    for d in drop:
                        del child[int(d)]
                if accept is not None and child and not accept(doc.render(child)):
                    child = dict(pa)
                nxt.append(fill(perturb(child)))
            population, scores = nxt, []
            for m in population:
                scores.append(fitness(m))
                if goal.flipped(doc.tokens_with(m)):
                    return outcome(m, "succeeded", gens)
    except _BudgetExhausted:
        pool = population[: len(scores)]
        if not pool:
            return outcome({}, "budget_exhausted", gens)
        return outcome(pool[int(np.argmax(scores))], "budget_exhausted", gens)
    return outcome(population[int(np.argmax(scores))], "failed", gens)


SEARCHES = {
    "pruthi": char_search,
    "alzantot": genetic_search,
    "textfooler": greedy_search,
    "bae_standin": greedy_search,
}


def attack(model: VictimModel, text: str, cfg: AttackConfig, resources: Resources, label: Optional[int] = None,
           accept: Optional[Acceptor] = None, original_id: str = "") -> AttackOutcome:
    return SEARCHES[cfg.method](model, text, cfg, resources, label=label, accept=accept, original_id=original_id)


# -- batch driver --------------------------------------------------------------

RecordLike = Union[SentenceRecord, Tuple[str, str, Optional[int]]]


def _unpack(rec: RecordLike) -> Tuple[str, str, Optional[int]]:
    if isinstance(rec, SentenceRecord):
        label = None if rec.gold_label is None else int(rec.gold_label == "positive")
        return rec.id, rec.text, label
    rid, text, label = rec
    return rid, text, None if label is None else int(label)


@dataclass
class AttackRun:
    outcomes: List[AttackOutcome]
    skipped: List[str]
    summary: Dict[str, Optional[float]]


def summarize(outcomes: Sequence[AttackOutcome], skipped: int = 0) -> Dict[str, Optional[float]]:
    n = len(outcomes)
    wins = sum(o.success for o in outcomes)
    return {
        "attempted": n,
        "skipped_misclassified": skipped,
        "successes": wins,
        "success_rate": wins / n if n else None,
        "mean_queries": sum(o.queries_used for o in outcomes) / n if n else None,
        "mean_perturbation_rate": sum(o.perturbation_rate for o in outcomes) / n if n else None,
    }


def run_attack(model: VictimModel, records: Iterable[RecordLike], cfg: AttackConfig, resources: Resources,
               workers: int = 1, accept: Optional[Acceptor] = None) -> AttackRun:
    """Attack every record the victim gets right; results keep input order."""
    items = [_unpack(r) for r in records]

    def one(item):
        rid, text, label = item
        try:
            return attack(model, text, cfg, resources, label=label, accept=accept, original_id=rid)
        except AttackPreconditionError:
            return None

    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, items))
    else:
        results = [one(it) for it in items]
    outcomes = [r for r in results if r is not None]
    skipped = [it[0] for it, r in zip(items, results) if r is None]
    return AttackRun(outcomes, skipped, summarize(outcomes, len(skipped)))


def write_outcomes(path, outcomes: Iterable[AttackOutcome]) -> None:
    with open(path, "w", encoding="utf8", newline="\n") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def read_outcomes(path) -> List[AttackOutcome]:
    with open(path, encoding="utf8") as fh:
        return [AttackOutcome.from_json(json.loads(line)) for line in fh if line.strip()]
