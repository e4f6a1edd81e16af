"""A synthetic movie-review world small enough to run on a laptop.

The generator produces a labelled sentiment corpus, a <=200-word embedding
table whose clusters play the role of counter-fitted synonym sets, and a POS
lexicon covering every word. Some synonyms are deliberately sparse (or used
concessively with the opposite polarity) in the corpus so that a
bag-of-words victim can be attacked by substitution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .lexres import (
    EmbeddingTable,
    IdfTable,
    KeyboardLayout,
    NgramModel,
    PosLexicon,
    Resources,
    calibrate_anomaly_floor,
    tokenize,
)

# (cluster name, tag, words); the first half of each sentiment cluster is the
# "common" vocabulary, the rest are sparse synonyms.
CLUSTERS: Tuple[Tuple[str, str, Tuple[str, ...]], ...] = (
    ("pos1", "ADJ", ("good", "great", "fine", "decent", "solid", "nice")),
    ("pos2", "ADJ", ("wonderful", "excellent", "superb", "terrific", "fabulous")),
    ("pos3", "ADJ", ("brilliant", "charming", "delightful", "pleasant", "lovely")),
    ("neg1", "ADJ", ("bad", "weak", "poor", "lame", "mediocre", "shoddy")),
    ("neg2", "ADJ", ("awful", "terrible", "horrible", "dreadful", "atrocious")),
    ("neg3", "ADJ", ("boring", "dull", "tedious", "bland", "tiresome", "dreary")),
    ("posv", "VERB", ("loved", "enjoyed", "liked", "adored", "admired", "appreciated")),
    ("negv", "VERB", ("hated", "disliked", "despised", "loathed", "resented", "detested")),
    ("intens", "ADV", ("really", "truly", "very", "quite", "rather", "fairly", "genuinely", "thoroughly")),
    ("film", "NOUN", ("film", "movie", "picture", "feature")),
    ("story", "NOUN", ("story", "plot", "narrative", "tale")),
    ("cast", "NOUN", ("cast", "actors", "performers", "ensemble")),
    ("acting", "NOUN", ("acting", "performances", "portrayals")),
    ("script", "NOUN", ("script", "screenplay", "dialogue", "writing")),
    ("ending", "NOUN", ("ending", "finale", "climax", "conclusion")),
    ("music", "NOUN", ("music", "score", "soundtrack")),
    ("director", "NOUN", ("director", "filmmaker", "auteur")),
    ("scenes", "NOUN", ("scenes", "sequences", "moments")),
    ("visuals", "NOUN", ("visuals", "cinematography", "photography")),
    ("pace", "NOUN", ("pacing", "rhythm", "tempo")),
)

FUNCTION_WORDS: Dict[str, str] = {
    "the": "OTHER", "a": "OTHER", "this": "OTHER", "that": "OTHER", "its": "OTHER",
    "and": "OTHER", "but": "OTHER", "with": "OTHER", "of": "OTHER", "i": "OTHER",
    "it": "OTHER", "to": "OTHER", "in": "OTHER", "for": "OTHER", "so": "OTHER",
    "was": "VERB", "is": "VERB", "were": "VERB", "felt": "VERB", "seemed": "VERB",
    "has": "VERB", "found": "VERB", "overall": "ADV", "just": "ADV", "too": "ADV",
    "also": "ADV", "still": "ADV", "mostly": "ADV", "honestly": "ADV",
    "kind": "NOUN", "social": "ADJ", "texture": "NOUN", "realism": "NOUN",
    "american": "ADJ", "teen": "NOUN", "comedies": "NOUN", "foreign": "ADJ",
    "would": "VERB", "be": "VERB", "graced": "VERB",
}

POSITIVE = ("pos1", "pos2", "pos3")
NEGATIVE = ("neg1", "neg2", "neg3")


def _split(words: Sequence[str]) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    half = (len(words) + 1) // 2
    return tuple(words[:half]), tuple(words[half:])


@dataclass(frozen=True)
class ToyWorld:
    resources: Resources
    texts: Tuple[str, ...]
    labels: Tuple[int, ...]

    def split(self, test_fraction: float = 0.2) -> Tuple[List[Tuple[str, int]], List[Tuple[str, int]]]:
        n_test = int(round(len(self.texts) * test_fraction))
        pairs = list(zip(self.texts, self.labels))
        return pairs[n_test:], pairs[:n_test]


class ToyGenerator:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.clusters = {name: words for name, _, words in CLUSTERS}
        self.common = {}
        self.rare = {}
        for name, words in self.clusters.items():
            self.common[name], self.rare[name] = _split(words)

    def _pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def _adj(self, polarity: int, rare_p: float = 0.08) -> str:
        name = self._pick(POSITIVE if polarity else NEGATIVE)
        pool = self.rare[name] if self.rng.random() < rare_p else self.common[name]
        return self._pick(pool)

    def _rare_adj(self, polarity: int) -> str:
        return self._pick(self.rare[self._pick(POSITIVE if polarity else NEGATIVE)])

    def _verb(self, polarity: int) -> str:
        name = "posv" if polarity else "negv"
        pool = self.rare[name] if self.rng.random() < 0.08 else self.common[name]
        return self._pick(pool)

    def _noun(self) -> str:
        name = self._pick(("story", "cast", "acting", "script", "ending", "music", "director", "scenes", "visuals", "pace"))
        return self._pick(self.common[name])

    def _film(self) -> str:
        return self._pick(self.common["film"])

    def _adv(self) -> str:
        return self._pick(self.clusters["intens"])

    def sentence(self, polarity: int) -> str:
        t = int(self.rng.integers(8))
        if t == 0:
            return f"the {self._noun()} was {self._adv()} {self._adj(polarity)}"
        if t == 1:
            return f"i {self._verb(polarity)} this {self._film()} and its {self._noun()}"
        if t == 2:
            return f"the {self._noun()} is {self._adj(polarity)} and the {self._noun()} is {self._adj(polarity)}"
        if t == 3:
            return f"this {self._film()} has {self._adv()} {self._adj(polarity)} {self._noun()}"
        if t == 4:
            # concessive: a sparse word of the opposite polarity, label follows the main clause
            return f"the {self._noun()} was {self._rare_adj(1 - polarity)} but the {self._noun()} was {self._adj(polarity)}"
        if t == 5:
            return f"overall the {self._film()} felt {self._adj(polarity)}"
        if t == 6:
            return f"{self._adj(polarity)} {self._noun()} and {self._adv()} {self._adj(polarity)} {self._noun()}"
        return f"i found the {self._noun()} {self._adv()} {self._adj(polarity)} in this {self._film()}"

    def corpus(self, n: int, label_noise: float = 0.03) -> Tuple[List[str], List[int]]:
        texts, labels = [], []
        for i in range(n):
            y = i % 2
            texts.append(self.sentence(y))
            if self.rng.random() < label_noise:
                y = 1 - y
            labels.append(y)
        order = self.rng.permutation(n)
        return [texts[i] for i in order], [labels[i] for i in order]


def build_embeddings(dim: int = 300, seed: int = 0, spread: float = 0.6) -> EmbeddingTable:
    """Cluster centroid plus isotropic noise: in-cluster cosine ~ 1/(1+spread^2)."""
    rng = np.random.default_rng(seed + 1)
    words, rows = [], []

    def unit(v):
        return v / np.linalg.norm(v)

    for _, _, cluster in CLUSTERS:
        centre = unit(rng.normal(size=dim))
        for w in cluster:
            words.append(w)
            rows.append(centre + spread * unit(rng.normal(size=dim)))
    for w in FUNCTION_WORDS:
        words.append(w)
        rows.append(unit(rng.normal(size=dim)))
    return EmbeddingTable(words, np.array(rows))


def build_pos_lexicon() -> PosLexicon:
    tags = {w: frozenset({tag}) for _, tag, ws in CLUSTERS for w in ws}
    tags.update({w: frozenset({t}) for w, t in FUNCTION_WORDS.items()})
    # a few genuinely ambiguous entries
    tags["score"] = frozenset({"NOUN", "VERB"})
    tags["feature"] = frozenset({"NOUN", "VERB"})
    tags["fine"] = frozenset({"ADJ", "ADV"})
    return PosLexicon(tags)


def build_world(n_sentences: int = 500, seed: int = 0, dim: int = 300) -> ToyWorld:
    gen = ToyGenerator(seed)
    texts, labels = gen.corpus(n_sentences)
    tokens = [tokenize(t) for t in texts]
    ngram = NgramModel.fit(tokens, order=2, alpha=0.1)
    resources = Resources(
        embeddings=build_embeddings(dim=dim, seed=seed),
        idf=IdfTable.fit(tokens),
        ngram=ngram,
        pos=build_pos_lexicon(),
        keyboard=KeyboardLayout(),
        anomaly_floor=calibrate_anomaly_floor(ngram, tokens),
    )
    return ToyWorld(resources=resources, texts=tuple(texts), labels=tuple(labels))


def suspicion_dataset(n: int = 300, seed: int = 0, n_features: int = 6, noise: float = 0.3,
                      noise_groups: Sequence[str] = ()):
    """Regression data whose target mixes a text signal and a numeric signal
    in equal parts.

    Each text is five distinct toy words; its signal is the mean of hidden
    per-word weights. The numeric signal is a hidden linear function of
    standard-normal features. Both are standardised, averaged, mixed with
    Gaussian noise and mapped into [1, 5]. Rows whose group is listed in
    ``noise_groups`` get a target unrelated to either signal.
    """
    from .corpus import SOURCES
    from .regressor import Dataset

    rng = np.random.default_rng(seed)
    vocab = [w for _, _, ws in CLUSTERS for w in ws][:60]
    word_weight = dict(zip(vocab, rng.normal(size=len(vocab))))
    texts, text_signal = [], []
    for _ in range(n):
        words = [vocab[i] for i in rng.choice(len(vocab), 5, replace=False)]
        texts.append(" ".join(words))
        text_signal.append(np.mean([word_weight[w] for w in words]))
    X = rng.normal(size=(n, n_features))
    num_signal = X @ rng.normal(size=n_features)

    def standardise(v):
        v = np.asarray(v, dtype=float)
        return (v - v.mean()) / v.std()

    latent = 0.5 * standardise(text_signal) + 0.5 * standardise(num_signal) + noise * rng.normal(size=n)
    groups = [SOURCES[i % len(SOURCES)] for i in range(n)]
    for i, g in enumerate(groups):
        if g in noise_groups:
            latent[i] = rng.normal() * latent.std()
    y = np.clip(3.0 + latent, 1.0, 5.0)
    return Dataset(texts, X, y, groups)


def noisy_variant(text: str, resources: Resources, rng: np.random.Generator, rate: float) -> str:
    """Replace roughly ``rate`` of the words by a typo or an embedding neighbour."""
    from .attacks import char_candidates

    words = tokenize(text)
    for i, w in enumerate(words):
        if rng.random() >= rate:
            continue
        if rng.random() < 0.5:
            pool = char_candidates(w, resources.keyboard)
        else:
            pool = [n for n, _ in resources.embeddings.nearest_neighbors(w, 5)]
        if pool:
            words[i] = pool[int(rng.integers(len(pool)))]
    return " ".join(words)


def toy_suspicion_regressor(texts: Sequence[str], model, resources: Resources, seed: int = 0,
                            family: str = "random_forest", params=None):
    """Fit a Text+Num ensemble on originals and randomly corrupted variants.

    The made-up target grows with the share of changed words and of unknown
    tokens, so typos look more suspicious than clean synonym swaps.
    """
    from .features import extract
    from .regressor import Dataset, fit_ensemble

    rng = np.random.default_rng(seed)
    rows, feats, targets = [], [], []
    for text in texts:
        for rate in (0.0, 0.15, 0.35):
            variant = text if rate == 0 else noisy_variant(text, resources, rng, rate)
            fv = extract(variant, None if rate == 0 else text, model, resources)
            changed = fv.as_dict()["perturbation_rate"]
            oov = fv.as_dict()["oov_rate"]
            y = 1.5 + 3.0 * changed + 4.0 * oov + 0.2 * rng.normal()
            rows.append(variant)
            feats.append(fv.values)
            targets.append(float(np.clip(y, 1.0, 5.0)))
    data = Dataset(rows, np.vstack(feats), np.array(targets), ["toy"] * len(rows))
    return fit_ensemble(data, family=family, seed=seed, params=params)
