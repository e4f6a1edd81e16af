import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

import oracles
from susgrade.lexres import tokenize
from susgrade.metrics import (
    METRIC_NAMES, binomial_two_sided, bleu, correlations, count_chunks, levenshtein, meteor_lite, metric_suspicion_correlation,
    overlap_scores, pearson, rouge, spearman, write_metric_table,
)

VECTORS = json.loads((Path(__file__).parent / "data" / "metric_vectors.json").read_text())


@pytest.mark.parametrize("entry", VECTORS, ids=[e["reference"][:20] for e in VECTORS])
def test_vector_file_matches_implementation(entry):
    got = overlap_scores(entry["reference"], entry["candidate"]).as_dict()
    for name in METRIC_NAMES:
        assert got[name] == pytest.approx(entry[name], abs=1e-9), name


@pytest.mark.parametrize("entry", VECTORS, ids=[e["reference"][:20] for e in VECTORS])
def test_vector_file_matches_oracles(entry):
    r, c = tokenize(entry["reference"]), tokenize(entry["candidate"])
    assert entry["bleu"] == pytest.approx(oracles.sentence_bleu(r, c), abs=1e-12)
    assert entry["rougeL"] == pytest.approx(oracles.rouge_l(r, c), abs=1e-12)
    assert entry["meteor_lite"] == pytest.approx(oracles.meteor(r, c), abs=1e-12)
    assert entry["levenshtein"] == oracles.edit_distance(entry["reference"], entry["candidate"])


def test_hand_counted_values():
    # unigram 2/3, bigram 1/2, trigram smoothed (0+1)/(1+1), 4-gram smoothed (0+1)/(0+1)
    assert bleu("the cat sat".split(), "the cat mat".split()) == pytest.approx((2 / 3 * 1 / 2 * 1 / 2) ** 0.25)
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("", "ab") == 2
    six = "the cat sat on the mat".split()
    assert meteor_lite(six, six) == pytest.approx(1 - 0.5 * (1 / 6) ** 3)
    # one substitution: 2 of 3 aligned in two chunks
    p = r = 2 / 3
    assert meteor_lite("a good film".split(), "a great film".split()) == pytest.approx(p * (1 - 0.5 * (2 / 2) ** 3))
    assert rouge("a b c d".split(), "a c b d".split(), "L") == pytest.approx(3 / 4)


def test_identity_and_disjoint():
    s = "a quietly moving story".split()
    assert bleu(s, s) == 1.0 and rouge(s, s, 1) == 1.0 and rouge(s, s, 3) == 1.0 and rouge(s, s, "L") == 1.0
    assert levenshtein("same", "same") == 0
    d = "x y z".split()
    assert bleu(s, d) == 0.0 and rouge(s, d, 2) == 0.0 and meteor_lite(s, d) == 0.0


def test_empty_inputs(caplog):
    assert bleu(["a"], []) == 0.0
    assert "empty candidate" in caplog.text
    assert rouge([], ["a"]) == 0.0 and rouge(["a"], [], "L") == 0.0


def test_stem_stage_and_synonyms():
    assert meteor_lite(["films"], ["film"]) > 0
    assert meteor_lite(["good"], ["fine"]) == 0.0
    assert meteor_lite(["good"], ["fine"], synonyms=lambda a, b: {a, b} == {"good", "fine"}) > 0


def test_embedding_synonym_stage(resources):
    emb = resources.embeddings
    word = emb.words[0]
    (near, cos), = emb.nearest_neighbors(word, 1)
    matched = meteor_lite([word], [near], synonyms=emb, min_cos=cos - 1e-9)
    assert matched > 0
    assert meteor_lite([word], [near], synonyms=emb, min_cos=min(1.0, cos + 1e-6)) == 0.0


def test_chunk_count():
    assert count_chunks([(0, 0), (1, 1), (2, 2)]) == 1
    assert count_chunks([(0, 1), (1, 0)]) == 2
    assert count_chunks([]) == 0


words = st.lists(st.sampled_from("a b c d e f".split()), min_size=1, max_size=7)


@settings(max_examples=150, deadline=None)
@given(words, words)
def test_metric_bounds_and_oracles(a, b):
    for v in (bleu(a, b), rouge(a, b, 1), rouge(a, b, 2), rouge(a, b, 3), rouge(a, b, "L"), meteor_lite(a, b)):
        assert 0.0 <= v <= 1.0
    assert bleu(a, b) == pytest.approx(oracles.sentence_bleu(a, b), abs=1e-12)
    assert rouge(a, b, 2) == pytest.approx(oracles.rouge_n(a, b, 2), abs=1e-12)
    assert rouge(a, b, "L") == pytest.approx(oracles.rouge_l(a, b), abs=1e-12)
    assert levenshtein(a, b) == levenshtein(b, a) == oracles.edit_distance(a, b)
    assert bleu(a, a) == 1.0 and rouge(a, a, "L") == 1.0


@settings(max_examples=100, deadline=None)
@given(st.text("abc", max_size=6), st.text("abc", max_size=6), st.text("abc", max_size=6))
def test_levenshtein_triangle(a, b, c):
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


def test_perfect_linear():
    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    rep = correlations(x, [2 * v + 1 for v in x])
    assert rep.pearson_r == pytest.approx(1.0) and rep.spearman_rho == pytest.approx(1.0)
    assert rep.rmse == pytest.approx(math.sqrt(sum((v + 1) ** 2 for v in x) / 5))


def test_cubic_is_monotone_not_linear():
    x = list(range(-2, 3))
    rep = correlations(x, [v ** 3 for v in x])
    assert rep.spearman_rho == pytest.approx(1.0)
    assert rep.pearson_r < 1


def test_constant_input_flagged():
    rep = correlations([1, 2, 3, 4], [2, 2, 2, 2])
    assert rep.pearson_r is None and rep.spearman_rho is None
    assert rep.undefined == ("pearson_r", "spearman_rho")
    assert rep.rmse == pytest.approx(math.sqrt((1 + 0 + 1 + 4) / 4))


def test_correlation_preconditions():
    with pytest.raises(ValueError):
        correlations([1, 2], [1, 2])
    with pytest.raises(ValueError):
        correlations([1, 2, 3], [1, 2])
    with pytest.raises(ValueError):
        correlations([1, 2, float("nan")], [1, 2, 3])


def test_five_point_toy_against_definition():
    x, y = [1.0, 3.0, 2.0, 5.0, 4.0], [2.0, 2.5, 2.5, 4.0, 1.0]
    rep = correlations(x, y)
    assert rep.pearson_r == pytest.approx(oracles.pearson_definition(x, y), abs=1e-12)
    assert rep.spearman_rho == pytest.approx(oracles.spearman_definition(x, y), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 40))
def test_correlations_match_definition_on_random_vectors(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n).round(2).tolist()
    y = (rng.normal(size=n) + 0.5 * np.array(x)).round(2).tolist()
    assume(len(set(x)) > 1 and len(set(y)) > 1)
    rep = correlations(x, y)
    assert rep.pearson_r == pytest.approx(oracles.pearson_definition(x, y), abs=1e-9)
    assert rep.spearman_rho == pytest.approx(oracles.spearman_definition(x, y), abs=1e-9)
    assert rep.rmse == pytest.approx(math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y)) / n), abs=1e-9)
    a, b = rng.uniform(0.1, 5), rng.uniform(-3, 3)
    assert pearson([a * v + b for v in x], y) == pytest.approx(rep.pearson_r, abs=1e-9)
    assert spearman([v ** 3 for v in x], y) == pytest.approx(rep.spearman_rho, abs=1e-9)


def test_binomial_values():
    assert binomial_two_sided(18, 23) == pytest.approx(0.0106, abs=0.0005)
    assert binomial_two_sided(23, 23) == pytest.approx(2 * 2.0 ** -23)
    assert binomial_two_sided(10, 20) == 1.0
    assert binomial_two_sided(0, 0) == 1.0
    with pytest.raises(ValueError):
        binomial_two_sided(5, 4)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 60).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_binomial_symmetry(sn):
    s, n = sn
    p = binomial_two_sided(s, n)
    assert p == binomial_two_sided(n - s, n)
    assert 0 < p <= 1


TOY_PAIRS = [
    ("a good film", "a great film", "alzantot"),
    ("a good film", "a gdoo film", "pruthi"),
    ("the plot was dull", "the story was dull", "textfooler"),
    ("the plot was dull", "the plot wsa dull", "pruthi"),
    ("fine acting here", "fine acting there", "bae"),
    ("fine acting here", "nice acting here", "alzantot"),
]


def test_metric_table_compositional():
    scores = [2.0, 4.0, 1.5, 3.5, 2.5, 3.0]
    rows = {r.metric: r for r in metric_suspicion_correlation(TOY_PAIRS, scores)}
    bleus = [overlap_scores(o, a).bleu for o, a, _ in TOY_PAIRS]
    assert rows["bleu"].r == pytest.approx(correlations(bleus, scores).pearson_r)
    assert rows["bleu"].overall == pytest.approx(np.mean(bleus))
    assert rows["bleu"].group_means["pruthi"] == pytest.approx((bleus[1] + bleus[3]) / 2)
    assert list(rows["bleu"].group_means) == ["alzantot", "pruthi", "textfooler", "bae"]


def test_metric_equal_to_score_and_constant_metric():
    pairs = [("abc", "abd", "x"), ("abc", "xyz", "x"), ("abc", "abcde", "x")]
    dist = [float(levenshtein(o, a)) for o, a, _ in pairs]
    (row,) = metric_suspicion_correlation(pairs, dist, metrics=["levenshtein"])
    assert row.r == pytest.approx(1.0)
    same = [("good film", "good film", "x")] * 3
    (row,) = metric_suspicion_correlation(same, [1.0, 2.0, 3.0], metrics=["bleu"])
    assert row.r is None


def test_metric_table_csv(tmp_path):
    rows = metric_suspicion_correlation(TOY_PAIRS, [2.0, 4.0, 1.5, 3.5, 2.5, 3.0])
    write_metric_table(tmp_path / "m.csv", rows)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "metric,alzantot,pruthi,textfooler,bae,overall,r"
    assert [ln.split(",")[0] for ln in lines[1:]] == list(METRIC_NAMES)
