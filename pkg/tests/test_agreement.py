import csv
import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from susgrade.agreement import (
    LikertHistogram, average_disagreement, binarize, disagreement_by_group, disagreement_numerator,
    histogram_and_means, item_disagreement, lower_median, write_binary_csv, write_disagreement_csv,
    write_histogram_csv,
)
from susgrade.corpus import ScoredItem, labels_by_item

SOURCE_HISTOGRAMS = {
    "original": (234, 227, 39, 83, 20),
    "pruthi": (147, 217, 58, 124, 57),
    "alzantot": (203, 225, 45, 91, 39),
    "textfooler": (210, 209, 56, 88, 40),
    "bae": (150, 184, 56, 135, 78),
}


def test_item_disagreement_examples():
    assert item_disagreement([3, 3, 3]) == 0
    assert disagreement_numerator([1, 1, 5]) == 4
    assert item_disagreement([1, 1, 5]) == Fraction(4, 3)
    assert lower_median([1, 2, 4]) == 2
    assert disagreement_numerator([1, 2, 4]) == 3
    assert item_disagreement([1, 2, 4]) == 1
    with pytest.raises(ValueError):
        item_disagreement([3])


def test_lower_median_for_even_counts():
    assert lower_median([2, 4]) == 2
    assert item_disagreement([2, 4]) == 1


def test_exhaustive_three_annotator_values():
    values = {item_disagreement(t) for t in itertools.product(range(1, 6), repeat=3)}
    assert values == {Fraction(k, 3) for k in range(5)}
    assert max(values) == Fraction(4, 3)


def test_unanimous_group_and_empty_group():
    assert average_disagreement({"a": [2, 2, 2], "b": [5, 5, 5]}).delta == 0
    with pytest.raises(ValueError):
        average_disagreement({})


labels3 = st.lists(st.integers(1, 5), min_size=3, max_size=3)
item_maps = st.dictionaries(st.text("abcdef", min_size=1, max_size=4), labels3, min_size=1, max_size=30)


@settings(max_examples=100, deadline=None)
@given(item_maps, st.randoms())
def test_delta_invariant_to_order(items, rnd):
    keys = list(items)
    rnd.shuffle(keys)
    shuffled = {k: rnd.sample(items[k], len(items[k])) for k in keys}
    assert average_disagreement(shuffled).delta_exact == average_disagreement(items).delta_exact


@settings(max_examples=100, deadline=None)
@given(item_maps, st.integers(1, 5))
def test_unanimous_item_never_increases_delta(items, v):
    before = average_disagreement(items).delta_exact
    after = average_disagreement({**items, "__unanimous__": [v, v, v]}).delta_exact
    assert after <= before
    assert 0 <= before <= Fraction(4, 3)


def test_common_set_disagreement(likert):
    src = {r.id: r.source for r in likert.records}
    multi = {k: v for k, v in labels_by_item(likert.annotations).items() if len(v) > 1}
    reps = disagreement_by_group(multi, src)
    assert list(reps) == ["overall", "original", "pruthi", "alzantot", "textfooler", "bae"]
    assert reps["overall"].frequencies() == (43, 104, 57, 88, 23)
    assert reps["overall"].delta == pytest.approx(0.61, abs=0.005)
    assert reps["original"].delta == pytest.approx(0.50, abs=0.005)
    assert reps["bae"].delta == pytest.approx(0.71, abs=0.005)
    assert reps["overall"].n_items == 315


def test_non_mturk_disagreement(likert_non_mturk):
    items = labels_by_item(likert_non_mturk.annotations)
    assert average_disagreement(items).delta == pytest.approx(0.65, abs=0.005)


def test_histogram_means_from_counts():
    h = LikertHistogram.from_counts(SOURCE_HISTOGRAMS)
    assert h.counts["overall"] == (944, 1062, 254, 521, 234)
    assert h.counts["adversarial"] == tuple(sum(SOURCE_HISTOGRAMS[s][i] for s in list(SOURCE_HISTOGRAMS)[1:]) for i in range(5))
    expected = {"overall": 2.35, "original": 2.05, "adversarial": 2.42, "pruthi": 2.55, "alzantot": 2.23,
                "textfooler": 2.24, "bae": 2.68}
    for g, m in expected.items():
        assert h.mean(g) == pytest.approx(m, abs=0.005)


def test_histogram_single_item():
    h = histogram_and_means([ScoredItem("x", Fraction(4), 1, "single")])
    assert h.mean("overall") == 4


def test_histogram_rounds_means_half_up():
    h = histogram_and_means([ScoredItem("x", Fraction(5, 2), 2, "mean"), ScoredItem("y", Fraction(7, 3), 3, "mean")])
    assert h.counts["overall"] == (0, 1, 1, 0, 0)


def test_binarize_source_histograms():
    h = LikertHistogram.from_counts(SOURCE_HISTOGRAMS)
    sym = binarize(h, "symmetry").proportions["overall"]
    one = binarize(h, "one_vs_other").proportions["overall"]
    assert sym == pytest.approx((0.67, 0.25), abs=0.005)
    assert one == pytest.approx((0.31, 0.69), abs=0.005)


def test_binarize_all_threes():
    items = [ScoredItem(str(i), Fraction(3), 1, "single") for i in range(5)]
    assert binarize(items, "symmetry").proportions["overall"] == (0.0, 0.0)
    with pytest.raises(ValueError):
        binarize(items, "median_split")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 500), min_size=5, max_size=5).filter(lambda c: sum(c) > 0))
def test_binarize_consistent_with_counts(counts):
    h = LikertHistogram.from_counts({"original": counts})
    n = sum(counts)
    h_sym, c_sym = binarize(h, "symmetry").proportions["original"]
    h_one, c_one = binarize(h, "one_vs_other").proportions["original"]
    assert h_sym == pytest.approx((counts[0] + counts[1]) / n)
    assert c_sym == pytest.approx((counts[3] + counts[4]) / n)
    assert h_sym + c_sym <= 1 + 1e-12
    assert h_one + c_one == pytest.approx(1.0)
    assert h.mean("original") == pytest.approx(sum((i + 1) * c for i, c in enumerate(counts)) / n)


def test_csv_exports(tmp_path):
    h = LikertHistogram.from_counts(SOURCE_HISTOGRAMS)
    write_histogram_csv(tmp_path / "h.csv", h)
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["score", "overall", "original", "adversarial", "pruthi", "alzantot", "textfooler", "bae"]
    assert rows[-1][1:3] == ["2.35", "2.05"]
    write_binary_csv(tmp_path / "b.csv", [binarize(h, "symmetry")])
    assert list(csv.reader(open(tmp_path / "b.csv")))[1] == ["symmetry", "overall", "0.67", "0.25"]
    reps = {"overall": average_disagreement({"a": [1, 1, 5], "b": [2, 2, 2]})}
    write_disagreement_csv(tmp_path / "d.csv", reps)
    rows = list(csv.reader(open(tmp_path / "d.csv")))
    assert rows[1] == ["0", "1"] and rows[5] == ["4", "1"] and rows[-1] == ["delta", "0.67"]
