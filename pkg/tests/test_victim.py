import numpy as np
import pytest

from susgrade import victim as vm
from susgrade.metrics import pearson
from susgrade.toy import ToyGenerator
from susgrade.victim import VictimModel, accuracy, dknn_stats, influence_score, influence_scores, predict, train

SEPARABLE = (["good film", "great film", "bad film", "awful film"], [1, 1, 0, 0])


def test_separable_corpus_fits():
    m = train(*SEPARABLE, lam=1e-3)
    assert accuracy(m, *SEPARABLE) == 1.0
    assert predict(m, "great film").label == 1


def test_duplicated_corpus_same_weights():
    a = train(*SEPARABLE, lam=1e-2)
    b = train(SEPARABLE[0] * 2, SEPARABLE[1] * 2, lam=1e-2, idf=a.idf)
    assert np.allclose(a.weights, b.weights, atol=1e-8)


def test_heavy_regularisation_predicts_prior():
    texts, labels = ["good", "great", "fine", "bad"], [1, 1, 1, 0]
    m = train(texts, labels, lam=1e6)
    assert np.abs(m.weights).max() < 1e-5
    assert predict(m, "good").probs[1] == pytest.approx(0.75, abs=1e-3)


def test_single_class_rejected():
    with pytest.raises(ValueError):
        train(["a", "b"], [1, 1])


def test_prediction_properties():
    m = train(*SEPARABLE, lam=1e-3)
    p = predict(m, "")
    assert p.probs[1] == pytest.approx(float(vm._sigmoid(m.bias)))
    for text in ("good film", "bad", "unseen words"):
        q = predict(m, text)
        assert sum(q.probs) == pytest.approx(1.0)
        assert 0.5 <= q.probability < 1


def test_toy_victim_accuracy_gate(victim, toy_split):
    _, te = toy_split
    assert accuracy(victim, [t for t, _ in te], [y for _, y in te]) >= 0.8


def test_json_round_trip(tmp_path, victim):
    victim.save(tmp_path / "v.json")
    again = VictimModel.load(tmp_path / "v.json")
    assert np.array_equal(again.weights, victim.weights)
    assert predict(again, "the plot was dull") == predict(victim, "the plot was dull")


def test_digest_mismatch_detected(victim):
    obj = victim.to_json()
    obj["train_texts"] = list(obj["train_texts"])
    obj["train_texts"][0] = "something else entirely"
    with pytest.raises(ValueError, match="digest"):
        VictimModel.from_json(obj)


def test_zero_feature_train_point_has_no_influence():
    texts = ["good film", "bad film", "zzz", "great", "awful"]
    vocab = {w: i for i, w in enumerate(["good", "film", "bad", "great", "awful"])}
    m = train(texts, [1, 0, 1, 1, 0], lam=1e-2, vocabulary=vocab)
    assert not m.X[2].any()
    assert influence_score(m, "good film", 2) == 0.0
    assert influence_score(m, "good film", 0) != 0.0


def test_influence_linear_in_test_gradient():
    m = train(*SEPARABLE, lam=1e-2)
    # the gradient for label 0 versus label 1 differs by the factor (p - 0) / (p - 1)
    p = predict(m, "good film").probs[1]
    s1 = influence_scores(m, "good film", label=1)
    s0 = influence_scores(m, "good film", label=0)
    assert np.allclose(s0, s1 * (p / (p - 1)))


def test_influence_tracks_leave_one_out():
    g = ToyGenerator(1)
    texts, labels = g.corpus(30, label_noise=0.0)
    m = train(texts, labels, lam=0.01, tol=1e-10, max_epochs=20000)
    query = ToyGenerator(101).sentence(1)
    scores = influence_scores(m, query, 1)
    loo = [vm.loo_loss_delta(m, query, i, 1, tol=1e-10, max_epochs=20000) for i in range(30)]
    assert pearson(scores, loo) >= 0.9


def test_dknn_identical_query():
    m = train(*SEPARABLE, lam=1e-3)
    s = dknn_stats(m, "great film")
    assert s.useful_distance == 0.0 and s.useful_rank == 1
    assert 1 <= s.harmful_rank <= 4


def test_dknn_two_points():
    m = train(["good", "bad"], [1, 0], lam=1e-3)
    s = dknn_stats(m, "good")
    assert {s.useful_rank, s.harmful_rank} == {1, 2}


def test_dknn_matches_exhaustive_sort():
    g = ToyGenerator(5)
    texts, labels = g.corpus(10, label_noise=0.0)
    m = train(texts, labels, lam=1e-2)
    query = "the story was really good"
    x = m.vectorize(query)
    d = [float(np.linalg.norm(m.X[i] - x)) for i in range(10)]
    order = sorted(range(10), key=lambda i: (d[i], i))
    pred = predict(m, query).label
    useful = next(k for k, i in enumerate(order) if labels[i] == pred)
    harmful = next(k for k, i in enumerate(order) if labels[i] != pred)
    s = dknn_stats(m, query)
    assert (s.useful_rank, s.harmful_rank) == (useful + 1, harmful + 1)
    assert s.useful_distance == pytest.approx(d[order[useful]])
    assert s.harmful_distance == pytest.approx(d[order[harmful]])


def test_dknn_k_clamped(caplog):
    m = train(["good", "bad", "great"], [1, 0, 1], lam=1e-3)
    s = dknn_stats(m, "good", k=5)
    assert s.harmful_rank <= 3
    assert "clamping" in caplog.text


def test_dknn_nearest_agrees_when_useful_closer(victim, toy_split):
    _, te = toy_split
    for text, _ in te[:30]:
        s = dknn_stats(victim, text)
        if s.useful_distance < s.harmful_distance:
            assert s.useful_rank == 1
