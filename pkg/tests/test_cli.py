import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from susgrade.cli import main
from susgrade.lexres import Resources
from susgrade.llm import write_canned
from susgrade.pipeline import DATASET_COLUMNS, read_table, write_table
from susgrade.toy import noisy_variant


def run_ok(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"exit {code} for {argv}"


def outputs_without_time(out):
    manifest = json.loads((out / "manifest.json").read_text())
    files = {name: (out / name).read_bytes() for name in manifest["outputs"]}
    del manifest["created"]
    del manifest["config"]["out"]
    return manifest, files


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_entry_point_usage_and_unknown_command():
    res = subprocess.run([sys.executable, "-m", "susgrade.cli"], capture_output=True, text=True)
    assert res.returncode == 2 and "usage" in res.stderr
    res = subprocess.run([sys.executable, "-m", "susgrade.cli", "frobnicate"], capture_output=True, text=True)
    assert res.returncode == 2 and res.stderr


def test_missing_input_is_runtime_error(tmp_path, capsys):
    assert main(["preference-test", "--trials", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 1
    assert "preference-test: error" in capsys.readouterr().err


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"no_such_flag": 1}))
    assert main(["agreement", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_config_supplies_defaults_and_flags_win(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"condition": "non_mturk", "seed": 7}))
    run_ok("agreement", "--config", cfg, "--out", tmp_path / "a")
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert m["config"]["condition"] == "non_mturk" and m["seed"] == 7
    run_ok("agreement", "--config", cfg, "--condition", "main", "--out", tmp_path / "b")
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["config"]["condition"] == "main"


def test_agreement_table(tmp_path, capsys):
    run_ok("agreement", "--out", tmp_path)
    assert "overall delta 0.6" in capsys.readouterr().out
    rows = {r["c_delta"]: r for r in csv.DictReader(open(tmp_path / "disagreement.csv"))}
    assert float(rows["delta"]["overall"]) == pytest.approx(0.61, abs=0.005)
    assert [rows[k]["overall"] for k in "01234"] == ["43", "104", "57", "88", "23"]
    hist = list(csv.reader(open(tmp_path / "histogram.csv")))
    assert hist[0][0] == "score" and hist[1][1] == "944"
    assert {"delta", "means", "n_multi_items"} <= set(json.loads((tmp_path / "summary.json").read_text()))


def test_preference_command(tmp_path, capsys):
    run_ok("preference-test", "--trials", "builtin:preference", "--out", tmp_path)
    assert "p = 0.0106" in capsys.readouterr().out
    assert json.loads((tmp_path / "preference.json").read_text())["wins_a"] == 18


def test_ingest_is_reproducible(tmp_path):
    run_ok("ingest", "--out", tmp_path / "a")
    run_ok("ingest", "--out", tmp_path / "b")
    assert outputs_without_time(tmp_path / "a") == outputs_without_time(tmp_path / "b")
    rows = read_table(tmp_path / "a" / "dataset.tsv")
    assert list(rows[0]) == list(DATASET_COLUMNS)
    counts = json.loads((tmp_path / "a" / "counts.json").read_text())
    assert counts["split"]["train"] + counts["split"]["dev"] + counts["split"]["test"] == len(rows)


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    run_ok("train-victim", "--toy", "--out", root / "victim")
    return root


def victim_flags(root):
    return ["--victim", root / "victim" / "victim.json", "--resources", root / "victim" / "resources"]


def test_train_victim_outputs(toy_run):
    metrics = json.loads((toy_run / "victim" / "metrics.json").read_text())
    assert metrics["test_accuracy"] >= 0.8 and metrics["n_test"] == 100
    assert (toy_run / "victim" / "resources").is_dir()


def test_train_victim_needs_a_corpus(tmp_path):
    assert main(["train-victim", "--out", str(tmp_path)]) == 2


def test_attack_workers_and_reruns_agree(toy_run):
    common = ["attack", *victim_flags(toy_run), "--input", toy_run / "victim" / "test.tsv", "--limit", 12]
    run_ok(*common, "--out", toy_run / "att1")
    run_ok(*common, "--out", toy_run / "att2", "--workers", 3)
    one, two = outputs_without_time(toy_run / "att1"), outputs_without_time(toy_run / "att2")
    assert one[1] == two[1]
    lines = (toy_run / "att1" / "outcomes.jsonl").read_text().splitlines()
    ids = [json.loads(line)["original_id"] for line in lines]
    assert ids == sorted(ids)


@pytest.fixture(scope="module")
def scored_run(toy_run):
    """A small scored corpus: clean test sentences and noisier variants, scored by their noise."""
    resources = Resources.load(toy_run / "victim" / "resources")
    test_rows = read_table(toy_run / "victim" / "test.tsv")[:48]
    rng = np.random.default_rng(0)
    rows = []
    for i, r in enumerate(test_rows):
        split = "train" if i < 32 else ("dev" if i < 40 else "test")
        rows.append((f"{r['item_id']}o", r["text"], "", "original", "1.5", 3, split))
        rate = (0.15, 0.3)[i % 2]
        rows.append((f"{r['item_id']}p", noisy_variant(r["text"], resources, rng, rate), r["text"],
                     ("pruthi", "textfooler")[i % 2], str(1.5 + 8 * rate), 3, split))
    write_table(toy_run / "dataset.tsv", DATASET_COLUMNS, rows)
    run_ok("extract-features", *victim_flags(toy_run), "--input", toy_run / "dataset.tsv", "--out", toy_run / "feat")
    run_ok("train-regressor", "--data", toy_run / "dataset.tsv", "--features", toy_run / "feat" / "features.csv",
           "--family", "linear", "--out", toy_run / "reg")
    return toy_run


def test_feature_and_regressor_commands(scored_run):
    header = next(csv.reader(open(scored_run / "feat" / "features.csv")))
    assert header[0] == "item_id"
    absent = json.loads((scored_run / "feat" / "absent_blocks.json").read_text())
    assert absent["llm"] == 96
    run_ok("evaluate-regressor", "--data", scored_run / "dataset.tsv", "--features",
           scored_run / "feat" / "features.csv", "--model", scored_run / "reg" / "regressor.json", "--out",
           scored_run / "eval")
    rows = list(csv.DictReader(open(scored_run / "eval" / "eval.csv")))
    overall = [r for r in rows if r["model"] == "text+num" and r["subset"] == "all"][0]
    assert int(overall["n"]) == 16 and float(overall["pearson_r"]) > 0.5
    preds = list(csv.DictReader(open(scored_run / "eval" / "predictions.csv")))
    assert len(preds) == 16


def test_overlap_metrics_command(scored_run):
    run_ok("overlap-metrics", "--data", scored_run / "dataset.tsv", "--out", scored_run / "overlap")
    table = list(csv.reader(open(scored_run / "overlap" / "metric_table.csv")))
    assert len(table) > 1
    pairs = list(csv.DictReader(open(scored_run / "overlap" / "pair_scores.csv")))
    assert len(pairs) == 48


def test_sus_attack_and_selection(scored_run):
    common = ["sus-attack", *victim_flags(scored_run), "--regressor", scored_run / "reg" / "regressor.json",
              "--input", scored_run / "victim" / "test.tsv", "--limit", 8, "--mode", "final"]
    run_ok(*common, "--out", scored_run / "sus")
    run_ok(*common, "--out", scored_run / "sus2")
    assert outputs_without_time(scored_run / "sus") == outputs_without_time(scored_run / "sus2")
    for line in (scored_run / "sus" / "constrained.jsonl").read_text().splitlines():
        rec = json.loads(line)
        if rec["accepted"]:
            assert rec["predicted_score"] <= 2.5 and rec["predicted_score"] >= rec["original_score"] - 0.2
    run_ok("select-study", "--baseline", scored_run / "sus" / "baseline.jsonl", "--constrained",
           scored_run / "sus" / "constrained.jsonl", "--out", scored_run / "study")
    sel = json.loads((scored_run / "study" / "selection.json").read_text())
    assert sel["counts"]["baseline"] == len((scored_run / "sus" / "baseline.jsonl").read_text().splitlines())


def test_llm_score_mock(tmp_path):
    rows = [("a", "a fine film ."), ("b", "a fnie flim ."), ("c", "no canned answer")]
    write_table(tmp_path / "in.tsv", ("item_id", "text"), rows)
    write_canned(tmp_path / "canned.json", {"a fine film .": "Score: 1. Reads naturally.",
                                            "a fnie flim .": "I would give this sentence a score of 5."})
    assert main(["llm-score", "--input", str(tmp_path / "in.tsv"), "--out", str(tmp_path / "o")]) == 2
    run_ok("llm-score", "--input", tmp_path / "in.tsv", "--llm-mock", tmp_path / "canned.json", "--out", tmp_path / "o")
    scores = list(csv.DictReader(open(tmp_path / "o" / "llm_scores.csv")))
    assert [(r["item_id"], r["score"]) for r in scores] == [("a", "1"), ("b", "5")]
    failures = list(csv.DictReader(open(tmp_path / "o" / "llm_failures.csv")))
    assert [r["item_id"] for r in failures] == ["c"]
