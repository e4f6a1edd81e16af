"""Command line entry point: ``susgrade <subcommand> [flags]``.

Every subcommand writes its artifacts plus ``manifest.json`` (resolved
configuration, seed, input and output digests) into ``--out``. Tabular
outputs are CSV or TSV, structured outputs JSON.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from . import __version__

log = logging.getLogger("susgrade")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- shared plumbing ---------------------------------------------------------------


class Run:
    """Output directory plus the bookkeeping that ends up in the manifest."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: Dict[str, str] = {}

    def input(self, name: str, path) -> Path:
        from .pipeline import resolve
        p = resolve(str(path))
        self.inputs[name] = str(path)
        return p

    def path(self, name: str) -> Path:
        return self.out / name

    def write_json(self, name: str, obj) -> None:
        with open(self.path(name), "w", encoding="utf8") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True)
            fh.write("\n")

    def manifest(self) -> None:
        from .pipeline import resolve, sha256_file
        config = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("handler",)}
        inputs = {}
        for name, p in sorted(self.inputs.items()):
            rp = resolve(p)
            if rp.is_dir():
                inputs[name] = {"path": p, "sha256": {f.name: sha256_file(f) for f in sorted(rp.iterdir()) if f.is_file()}}
            else:
                inputs[name] = {"path": p, "sha256": sha256_file(rp)}
        outputs = {}
        for f in sorted(self.out.rglob("*")):
            if f.is_file() and f.name != "manifest.json":
                outputs[str(f.relative_to(self.out))] = sha256_file(f)
        self.write_json("manifest.json", {
            "command": self.args.command, "version": __version__, "seed": self.args.seed,
            "config": _jsonable(config), "inputs": inputs, "outputs": outputs,
            "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        })


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _load_victim(run: Run):
    from .lexres import Resources
    from .victim import VictimModel
    model = VictimModel.load(run.input("victim", run.args.victim))
    resources = Resources.load(run.input("resources", run.args.resources))
    return model, resources


def _attack_config(args):
    from .attacks import AttackConfig
    return AttackConfig(method=args.method, max_perturb_fraction=args.max_perturb_fraction,
                        min_word_cos=args.min_word_cos, min_sentence_cos=args.min_sentence_cos,
                        k_candidates=args.k_candidates, population=args.population, generations=args.generations,
                        seed=args.seed, query_budget=args.query_budget)


def _records(rows, limit: Optional[int]):
    out = []
    for r in rows:
        label = r.get("label", "")
        out.append((r["item_id"], r["text"], int(label) if label not in ("", None) else None))
    return out[:limit] if limit else out


def _llm_config(args):
    from .llm import LlmConfig
    return LlmConfig(endpoint=args.llm_endpoint, model=args.llm_model, mock=bool(args.llm_mock),
                     canned_path=args.llm_mock)


# -- subcommands -------------------------------------------------------------------


def cmd_ingest(run: Run) -> None:
    from .corpus import common_and_single, load_annotations, source_counts
    from .pipeline import DATASET_COLUMNS, dataset_rows, write_table
    a = run.args
    data = load_annotations(run.input("annotations", a.annotations), a.condition)
    rows = dataset_rows(data, a.seed, (a.train_fraction, 1 - a.train_fraction))
    write_table(run.path("dataset.tsv"), DATASET_COLUMNS, rows)
    multi, single = common_and_single(data.annotations)
    split_counts = {s: sum(1 for r in rows if r[-1] == s) for s in ("train", "dev", "test")}
    run.write_json("counts.json", {
        "sentences": len(data.records), "annotations": len(data.annotations),
        "annotators": len({x.annotator_id for x in data.annotations}),
        "multi_annotated": len(multi), "single_annotated": len(single),
        "by_source": source_counts(data.records), "split": split_counts,
    })
    print(f"{len(rows)} items ({split_counts['train']} train, {split_counts['dev']} dev, {split_counts['test']} test)")


def cmd_train_victim(run: Run) -> None:
    from .lexres import Resources
    from .pipeline import read_table, write_table
    from .toy import build_world
    from .victim import accuracy, train
    a = run.args
    if a.toy:
        world = build_world(a.toy_size, a.seed)
        resources = world.resources
        tr, te = world.split(a.test_fraction)
        test_rows = [(f"t{i:04d}", t, y) for i, (t, y) in enumerate(te)]
    else:
        if not a.corpus or not a.resources:
            raise UsageError("train-victim needs --toy, or both --corpus and --resources")
        rows = read_table(run.input("corpus", a.corpus), ("item_id", "text", "label"))
        resources = Resources.load(run.input("resources", a.resources))
        n_test = int(round(len(rows) * a.test_fraction))
        tr = [(r["text"], int(r["label"])) for r in rows[n_test:]]
        test_rows = [(r["item_id"], r["text"], int(r["label"])) for r in rows[:n_test]]
    model = train([t for t, _ in tr], [y for _, y in tr], lam=a.lam, seed=a.seed)
    model.save(run.path("victim.json"))
    resources.save(run.path("resources"))
    write_table(run.path("test.tsv"), ("item_id", "text", "label"), test_rows)
    metrics = {"train_accuracy": accuracy(model, [t for t, _ in tr], [y for _, y in tr]),
               "test_accuracy": accuracy(model, [r[1] for r in test_rows], [r[2] for r in test_rows]) if test_rows else None,
               "n_train": len(tr), "n_test": len(test_rows), "epochs": model.epochs_run}
    run.write_json("metrics.json", metrics)
    print(f"victim trained: test accuracy {metrics['test_accuracy']}")


def cmd_attack(run: Run) -> None:
    from .attacks import run_attack, write_outcomes
    from .pipeline import read_table
    a = run.args
    model, resources = _load_victim(run)
    records = _records(read_table(run.input("input", a.input), ("item_id", "text")), a.limit)
    cfg = _attack_config(a)
    res = run_attack(model, records, cfg, resources, workers=a.workers)
    write_outcomes(run.path("outcomes.jsonl"), res.outcomes)
    run.write_json("summary.json", {"config": cfg.to_json(), "skipped": res.skipped, **res.summary})
    print(f"{cfg.method}: {res.summary['successes']}/{res.summary['attempted']} successful")


def cmd_extract_features(run: Run) -> None:
    from .features import extract_many, write_features
    from .llm import feature_scorer
    from .pipeline import read_table
    a = run.args
    model, resources = _load_victim(run)
    rows = read_table(run.input("input", a.input), ("item_id", "text"))
    items = [(r["item_id"], r["text"], r.get("original") or None) for r in rows]
    if a.limit:
        items = items[:a.limit]
    llm = feature_scorer(_llm_config(a)) if a.llm_mock or a.llm_live else None
    if a.llm_mock:
        run.input("llm_mock", a.llm_mock)
    fm = extract_many(items, model, resources, llm=llm, workers=a.workers, k_lid=a.k_lid, m_if=a.m_if)
    write_features(run.path("features.csv"), fm)
    absent = {b: sum(1 for m in fm.masks if not m[b]) for b in (fm.masks[0] if fm.masks else {})}
    run.write_json("absent_blocks.json", absent)
    print(f"{len(fm.ids)} feature rows of width {len(fm.names)}")


def _dataset(run: Run, split: Optional[str]):
    from .features import read_features
    from .pipeline import build_dataset, read_table
    a = run.args
    rows = read_table(run.input("data", a.data), ("item_id", "text", "score"))
    run.input("features", a.features)
    fm = read_features(a.features)
    return build_dataset(rows, fm, split), rows, fm


def cmd_train_regressor(run: Run) -> None:
    from .regressor import EnsembleRegressor, fit_numeric, fit_text, save_model, select_numeric, select_text
    a = run.args
    train_set, _, _ = _dataset(run, "train")
    dev_set, _, _ = _dataset(run, "dev")
    if len(train_set) < 10:
        raise ValueError(f"only {len(train_set)} training rows")
    info: Dict[str, object] = {"n_train": len(train_set), "n_dev": len(dev_set), "family": a.family}
    if len(dev_set) >= 3 and not a.no_select:
        text_leg, info["text"] = select_text(train_set, dev_set)
        num_leg, info["numeric"] = select_numeric(train_set, dev_set, a.family, a.seed)
    else:
        text_leg = fit_text(train_set.texts, train_set.targets, a.text_lambda)
        num_leg = fit_numeric(train_set.features, train_set.targets, a.family, None, a.seed, normalize=True)
    model = EnsembleRegressor(text_leg, num_leg)
    save_model(model, run.path("regressor.json"))
    run.write_json("selection.json", _jsonable(info))
    print(f"regressor saved ({a.family})")


def cmd_evaluate_regressor(run: Run) -> None:
    from .regressor import (EnsembleRegressor, evaluate, fit_numeric, fit_text, load_model, predict_dataset,
                            subset_train_eval, write_eval_csv, write_grid_csv)
    a = run.args
    model = load_model(run.input("model", a.model))
    test, rows, _ = _dataset(run, a.split)
    rep = evaluate(model, test)
    reports = {"text+num": rep}
    if isinstance(model, EnsembleRegressor):
        reports["text"] = evaluate(model.text_leg, test)
        reports["numeric"] = evaluate(model.numeric_leg, test)
    write_eval_csv(run.path("eval.csv"), reports)
    pred = predict_dataset(model, test)
    ids = [r["item_id"] for r in rows if r.get("split") == a.split]
    with open(run.path("predictions.csv"), "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "group", "predicted", "observed"])
        for i, g, p, o in zip(ids, test.groups, pred, test.targets):
            w.writerow([i, g, repr(float(p)), repr(float(o))])
    if a.subset_grid:
        train_set, _, _ = _dataset(run, "train")
        family = model.numeric_leg.family if isinstance(model, EnsembleRegressor) else "random_forest"

        def fit(d):
            return EnsembleRegressor(fit_text(d.texts, d.targets, a.text_lambda),
                                     fit_numeric(d.features, d.targets, family, None, a.seed, normalize=True))

        write_grid_csv(run.path("subset_grid.csv"), subset_train_eval(train_set, test, fit))
    r = rep.overall
    print(f"pearson {r.pearson_r} spearman {r.spearman_rho} rmse {r.rmse} (n={r.n})")


def cmd_agreement(run: Run) -> None:
    from .agreement import (binarize, disagreement_by_group, histogram_and_means, write_binary_csv,
                            write_disagreement_csv, write_histogram_csv)
    from .corpus import consolidate, labels_by_item, load_annotations
    a = run.args
    data = load_annotations(run.input("annotations", a.annotations), a.condition)
    source = {r.id: r.source for r in data.records}
    labels = labels_by_item(data.annotations)
    multi = {k: v for k, v in labels.items() if len(v) > 1}
    if not multi:
        raise ValueError("no multiply annotated items; disagreement is undefined")
    reports = disagreement_by_group(multi, source)
    write_disagreement_csv(run.path("disagreement.csv"), reports)
    hist = histogram_and_means(consolidate(data.annotations, "median"), source)
    write_histogram_csv(run.path("histogram.csv"), hist)
    write_binary_csv(run.path("binary_splits.csv"), [binarize(hist, "symmetry"), binarize(hist, "one_vs_other")])
    run.write_json("summary.json", {
        "delta": {g: r.delta for g, r in reports.items()},
        "delta_exact": {g: str(r.delta_exact) for g, r in reports.items()},
        "means": hist.means, "n_multi_items": len(multi),
    })
    print(f"overall delta {reports['overall'].delta:.4f} over {len(multi)} items")


def cmd_overlap_metrics(run: Run) -> None:
    from .lexres import Resources
    from .metrics import metric_suspicion_correlation, overlap_scores, write_metric_table
    from .pipeline import read_table
    a = run.args
    rows = read_table(run.input("data", a.data), ("text", "original", "source", "score"))
    rows = [r for r in rows if r["original"]]
    if not rows:
        raise ValueError("no rows with an original text")
    synonyms = Resources.load(run.input("resources", a.resources)).embeddings if a.resources else None
    pairs = [(r["original"], r["text"], r["source"]) for r in rows]
    scores = [float(r["score"]) for r in rows]
    write_metric_table(run.path("metric_table.csv"), metric_suspicion_correlation(pairs, scores, synonyms))
    with open(run.path("pair_scores.csv"), "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = None
        for r, (o, t, _) in zip(rows, pairs):
            d = overlap_scores(o, t, synonyms).as_dict()
            if names is None:
                names = list(d)
                w.writerow(["item_id", "source", "score", *names])
            w.writerow([r.get("item_id", ""), r["source"], r["score"], *(repr(float(d[n])) for n in names)])
    print(f"{len(pairs)} pairs scored")


def cmd_sus_attack(run: Run) -> None:
    from .attacks import attack, AttackPreconditionError
    from .pipeline import read_table
    from .regressor import load_model
    from .susgen import ConstrainedOutcome, SuspicionConstraint, constrained_attack, constraint_check, ensemble_scorer
    a = run.args
    model, resources = _load_victim(run)
    reg_path = run.input("regressor", a.regressor)
    regressor = load_model(reg_path)
    from .pipeline import sha256_file
    constraint = SuspicionConstraint(ensemble_scorer(regressor, model, resources), a.tau, a.margin,
                                     regressor_id=sha256_file(reg_path)[:12])
    records = _records(read_table(run.input("input", a.input), ("item_id", "text")), a.limit)
    cfg = _attack_config(a)
    baseline: List[ConstrainedOutcome] = []
    constrained: List[ConstrainedOutcome] = []
    for rid, text, label in records:
        try:
            base = attack(model, text, cfg, resources, label=label, original_id=rid)
        except AttackPreconditionError:
            continue
        v = constraint_check(base.perturbed_text, text, constraint)
        baseline.append(ConstrainedOutcome(base, v.predicted, v.original_score, base.success and v.verdict == "accept",
                                           None if not base.success else (None if v.verdict == "accept" else v.verdict),
                                           "none", constraint.regressor_id))
        constrained.append(constrained_attack(model, text, cfg, constraint, resources, label=label, mode=a.mode,
                                              original_id=rid))
    for name, outs in (("baseline.jsonl", baseline), ("constrained.jsonl", constrained)):
        with open(run.path(name), "w", encoding="utf8", newline="\n") as fh:
            for o in outs:
                fh.write(json.dumps(_jsonable(o.to_json()), ensure_ascii=False, sort_keys=True) + "\n")
    summary = {
        "attempted": len(constrained),
        "baseline_success": sum(o.outcome.success for o in baseline),
        "constrained_success": sum(o.outcome.success for o in constrained),
        "constrained_accepted": sum(o.accepted for o in constrained),
        "tau": a.tau, "margin": a.margin, "mode": a.mode,
    }
    run.write_json("summary.json", _jsonable(summary))
    print(f"constrained: {summary['constrained_accepted']}/{summary['attempted']} accepted "
          f"(baseline successes {summary['baseline_success']})")


def _read_constrained(path) -> list:
    from .susgen import ConstrainedOutcome, ScoredVariant
    out = []
    with open(path, encoding="utf8") as fh:
        for line in fh:
            if line.strip():
                c = ConstrainedOutcome.from_json(json.loads(line))
                o = c.outcome
                out.append(ScoredVariant(o.original_id, o.original_text, o.perturbed_text, c.predicted_score,
                                         c.original_score, o.success))
    return out


def cmd_select_study(run: Run) -> None:
    from .susgen import select_study_items, write_study_items
    a = run.args
    base = _read_constrained(run.input("baseline", a.baseline))
    cons = _read_constrained(run.input("constrained", a.constrained))
    sel = select_study_items(cons, base, a.tau, a.margin)
    write_study_items(run.path("study_items.csv"), sel.pairs)
    run.write_json("selection.json", {"counts": sel.counts, "reduction_mean": sel.reduction_mean,
                                      "reduction_std": sel.reduction_std,
                                      "reducible_fraction": sel.reducible_fraction})
    print(f"{sel.counts['selected']} pairs selected out of {sel.counts['above_tau']} above tau")


def cmd_preference_test(run: Run) -> None:
    from .susgen import preference_eval, read_trials
    a = run.args
    res = preference_eval(read_trials(run.input("trials", a.trials)), replication=not a.allow_ties)
    run.write_json("preference.json", asdict(res))
    print(f"wins_a={res.wins_a} wins_b={res.wins_b} discarded={res.discarded} p = {res.p_value:.4f}")


def cmd_llm_score(run: Run) -> None:
    from .llm import batch_score
    from .pipeline import read_table
    a = run.args
    if not (a.llm_mock or a.llm_live):
        raise UsageError("llm-score needs --llm-mock <file> or --llm-live")
    rows = read_table(run.input("input", a.input), ("item_id", "text"))
    if a.llm_mock:
        run.input("llm_mock", a.llm_mock)
    res = batch_score([r["text"] for r in rows], _llm_config(a), rate_limit=a.rate_limit, workers=a.workers)
    with open(run.path("llm_scores.csv"), "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "score", "rationale"])
        for i, j in res.judgements:
            w.writerow([rows[i]["item_id"], j.score, j.rationale])
    with open(run.path("llm_failures.csv"), "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "error"])
        for i, msg in res.failures:
            w.writerow([rows[i]["item_id"], msg])
    print(f"{len(res.judgements)} scored, {len(res.failures)} failed")


# -- parser ------------------------------------------------------------------------


def _add_attack_flags(p):
    from .attacks import METHODS
    p.add_argument("--method", choices=METHODS, default="textfooler")
    p.add_argument("--max-perturb-fraction", type=float, default=None)
    p.add_argument("--min-word-cos", type=float, default=0.5)
    p.add_argument("--min-sentence-cos", type=float, default=0.84)
    p.add_argument("--k-candidates", type=int, default=50)
    p.add_argument("--population", type=int, default=60)
    p.add_argument("--generations", type=int, default=20)
    p.add_argument("--query-budget", type=int, default=2000)
    p.add_argument("--limit", type=int, default=None, help="attack only the first N rows")


def _add_llm_flags(p):
    p.add_argument("--llm-mock", default=None, metavar="JSON", help="canned responses keyed by text digest")
    p.add_argument("--llm-live", action="store_true", help="call the HTTP endpoint (token from SUSGRADE_LLM_TOKEN)")
    p.add_argument("--llm-endpoint", default="https://api.openai.com/v1/chat/completions")
    p.add_argument("--llm-model", default="gpt-3.5-turbo")


def _victim_flags(p):
    p.add_argument("--victim", required=True)
    p.add_argument("--resources", required=True)


COMMANDS: Dict[str, Callable[[Run], None]] = {}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON file of flag defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="susgrade", description="Adversarial text suspicion toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(handler=name)
        COMMANDS[name] = fn
        return p

    p = add("ingest", cmd_ingest, "load an annotation file and build the scored dataset with splits")
    p.add_argument("--annotations", default="builtin:likert")
    p.add_argument("--condition", default="main")
    p.add_argument("--train-fraction", type=float, default=0.9)

    p = add("train-victim", cmd_train_victim, "train the logistic-regression victim")
    p.add_argument("--toy", action="store_true", help="generate the synthetic sentiment world")
    p.add_argument("--toy-size", type=int, default=500)
    p.add_argument("--corpus", default=None, help="TSV with item_id, text, label")
    p.add_argument("--resources", default=None, help="resource directory for a non-toy corpus")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--lam", type=float, default=1e-3)

    p = add("attack", cmd_attack, "attack every correctly classified input row")
    _victim_flags(p)
    p.add_argument("--input", required=True, help="TSV with item_id, text[, label]")
    _add_attack_flags(p)

    p = add("extract-features", cmd_extract_features, "compute suspicion feature vectors")
    _victim_flags(p)
    p.add_argument("--input", required=True, help="TSV with item_id, text[, original]")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--k-lid", type=int, default=20)
    p.add_argument("--m-if", type=int, default=10)
    _add_llm_flags(p)

    for name, fn, help_ in (("train-regressor", cmd_train_regressor, "fit the text+numeric ensemble"),
                            ("evaluate-regressor", cmd_evaluate_regressor, "correlation report on a split")):
        p = add(name, fn, help_)
        p.add_argument("--data", required=True, help="dataset.tsv from ingest")
        p.add_argument("--features", required=True, help="features.csv from extract-features")
        p.add_argument("--text-lambda", type=float, default=1.0)
        if name == "train-regressor":
            from .regressor import FAMILIES
            p.add_argument("--family", choices=FAMILIES, default="random_forest")
            p.add_argument("--no-select", action="store_true", help="skip dev-set model selection")
        else:
            p.add_argument("--model", required=True)
            p.add_argument("--split", default="test")
            p.add_argument("--subset-grid", action="store_true", help="also train per source and cross-evaluate")

    p = add("agreement", cmd_agreement, "score histogram, disagreement and binary splits")
    p.add_argument("--annotations", default="builtin:likert")
    p.add_argument("--condition", default="main")

    p = add("overlap-metrics", cmd_overlap_metrics, "overlap metrics and their correlation with suspicion")
    p.add_argument("--data", required=True, help="TSV with text, original, source, score")
    p.add_argument("--resources", default=None, help="embeddings for METEOR synonym matching")

    p = add("sus-attack", cmd_sus_attack, "baseline and suspicion-constrained attacks")
    _victim_flags(p)
    p.add_argument("--regressor", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--tau", type=float, default=2.5)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--mode", choices=("per_edit", "final"), default="per_edit")
    _add_attack_flags(p)

    p = add("select-study", cmd_select_study, "pick baseline/constrained pairs for a human comparison")
    p.add_argument("--baseline", required=True)
    p.add_argument("--constrained", required=True)
    p.add_argument("--tau", type=float, default=2.5)
    p.add_argument("--margin", type=float, default=0.2)

    p = add("preference-test", cmd_preference_test, "exact binomial test on paired preferences")
    p.add_argument("--trials", required=True, help="CSV with pair_id, votes_a, votes_b")
    p.add_argument("--allow-ties", action="store_true", help="drop tied trials instead of rejecting even totals")

    p = add("llm-score", cmd_llm_score, "score texts with the chat-completion judge")
    p.add_argument("--input", required=True)
    p.add_argument("--rate-limit", type=float, default=60.0, help="requests per minute")
    _add_llm_flags(p)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Defaults < ``--config`` file < explicit flags."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config, encoding="utf8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    known = set(vars(args))
    unknown = sorted(k for k in (key.replace("-", "_") for key in cfg) if k not in known)
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    sub = parser._subparsers._group_actions[0].choices[args.command]  # type: ignore[union-attr]
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:  # argparse already printed its message
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    except UsageError as exc:
        print(f"susgrade: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    run = Run(args)
    try:
        COMMANDS[args.command](run)
        run.manifest()
    except UsageError as exc:
        print(f"susgrade {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"susgrade {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
