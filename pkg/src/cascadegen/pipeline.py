"""Pipeline stages over a run directory.

Every stage reads its prerequisites from fixed paths below the run
directory, raises ``MissingArtifact`` when one is absent, and writes its
outputs atomically. Outputs carry the hash of the resolved run config.

Layout::

    config/<stage>.json              resolved config archived per stage
    corpus/events.jsonl, rules.json  synthetic corpus (synth)
    corpus/events.bin, manifest.json validated event store (ingest)
    split/manifest.json              train/test cascade ids (split)
    features/{train,test}.block      raw feature blocks + label sidecars
    features/normalization.json      z-score statistics of the train block
    tables/tables.json               conditional tables (fit-baseline)
    models/<task>.model              trained classifiers (train)
    reports/<task>/...               classification reports and profiles (evaluate)
    generate/...                     one generated corpus (generate)
    rank/...                         ranked pool and selected block (rank)
    reports/divergence.*             best / median / lowest JS report (rank)
    reports/report.json, summary.*   bundle (report)
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import storage
from .cascade import build_cascades
from .config import RunConfig
from .corpus import CorpusManifest, apply_split, counts, file_digest, filter_trees, ingest_files
from .errors import MissingArtifact, SchemaMismatch, TooFewObservations
from .features import (ABSENT, Block, FeatureSchema, NormStats, apply_normalization, block_from_trees,
                       fit_normalization, mask_block)
from .generator import SCENARIOS, SeedRoot, baseline_predict_brick, fit_conditionals, generate_trees
from .lstm import init_model, predict_many, train
from .metrics import (STRUCTURAL_PROPERTIES, accuracy_profile, classification_report, power_law_alpha,
                      structural_histograms, structural_values)
from .reports import (CLASS_HEADER, DIVERGENCE_HEADER, HISTOGRAM_HEADER, PROFILE_HEADER, classification_row,
                      divergence_rows, histogram_rows, profile_doc, profile_rows, write_table)
from .selection import evaluate_selection, rank_and_select, regenerate, score_pool
from .synth import event_to_json, synth_corpus

log = logging.getLogger(__name__)

TASKS = ("branch", "speed")


class Run:
    """Paths and config of one run directory."""

    def __init__(self, root, config: RunConfig):
        self.root = Path(root)
        self.config = config

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    def archive(self, stage):
        storage.write_json(self.path("config", f"{stage}.json"),
                           {"config": self.config.to_dict(), "config_hash": self.config.hash()})

    def need(self, name, *parts) -> Path:
        p = self.path(*parts)
        if not p.exists():
            raise MissingArtifact(name, str(p))
        return p

    @property
    def schema(self) -> FeatureSchema:
        return FeatureSchema.for_profile(self.config["corpus"]["profile"])


# --------------------------------------------------------------------------- corpus stages


def stage_synth(run: Run):
    cfg = run.config
    text, rules = synth_corpus(cfg.synth_spec(), cfg["synth"]["seed"])
    storage.atomic_write(run.path("corpus", "events.jsonl"), text)
    storage.write_json(run.path("corpus", "rules.json"), dict(rules, config_hash=cfg.hash()))
    run.archive("synth")
    return run.path("corpus", "events.jsonl")


def stage_ingest(run: Run, inputs=None):
    cfg = run.config
    if not inputs:
        inputs = [run.need("events", "corpus", "events.jsonl")]
    inputs = [Path(p) for p in inputs]
    for p in inputs:
        if not p.exists():
            raise MissingArtifact("events", str(p))
    corpus = cfg["corpus"]
    result = ingest_files(inputs, corpus["profile"], corpus["max_malformed_fraction"],
                          corpus["malformed_allowance"])
    issues = []
    trees = filter_trees(build_cascades(result.events, issues), corpus["min_depth"])
    kept = {ev.event_id for t in trees for ev in t.to_events()}
    events = [ev for ev in result.events if ev.event_id in kept]
    storage.write_events(run.path("corpus", "events.bin"), events)
    manifest = CorpusManifest(
        source_files=[p.name for p in inputs],
        platform_profile=corpus["profile"],
        filters={"min_depth": corpus["min_depth"]},
        split_rule=None,
        counts={"corpus": counts(trees)},
        cascade_ids={"corpus": sorted(t.cascade_id for t in trees)},
        input_digest=file_digest(inputs),
    )
    doc = manifest.to_dict()
    doc.update(malformed_count=result.malformed_count, n_lines=result.n_lines,
               malformed=[{"line": e.line_no, "reason": e.reason} for e in result.malformed],
               dropped_by_tree_checks=[str(e) for e in issues], config_hash=cfg.hash())
    storage.write_json(run.path("corpus", "manifest.json"), doc)
    run.archive("ingest")
    return manifest


def load_trees(run: Run):
    events = storage.read_events(run.need("events store", "corpus", "events.bin"))
    return build_cascades(events)


def stage_split(run: Run):
    cfg = run.config
    corpus_doc = storage.read_json(run.need("corpus manifest", "corpus", "manifest.json"))
    trees = load_trees(run)
    rule = cfg["corpus"]["split"]
    train_trees, test_trees = apply_split(trees, rule)
    manifest = CorpusManifest(
        source_files=corpus_doc["source_files"],
        platform_profile=corpus_doc["platform_profile"],
        filters=corpus_doc["filters"],
        split_rule=rule,
        counts={"corpus": counts(trees), "train": counts(train_trees), "test": counts(test_trees)},
        cascade_ids={"train": [t.cascade_id for t in train_trees], "test": [t.cascade_id for t in test_trees]},
        input_digest=corpus_doc["input_digest"],
    )
    storage.write_json(run.path("split", "manifest.json"), dict(manifest.to_dict(), config_hash=cfg.hash()))
    run.archive("split")
    return manifest


def split_trees(run: Run):
    doc = storage.read_json(run.need("split manifest", "split", "manifest.json"))
    by_id = {t.cascade_id: t for t in load_trees(run)}
    return [by_id[c] for c in doc["cascade_ids"]["train"]], [by_id[c] for c in doc["cascade_ids"]["test"]]


def stage_features(run: Run):
    train_trees, test_trees = split_trees(run)
    schema = run.schema
    train_block = block_from_trees(train_trees, schema)
    test_block = block_from_trees(test_trees, schema)
    stats = fit_normalization(train_block)
    storage.write_block(run.path("features", "train.block"), train_block)
    storage.write_block(run.path("features", "test.block"), test_block)
    storage.write_json(run.path("features", "normalization.json"),
                       dict(stats.to_dict(), schema_digest=schema.digest(), config_hash=run.config.hash()))
    run.archive("features")


def load_stats(run: Run):
    return NormStats.from_dict(storage.read_json(run.need("normalization", "features", "normalization.json")))


def stage_fit_baseline(run: Run):
    train_trees, _ = split_trees(run)
    tables = fit_conditionals(train_trees, run.schema.self_attributes())
    storage.write_tables(run.path("tables", "tables.json"), tables)
    run.archive("fit-baseline")
    return tables


# --------------------------------------------------------------------------- model stages


def _tasks(task):
    return TASKS if task in (None, "both") else (task,)


def stage_train(run: Run, task=None, progress=None):
    cfg = run.config
    block = storage.read_block(run.need("train features", "features", "train.block"))
    stats = load_stats(run)
    tc = cfg.train_config()
    norm = apply_normalization(block, stats)
    out = {}
    for t in _tasks(task):
        data = mask_block(norm, t)
        validation = None
        if tc.patience:
            # hold out the last tenth of the training bricks for early stopping
            cut = max(1, int(len(data.bricks) * 0.9))
            data, validation = Block(data.bricks[:cut], stats), Block(data.bricks[cut:], stats)
        model = init_model(block.schema.width, tuple(cfg["model"]["hidden_sizes"]), t, cfg["model"]["init_seed"])
        model, trace = train(model, data, tc, validation, progress)
        storage.write_model(run.path("models", f"{t}.model"), model, block.schema, stats,
                            {"train": cfg["train"], "model": cfg["model"]}, cfg.hash())
        storage.write_json(run.path("models", f"{t}.trace.json"), {"task": t, "trace": trace,
                                                                   "config_hash": cfg.hash()})
        out[t] = trace
    run.archive("train")
    return out


def _present(brick, task):
    y = brick.labels(task)
    return y != ABSENT


def _profiles(bricks, correct, task):
    keep = [_present(b, task) for b in bricks]
    levels = np.concatenate([b.levels[k] for b, k in zip(bricks, keep)])
    orders = np.concatenate([b.birth_orders[k] for b, k in zip(bricks, keep)])
    return [accuracy_profile(levels, correct, "level"), accuracy_profile(orders, correct, "birth_order")]


def stage_evaluate(run: Run, task=None):
    cfg = run.config
    block = storage.read_block(run.need("test features", "features", "test.block"))
    tables = storage.read_tables(run.need("tables", "tables", "tables.json"))
    results = {}
    for t in _tasks(task):
        model, header = storage.read_model(run.need("model", "models", f"{t}.model"))
        if header["schema_digest"] != block.schema.digest():
            raise SchemaMismatch("model was trained on a different feature schema")
        stats = storage.model_stats(header)
        data = mask_block(apply_normalization(block, stats) if stats is not None else block, t)
        probs = predict_many(model, [b.rows for b in data.bricks])
        keep = [_present(b, t) for b in block.bricks]
        y = np.concatenate([b.labels(t)[k] for b, k in zip(block.bricks, keep)]).astype(np.int64)
        p = np.concatenate([pr[k] for pr, k in zip(probs, keep)])
        pred = (p > 0.5).astype(np.int64)
        report = classification_report(y, pred, p)
        profiles = _profiles(block.bricks, pred == y, t)
        base = run.path("reports", t)
        write_table(base / "model", CLASS_HEADER, [classification_row("lstm", report)],
                    {"task": t, "predictor": "lstm", "report": report.to_dict(), "config_hash": cfg.hash()})
        write_table(base / "profile", PROFILE_HEADER, profile_rows(profiles),
                    dict(profile_doc(t, profiles), config_hash=cfg.hash()))
        results[t] = {"lstm": report}
        for i, (scenario, (scenario_task, _, _)) in enumerate(SCENARIOS.items()):
            if scenario_task != t:
                continue
            rng = np.random.default_rng([cfg["baseline"]["seed"], i])
            preds = [baseline_predict_brick(b.levels, b.birth_orders, scenario, tables, rng)[k]
                     for b, k in zip(block.bricks, keep)]
            bp = np.concatenate(preds).astype(np.int64)
            r = classification_report(y, bp)
            stem = "baseline_" + scenario.replace("|", "_")
            write_table(base / stem, CLASS_HEADER, [classification_row(scenario, r)],
                        {"task": t, "predictor": scenario, "report": r.to_dict(), "config_hash": cfg.hash()})
            results[t][scenario] = r
    run.archive("evaluate")
    return results


# --------------------------------------------------------------------------- generative stages


def _seeds_and_truth(run: Run):
    _, test_trees = split_trees(run)
    truth = test_trees[:run.config["pool"]["n_seeds"]]
    return [SeedRoot.from_tree(t) for t in truth], truth


def stage_generate(run: Run):
    cfg = run.config
    tables = storage.read_tables(run.need("tables", "tables", "tables.json"))
    seeds, _ = _seeds_and_truth(run)
    gcfg = cfg.generator_config()
    rng = np.random.default_rng(gcfg.rng_seed)
    trees = [tree for _ in range(gcfg.trials_per_seed) for tree in generate_trees(seeds, tables, gcfg, rng)]
    text = "".join(event_to_json(ev) + "\n" for tree in trees for ev in tree.to_events())
    storage.atomic_write(run.path("generate", "events.jsonl"), text)
    block = block_from_trees(trees, run.schema, rng_seed=gcfg.rng_seed)
    storage.write_block(run.path("generate", "generated.block"), block)
    storage.write_json(run.path("generate", "summary.json"),
                       {"n_trees": len(trees), "truncated": sum(t.truncated for t in trees),
                        "rng_seed": gcfg.rng_seed, "config_hash": cfg.hash()})
    run.archive("generate")
    return trees


def stage_rank(run: Run, task=None, progress=None):
    cfg = run.config
    score_task = task or cfg["pool"]["score_task"]
    tables = storage.read_tables(run.need("tables", "tables", "tables.json"))
    needed = TASKS if score_task == "both" else (score_task,)
    models = {}
    stats = None
    for t in needed:
        models[t], header = storage.read_model(run.need("model", "models", f"{t}.model"))
        stats = storage.model_stats(header)
    model = models if score_task == "both" else models[score_task]
    seeds, truth = _seeds_and_truth(run)
    gcfg = cfg.generator_config()
    schema = run.schema
    pool = score_pool(seeds, tables, gcfg, cfg["pool"]["size"], schema, model, score_task, stats, progress)
    ranked = rank_and_select(pool)
    storage.write_json(run.path("rank", "pool.json"),
                       dict(ranked.manifest(), task=score_task, base_seed=gcfg.rng_seed, config_hash=cfg.hash()))
    bins = cfg["metrics"]["virality_bins"]
    entries = {}
    for name, cand in (("best", ranked.best), ("median", ranked.median), ("lowest", ranked.lowest)):
        full = regenerate(cand, seeds, tables, gcfg, schema)
        if name == "best":
            storage.write_block(run.path("rank", "best.block"), full.block)
        js = evaluate_selection(full.trees, truth, "ground_truth", bins)
        swapped = evaluate_selection(full.trees, truth, "generated", bins)
        values = structural_values(full.trees)
        entries[name] = {
            "trial": cand.trial, "rng_seed": cand.rng_seed, "mean_score": cand.mean_score, "js": js,
            "js_generated_anchor": swapped,
            "means": {k: float(values[k].mean()) for k in STRUCTURAL_PROPERTIES},
        }
    truth_values = structural_values(truth)
    doc = {"task": score_task, "pool_size": len(pool), "scored": ranked.n_scored, "selections": entries,
           "ground_truth_means": {k: float(truth_values[k].mean()) for k in STRUCTURAL_PROPERTIES},
           "config_hash": cfg.hash()}
    write_table(run.path("reports", "divergence"), DIVERGENCE_HEADER, divergence_rows(entries), doc)
    run.archive("rank")
    return doc


def _corpus_characterization(run: Run):
    train_trees, test_trees = split_trees(run)
    trees = train_trees + test_trees
    hists = structural_histograms(trees, virality_bins=run.config["metrics"]["virality_bins"])
    rows = [r for k in STRUCTURAL_PROPERTIES for r in histogram_rows(k, hists[k])]
    write_table(run.path("reports", "corpus_histograms"), HISTOGRAM_HEADER, rows)
    sizes = [t.size for t in trees]
    try:
        alpha = power_law_alpha(sizes, run.config["metrics"]["power_law_xmin"])
    except TooFewObservations:
        alpha = None
    values = structural_values(trees)
    return {"cascades": len(trees), "nodes": int(sum(sizes)), "power_law_alpha": alpha,
            "power_law_xmin": run.config["metrics"]["power_law_xmin"],
            "means": {k: float(values[k].mean()) for k in STRUCTURAL_PROPERTIES},
            "maxima": {k: float(values[k].max()) for k in STRUCTURAL_PROPERTIES}}


def stage_report(run: Run):
    cfg = run.config
    doc = {"config_hash": cfg.hash(), "classification": {}, "profiles": {}}
    summary = []
    for t in TASKS:
        base = run.path("reports", t)
        model_doc = storage.read_json(run.need(f"{t} model report", "reports", t, "model.json"))
        doc["classification"][t] = {"lstm": model_doc["report"]}
        summary.append([t, "lstm", model_doc["report"]["accuracy"], model_doc["report"]["auc"]])
        for scenario, (scenario_task, _, _) in SCENARIOS.items():
            if scenario_task != t:
                continue
            stem = "baseline_" + scenario.replace("|", "_")
            r = storage.read_json(run.need(f"{scenario} baseline report", "reports", t, f"{stem}.json"))
            doc["classification"][t][scenario] = r["report"]
            summary.append([t, scenario, r["report"]["accuracy"], r["report"]["auc"]])
        doc["profiles"][t] = storage.read_json(base / "profile.json")["profiles"]
    doc["divergence"] = storage.read_json(run.need("divergence report", "reports", "divergence.json"))
    doc["corpus"] = _corpus_characterization(run)
    doc["artifacts"] = {"model_reports": 2, "baseline_reports": 4, "accuracy_profiles": 2, "divergence_reports": 1}
    storage.write_json(run.path("reports", "report.json"), doc)
    write_table(run.path("reports", "summary"), ["task", "predictor", "accuracy", "auc"], summary)
    run.archive("report")
    return doc


STAGES = ("synth", "ingest", "split", "features", "fit-baseline", "train", "evaluate", "generate", "rank",
          "report")


def run_all(run: Run, progress=None):
    stage_synth(run)
    stage_ingest(run)
    stage_split(run)
    stage_features(run)
    stage_fit_baseline(run)
    stage_train(run, progress=progress)
    stage_evaluate(run)
    stage_generate(run)
    stage_rank(run)
    return stage_report(run)
