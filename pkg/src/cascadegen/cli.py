"""Command-line entry point: ``cascadegen <command> [--config F] [--task T] [--seed N] [--out DIR]``.

The run directory defaults to ``$CASCADEGEN_DATA`` (or ``./cascadegen-run``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import pipeline
from .config import RunConfig
from .errors import CascadeError

DATA_ENV = "CASCADEGEN_DATA"
DEFAULT_ROOT = "cascadegen-run"

# config entries a --seed flag overrides, per command
SEED_KEYS = {
    "synth": ("synth.seed",),
    "split": ("corpus.split.seed",),
    "train": ("model.init_seed", "train.shuffle_seed"),
    "evaluate": ("baseline.seed",),
    "generate": ("generator.rng_seed",),
    "rank": ("generator.rng_seed",),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="cascadegen", description="Cascade prediction and generation pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help, task=False):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON run config (merged over defaults)")
        p.add_argument("--seed", type=int, help="override this command's seed")
        p.add_argument("--out", help=f"run directory (default ${DATA_ENV} or ./{DEFAULT_ROOT})")
        if task:
            p.add_argument("--task", choices=["branch", "speed", "both"], default=None)
        return p

    add("synth", "write a synthetic corpus with planted label rules")
    ingest = add("ingest", "validate JSONL events into the event store")
    ingest.add_argument("inputs", nargs="*", help="JSONL files (default: the run's synthetic corpus)")
    add("split", "split the corpus into train and test")
    add("features", "build feature blocks and normalization statistics")
    add("fit-baseline", "fit conditional tables for the generator and baselines")
    add("train", "train the recurrent classifier(s)", task=True)
    add("evaluate", "classification reports and accuracy profiles on the test split", task=True)
    add("generate", "generate one corpus from test-split seeds")
    add("rank", "score a pool of generated blocks and compare selections with ground truth", task=True)
    add("report", "bundle all reports")
    add("pipeline", "run every stage in order")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        keys = SEED_KEYS.get(args.command)
        if keys is None:
            keys = [k for ks in SEED_KEYS.values() for k in ks] if args.command == "pipeline" else ()
        for k in keys:
            cfg.set(k, args.seed)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run = pipeline.Run(args.out or os.environ.get(DATA_ENV) or DEFAULT_ROOT, cfg)
        task = getattr(args, "task", None)
        progress = (lambda entry: print(json.dumps(entry), file=sys.stderr)) if args.verbose else None
        cmd = args.command
        if cmd == "synth":
            print(pipeline.stage_synth(run))
        elif cmd == "ingest":
            m = pipeline.stage_ingest(run, args.inputs)
            print(json.dumps(m.counts, sort_keys=True))
        elif cmd == "split":
            print(json.dumps(pipeline.stage_split(run).counts, sort_keys=True))
        elif cmd == "features":
            pipeline.stage_features(run)
        elif cmd == "fit-baseline":
            pipeline.stage_fit_baseline(run)
        elif cmd == "train":
            pipeline.stage_train(run, task, progress)
        elif cmd == "evaluate":
            for t, reports in pipeline.stage_evaluate(run, task).items():
                for name, r in reports.items():
                    auc = "-" if r.auc is None else f"{r.auc:.4f}"
                    print(f"{t:6s} {name:20s} accuracy {r.accuracy:.4f} auc {auc}")
        elif cmd == "generate":
            print(f"{len(pipeline.stage_generate(run))} trees")
        elif cmd == "rank":
            pipeline.stage_rank(run, task)
            print(run.path("reports", "divergence.txt").read_text(), end="")
        elif cmd == "report":
            pipeline.stage_report(run)
            print(run.path("reports", "summary.txt").read_text(), end="")
        elif cmd == "pipeline":
            pipeline.run_all(run, progress)
            print(run.path("reports", "summary.txt").read_text(), end="")
            print(run.path("reports", "divergence.txt").read_text(), end="")
    except CascadeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
