"""LSTM-filtered generative test.

A pool of candidate blocks is generated from the same seeds with
independent random substreams. The trained classifier scores each block by
how well its predictions (made without the label-revealing columns) agree
with the generated labels, measured as per-brick AUC. Candidates are ranked
by mean AUC and the best, median and lowest are compared with ground truth
via JS divergence of structural histograms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import AllScoresAbsent, SchemaMismatch
from .features import (ABSENT, Block, FeatureSchema, NormStats, block_from_trees, mask_for_generative_test,
                       normalize_brick)
from .generator import GeneratorConfig, TableSet, generate_trees
from .lstm import ModelParams, predict_many
from .metrics import (STRUCTURAL_PROPERTIES, auc, histogram_edges, js_divergence, structural_histograms)

log = logging.getLogger(__name__)


def derive_seed(base_seed: int, trial: int) -> int:
    """63-bit seed of trial ``trial`` drawn from the (base_seed, trial) substream."""
    ss = np.random.SeedSequence([int(base_seed) & (2**64 - 1), int(trial)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass
class CandidateBlock:
    rng_seed: int
    trial: int = 0
    block: Optional[Block] = None
    trees: Optional[list] = None
    per_brick_auc: list = field(default_factory=list)
    mean_score: Optional[float] = None
    structure: Optional[dict] = None  # structural values, kept when trees are dropped

    def to_dict(self):
        return {"trial": self.trial, "rng_seed": self.rng_seed, "mean_score": self.mean_score,
                "per_brick_auc": self.per_brick_auc}


def generate_candidate(seeds, tables: TableSet, config: GeneratorConfig, trial: int,
                       schema: FeatureSchema, base_seed: Optional[int] = None) -> CandidateBlock:
    base = config.rng_seed if base_seed is None else base_seed
    seed = derive_seed(base, trial)
    trees = generate_trees(seeds, tables, config, np.random.default_rng(seed))
    return CandidateBlock(seed, trial, block_from_trees(trees, schema, rng_seed=seed), trees)


def generate_pool(seeds, tables: TableSet, config: GeneratorConfig, pool_size: int = 1000,
                  schema: Optional[FeatureSchema] = None) -> list:
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    seeds = list(seeds)
    schema = schema or FeatureSchema.for_profile("cascade")
    return [generate_candidate(seeds, tables, config, k, schema) for k in range(pool_size)]


def score_pool(seeds, tables: TableSet, config: GeneratorConfig, pool_size: int, schema: FeatureSchema,
               model, task: str = "branch", stats: Optional[NormStats] = None, progress=None) -> list:
    """Generate and score ``pool_size`` candidates one at a time, keeping only
    their scores (blocks and trees are dropped; ``regenerate`` restores them)."""
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    seeds = list(seeds)
    pool = []
    for k in range(pool_size):
        c = score_block(model, generate_candidate(seeds, tables, config, k, schema), task, stats)
        c.block = None
        c.trees = None
        pool.append(c)
        if progress is not None:
            progress(k, c)
    return pool


def regenerate(candidate: CandidateBlock, seeds, tables: TableSet, config: GeneratorConfig,
               schema: FeatureSchema) -> CandidateBlock:
    fresh = generate_candidate(list(seeds), tables, config, candidate.trial, schema)
    if fresh.rng_seed != candidate.rng_seed:
        raise ValueError("candidate was drawn from a different base seed")
    fresh.per_brick_auc = candidate.per_brick_auc
    fresh.mean_score = candidate.mean_score
    return fresh


def _brick_scores(model: ModelParams, bricks, task, stats):
    prepared = []
    for b in bricks:
        if b.schema.width != model.input_size:
            raise SchemaMismatch(f"brick width {b.schema.width} does not match model input {model.input_size}")
        if stats is not None:
            b = normalize_brick(b, stats)
        prepared.append(mask_for_generative_test(b, task))
    probs = predict_many(model, [b.rows for b in prepared])
    out = []
    for b, p in zip(bricks, probs):
        y = b.labels(task)
        keep = y != ABSENT
        out.append(auc(y[keep], p[keep]))
    return out


def score_block(model, candidate: CandidateBlock, task: str = "branch",
                stats: Optional[NormStats] = None) -> CandidateBlock:
    """Fill in per-brick AUC and the mean score of ``candidate``.

    ``model`` is a single model for ``task``, or a mapping task -> model when
    ``task == "both"`` (per-brick score is then the mean of present AUCs).
    """
    bricks = candidate.block.bricks
    if task == "both":
        if not isinstance(model, Mapping):
            raise ValueError("task 'both' needs a mapping of task -> model")
        per_task = [_brick_scores(model[t], bricks, t, stats) for t in ("branch", "speed")]
        scores = []
        for vals in zip(*per_task):
            present = [v for v in vals if v is not None]
            scores.append(float(np.mean(present)) if present else None)
    else:
        m = model[task] if isinstance(model, Mapping) else model
        scores = _brick_scores(m, bricks, task, stats)
    present = [s for s in scores if s is not None]
    candidate.per_brick_auc = scores
    candidate.mean_score = float(np.mean(present)) if present else None
    return candidate


@dataclass
class RankedPool:
    candidates: list  # sorted, best first; unscored candidates trail
    n_scored: int

    @property
    def best(self) -> CandidateBlock:
        return self.candidates[0]

    @property
    def median(self) -> CandidateBlock:
        return self.candidates[(self.n_scored - 1) // 2]

    @property
    def lowest(self) -> CandidateBlock:
        return self.candidates[self.n_scored - 1]

    @property
    def best_index(self):
        return 0

    @property
    def median_index(self):
        return (self.n_scored - 1) // 2

    @property
    def lowest_index(self):
        return self.n_scored - 1

    def manifest(self):
        return {
            "selected": {"best": self.best.trial, "median": self.median.trial, "lowest": self.lowest.trial},
            "candidates": [c.to_dict() for c in self.candidates],
        }


def rank_and_select(pool: Sequence[CandidateBlock]) -> RankedPool:
    pool = list(pool)
    scored = [c for c in pool if c.mean_score is not None]
    if not scored:
        raise AllScoresAbsent("no candidate has a defined score")
    scored.sort(key=lambda c: (-c.mean_score, c.rng_seed))
    rest = sorted((c for c in pool if c.mean_score is None), key=lambda c: c.rng_seed)
    return RankedPool(scored + rest, len(scored))


def evaluate_selection(selected_trees, ground_truth, anchor: str = "ground_truth",
                       virality_bins: int = 50) -> dict:
    """JS divergence per structural property between the selected trees and
    ground truth. Bins come from the ``anchor`` side."""
    selected_trees = list(selected_trees)
    ground_truth = list(ground_truth)
    if anchor == "ground_truth":
        ref = structural_histograms(ground_truth, virality_bins=virality_bins)
        other = structural_histograms(selected_trees, histogram_edges(ref))
        gt, gen = ref, other
    elif anchor == "generated":
        ref = structural_histograms(selected_trees, virality_bins=virality_bins)
        other = structural_histograms(ground_truth, histogram_edges(ref))
        gt, gen = other, ref
    else:
        raise ValueError(f"unknown anchor {anchor!r}")
    return {k: js_divergence(gt[k], gen[k]) for k in STRUCTURAL_PROPERTIES}


def clamp_counts(selected_trees, ground_truth) -> dict:
    ref = structural_histograms(ground_truth)
    other = structural_histograms(selected_trees, histogram_edges(ref))
    return {k: other[k].clamped for k in STRUCTURAL_PROPERTIES}
