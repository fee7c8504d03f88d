"""Synthetic event corpora with planted, learnable label rules.

Tree shapes are random; labels are then made a deterministic function of
visible node features by choosing the planted attributes after the shape is
known:

* branch rule: a node has children iff its level is below
  ``max_branch_level`` and it is the root or its parent has at most
  ``wide_parent_degree`` children. With ``sentiment_gate`` an eligible node
  additionally branches only with ``sentiment > 0`` (drawn with probability
  ``branch_prob``); without it sentiment is pure noise;
* speed rule: a non-root node is a late adopter iff ``patience > 0``. Exactly
  floor((n-1)/2) non-root nodes are slow and every slow delay exceeds every
  fast delay, so the median split of the delays reproduces the rule.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .cascade import EventRecord


@dataclass
class SynthSpec:
    n_cascades: int = 2000
    size_min: int = 2
    size_max: int = 50
    branch_prob: float = 1.0
    narrow_prob: float = 0.65
    wide_extra_mean: float = 2.0
    wide_parent_degree: Optional[int] = 2
    sentiment_gate: bool = False
    max_branch_level: int = 8
    fast_delay: tuple = (10, 600)
    slow_delay: tuple = (3600, 86400)
    root_spacing: int = 3600
    start_ts: int = 1_500_000_000
    n_authors: int = 500
    communities: tuple = ("alpha", "beta", "gamma", "delta", "epsilon", "zeta")

    def __post_init__(self):
        if not 2 <= self.size_min <= self.size_max:
            raise ValueError("need 2 <= size_min <= size_max")
        for name in ("branch_prob", "narrow_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.max_branch_level < 1:
            raise ValueError("max_branch_level must be >= 1")
        if not self.sentiment_gate and self.branch_prob != 1.0:
            raise ValueError("without the sentiment gate eligible nodes must always branch (branch_prob=1)")
        self.fast_delay = tuple(self.fast_delay)
        self.slow_delay = tuple(self.slow_delay)
        self.communities = tuple(self.communities)
        if self.fast_delay[1] >= self.slow_delay[0]:
            raise ValueError("fast delays must all be shorter than slow delays")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth spec keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def rules(self):
        terms = ["sentiment > 0"] if self.sentiment_gate else []
        terms.append(f"level < {self.max_branch_level}")
        if self.wide_parent_degree is not None:
            terms.append(f"(root or p_node_degree <= {self.wide_parent_degree})")
        branch = "branch <=> " + " and ".join(terms)
        return {
            "branch": branch,
            "speed": "late <=> patience > 0 (floor((n-1)/2) slow nodes, all slow delays above all fast delays)",
        }


def _draw_degree(spec, rng):
    if rng.random() < spec.narrow_prob:
        return int(rng.integers(1, 3))
    return 3 + int(rng.poisson(spec.wide_extra_mean))


def _shape(spec: SynthSpec, rng):
    """Grow one tree breadth first. A node may branch only below
    max_branch_level and when its parent is not wider than
    wide_parent_degree; the root always branches. Sizes are resampled until
    they land in [size_min, size_max] (the size cap truncates growth)."""
    while True:
        parents, levels, degree = [-1], [0], [0]
        queue = deque([0])
        while queue:
            i = queue.popleft()
            if i > 0:
                if levels[i] >= spec.max_branch_level:
                    continue
                if spec.wide_parent_degree is not None and degree[parents[i]] > spec.wide_parent_degree:
                    continue
                if rng.random() >= spec.branch_prob:
                    continue
            d = min(_draw_degree(spec, rng), spec.size_max - len(parents))
            for _ in range(d):
                parents.append(i)
                levels.append(levels[i] + 1)
                degree.append(0)
                queue.append(len(parents) - 1)
            degree[i] = d
        if len(parents) >= spec.size_min:
            return parents, levels, degree


def _signed(rng, positive, lo=0.1, hi=1.5):
    v = float(rng.uniform(lo, hi))
    return round(v if positive else -v, 6)


def synth_events(spec: SynthSpec, rng_seed: int) -> list:
    """All events of a synthetic corpus, cascade by cascade."""
    rng = np.random.default_rng(rng_seed)
    events = []
    for c in range(spec.n_cascades):
        parents, levels, degree = _shape(spec, rng)
        n = len(parents)
        slow = np.zeros(n, dtype=bool)
        if n > 1:
            chosen = rng.choice(np.arange(1, n), size=(n - 1) // 2, replace=False)
            slow[chosen] = True
        community = spec.communities[int(rng.integers(len(spec.communities)))]
        times = [spec.start_ts + c * spec.root_spacing]
        for i in range(1, n):
            lo, hi = spec.slow_delay if slow[i] else spec.fast_delay
            times.append(times[parents[i]] + int(rng.integers(lo, hi + 1)))
        ids = [f"c{c:05d}"] + [f"c{c:05d}.{i:03d}" for i in range(1, n)]
        for i in range(n):
            eligible = levels[i] < spec.max_branch_level and (
                i == 0 or spec.wide_parent_degree is None or degree[parents[i]] <= spec.wide_parent_degree)
            # ineligible nodes are leaves whatever their sentiment
            if eligible and spec.sentiment_gate:
                sentiment_positive = bool(degree[i] > 0)
            else:
                sentiment_positive = bool(rng.random() < 0.5)
            patience_positive = bool(slow[i]) if i > 0 else bool(rng.random() < 0.5)
            attrs = {"sentiment": _signed(rng, sentiment_positive), "patience": _signed(rng, patience_positive)}
            events.append(EventRecord(ids[i], None if i == 0 else ids[parents[i]],
                                      f"u{int(rng.integers(spec.n_authors)):04d}", times[i], attrs, community))
    return events


def event_to_json(ev: EventRecord) -> str:
    return json.dumps({"id": ev.event_id, "parent_id": ev.parent_id, "author": ev.author_id, "ts": ev.timestamp,
                       "community": ev.community, "attrs": dict(ev.attributes)}, sort_keys=True)


def synth_corpus(spec: SynthSpec, rng_seed: int):
    """``(jsonl_text, rule_description)`` for a synthetic corpus."""
    events = synth_events(spec, rng_seed)
    text = "".join(event_to_json(ev) + "\n" for ev in events)
    rules = {"rng_seed": rng_seed, "spec": spec.to_dict(), "rules": spec.rules()}
    return text, rules
