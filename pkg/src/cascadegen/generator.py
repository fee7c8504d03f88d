"""Empirical conditional distributions, the recursive cascade generator built
on them, and the four per-node baseline predictors.

Tables are plain histograms (value -> count) keyed by an integer
conditioning attribute, with a global fallback histogram for keys never seen
in training. No smoothing is applied.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .cascade import CascadeTree, EventRecord, build_cascades
from .errors import CascadeError, EmptyCorpus
from .features import Block, FeatureSchema, block_from_trees, derive_speed_labels

TABLE_FORMAT = "cascadegen.tables"
TABLE_VERSION = "1.0"

CONDITIONS = ("level", "birth_order", "size_bucket")

SCENARIOS = {
    "degree|level": ("branch", "degree", "level"),
    "degree|birth_order": ("branch", "degree", "birth_order"),
    "speed|level": ("speed", "speed_class", "level"),
    "speed|birth_order": ("speed", "speed_class", "birth_order"),
}


def size_bucket(size: int) -> int:
    return int(math.floor(math.log2(size)))


class _Sampler:
    __slots__ = ("values", "cum", "total")

    def __init__(self, hist):
        self.values = sorted(hist)
        self.cum = []
        running = 0
        for v in self.values:
            running += hist[v]
            self.cum.append(running)
        self.total = running

    def draw(self, u):
        return self.values[bisect_right(self.cum, u * self.total)]


class ConditionalTable:
    def __init__(self, target: str, condition: str, table: Mapping[int, Mapping]):
        if condition not in CONDITIONS:
            raise ValueError(f"unknown condition {condition!r}")
        self.target = target
        self.condition = condition
        self.table = {int(k): {v: int(c) for v, c in h.items() if c > 0} for k, h in table.items()}
        if any(not h for h in self.table.values()) or not self.table:
            raise ValueError("every histogram must be nonempty")
        fallback = defaultdict(int)
        for h in self.table.values():
            for v, c in h.items():
                fallback[v] += c
        self.fallback = dict(fallback)
        self._samplers = {k: _Sampler(h) for k, h in self.table.items()}
        self._fallback_sampler = _Sampler(self.fallback)

    @property
    def name(self):
        return f"{self.target}|{self.condition}"

    def histogram(self, key):
        return self.table.get(int(key), self.fallback)

    def probabilities(self, key):
        h = self.histogram(key)
        total = sum(h.values())
        return {v: c / total for v, c in h.items()}

    def sample(self, key, rng: np.random.Generator):
        sampler = self._samplers.get(key, self._fallback_sampler)
        return sampler.draw(rng.random())

    def to_dict(self):
        return {
            "target": self.target,
            "condition": self.condition,
            "table": {str(k): [[v, c] for v, c in sorted(h.items())] for k, h in sorted(self.table.items())},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["target"], d["condition"],
                   {int(k): {v: c for v, c in pairs} for k, pairs in d["table"].items()})

    def __eq__(self, other):
        return (isinstance(other, ConditionalTable) and self.target == other.target
                and self.condition == other.condition and self.table == other.table)


def sample(table: ConditionalTable, key: int, rng: np.random.Generator):
    return table.sample(key, rng)


@dataclass
class TableSet:
    """All fitted tables, keyed by ``"target|condition"``."""

    tables: dict
    attributes: list = field(default_factory=list)

    def __getitem__(self, name) -> ConditionalTable:
        return self.tables[name]

    def __contains__(self, name):
        return name in self.tables

    def to_dict(self):
        return {
            "format": TABLE_FORMAT,
            "version": TABLE_VERSION,
            "attributes": list(self.attributes),
            "tables": [self.tables[k].to_dict() for k in sorted(self.tables)],
        }

    @classmethod
    def from_dict(cls, d):
        from .errors import FormatVersionError

        if d.get("format") != TABLE_FORMAT:
            raise FormatVersionError(f"not a table file: {d.get('format')!r}")
        if str(d.get("version", "")).split(".")[0] != TABLE_VERSION.split(".")[0]:
            raise FormatVersionError(f"unsupported table version {d.get('version')!r}")
        tables = [ConditionalTable.from_dict(t) for t in d["tables"]]
        return cls({t.name: t for t in tables}, list(d.get("attributes", [])))


def fit_conditionals(trees, attributes=()) -> TableSet:
    """Count degree, delay, speed-class and attribute histograms over a corpus.

    ``attributes`` lists the event attributes (user or content) that the
    generator must reproduce; each gets an ``attr|level`` table.
    """
    trees = list(trees)
    if not trees:
        raise EmptyCorpus("cannot fit conditionals on an empty corpus")
    counts = defaultdict(lambda: defaultdict(lambda: defaultdict(int)))
    for tree in trees:
        bucket = size_bucket(tree.size)
        speed = derive_speed_labels(tree)
        for i, node in enumerate(tree.nodes):
            counts["degree|level"][node.level][node.degree] += 1
            counts["degree|birth_order"][node.birth_order][node.degree] += 1
            for attr in attributes:
                v = node.attributes.get(attr)
                if v is not None:
                    counts[f"{attr}|level"][node.level][v] += 1
            if node.parent is not None:
                counts["delay|size_bucket"][bucket][node.short_delay] += 1
                counts["speed_class|level"][node.level][int(speed[i])] += 1
                counts["speed_class|birth_order"][node.birth_order][int(speed[i])] += 1
    tables = {}
    for name, table in counts.items():
        target, condition = name.rsplit("|", 1)
        tables[name] = ConditionalTable(target, condition, {k: dict(h) for k, h in table.items()})
    return TableSet(tables, list(attributes))


@dataclass
class GeneratorConfig:
    max_depth: Optional[int] = 160
    max_size: Optional[int] = 10000
    trials_per_seed: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.max_size is not None and self.max_size < 1:
            raise ValueError("max_size must be >= 1")
        if self.trials_per_seed < 1:
            raise ValueError("trials_per_seed must be >= 1")


@dataclass(frozen=True)
class SeedRoot:
    event_id: str
    timestamp: int
    attributes: Mapping[str, float] = field(default_factory=dict)
    author_id: str = ""
    community: Optional[str] = None

    @classmethod
    def from_tree(cls, tree: CascadeTree) -> "SeedRoot":
        r = tree.root
        return cls(r.event_id, r.time, dict(r.attributes), r.author_id, tree.community)


class GenerationBudgetExceeded(CascadeError):
    pass


def trial_rng(base_seed: int, trial: int) -> np.random.Generator:
    """Independent substream for one generation trial."""
    return np.random.default_rng(np.random.SeedSequence([int(base_seed) & (2**64 - 1), int(trial)]))


def generate_tree(seed: SeedRoot, tables: TableSet, config: GeneratorConfig, rng: np.random.Generator,
                  step_budget: Optional[int] = None) -> CascadeTree:
    """Grow one cascade from ``seed``.

    Structure is grown breadth first from degree|level draws (content and
    user attributes from attr|level at the child's level). Once the final
    size is known, every adoption delay is drawn from delay|size_bucket and
    children are timestamped parent-first. Caps truncate the tree; the
    returned tree has ``truncated`` set when that happened.
    """
    degree_t = tables["degree|level"]
    delay_t = tables["delay|size_bucket"]
    attr_tables = [(a, tables[f"{a}|level"]) for a in tables.attributes if f"{a}|level" in tables]

    parents = [-1]
    levels = [0]
    attrs = [dict(seed.attributes)]
    truncated = False
    queue = deque([0])
    steps = 0
    while queue:
        i = queue.popleft()
        steps += 1
        if step_budget is not None and steps > step_budget:
            raise GenerationBudgetExceeded(f"more than {step_budget} generation steps")
        d = degree_t.sample(levels[i], rng)
        if d <= 0:
            continue
        if config.max_depth is not None and levels[i] >= config.max_depth:
            truncated = True
            continue
        if config.max_size is not None and len(parents) + d > config.max_size:
            d = config.max_size - len(parents)
            truncated = True
        lvl = levels[i] + 1
        for _ in range(d):
            parents.append(i)
            levels.append(lvl)
            attrs.append({a: t.sample(lvl, rng) for a, t in attr_tables})
            queue.append(len(parents) - 1)

    bucket = size_bucket(len(parents))
    times = [seed.timestamp] + [0] * (len(parents) - 1)
    for i in range(1, len(parents)):
        times[i] = times[parents[i]] + int(delay_t.sample(bucket, rng))

    ids = [seed.event_id] + [f"{seed.event_id}/g{i:06d}" for i in range(1, len(parents))]
    events = [
        EventRecord(ids[i], None if parents[i] < 0 else ids[parents[i]], seed.author_id if i == 0 else "",
                    times[i], attrs[i], seed.community)
        for i in range(len(parents))
    ]
    (tree,) = build_cascades(events, strict=True)
    tree.truncated = truncated
    return tree


def generate_trees(seeds, tables: TableSet, config: GeneratorConfig, rng: np.random.Generator) -> list:
    return [generate_tree(s, tables, config, rng) for s in seeds]


def generate_block(seeds, tables: TableSet, config: GeneratorConfig, rng: Optional[np.random.Generator] = None,
                   schema: Optional[FeatureSchema] = None, rng_seed: Optional[int] = None) -> Block:
    """One brick per seed, in seed order. Without an explicit ``rng`` the
    block is drawn from ``config.rng_seed``."""
    seeds = list(seeds)
    if not seeds:
        raise EmptyCorpus("no seeds to generate from")
    if rng is None:
        rng_seed = config.rng_seed if rng_seed is None else rng_seed
        rng = np.random.default_rng(rng_seed)
    schema = schema or FeatureSchema.for_profile("cascade")
    trees = generate_trees(seeds, tables, config, rng)
    return block_from_trees(trees, schema, rng_seed=rng_seed)


def baseline_predict(level: int, birth_order: int, scenario: str, tables: TableSet,
                     rng: np.random.Generator) -> int:
    """Draw a degree (class 1 iff > 0) or a speed class for one node."""
    try:
        _, target, condition = SCENARIOS[scenario]
    except KeyError:
        raise ValueError(f"unknown baseline scenario {scenario!r}") from None
    key = level if condition == "level" else birth_order
    value = tables[f"{target}|{condition}"].sample(int(key), rng)
    return int(value > 0) if target == "degree" else int(value)


def baseline_predict_brick(levels, birth_orders, scenario, tables, rng) -> np.ndarray:
    return np.array([baseline_predict(int(l), int(b), scenario, tables, rng)
                     for l, b in zip(levels, birth_orders)], dtype=np.int8)
