"""Brick/block feature representation of cascades.

A brick is the N x F matrix of one cascade, one row per node in
chronological order. A block is an ordered list of bricks that share a
schema. Lineage columns (parent / grandparent) that do not exist for a node
hold the sentinel -1 and are tracked with an explicit mask so that genuine
-1 values are never mistaken for structural absence.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .cascade import CascadeTree
from .errors import EmptyCorpus, SchemaMismatch, StatsSchemaMismatch

SENTINEL = -1.0
SCALED_SENTINEL = -3.0
ABSENT = -1  # label code for "no label" (root speed label)

SOURCES = ("cascade", "user", "content")
LINEAGES = ("self", "parent", "grandparent", "root")
CASCADE_QUANTITIES = ("degree", "short_delay", "long_delay", "level", "birth_order")

TASKS = ("branch", "speed")
# columns from which a task's target can be read off directly
TASK_MASKED_COLUMNS = {
    "branch": ("node_degree",),
    "speed": ("node_short_delay", "node_long_delay"),
}


@dataclass(frozen=True)
class Column:
    name: str
    source: str
    lineage: str
    quantity: str  # cascade quantity, or the event attribute name for user/content
    synthetic: bool = False
    allow_missing: bool = False

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"bad source {self.source!r}")
        if self.lineage not in LINEAGES:
            raise ValueError(f"bad lineage {self.lineage!r}")
        if self.source == "cascade" and self.quantity not in CASCADE_QUANTITIES:
            raise ValueError(f"unknown cascade quantity {self.quantity!r}")


CASCADE_COLUMNS = (
    Column("node_degree", "cascade", "self", "degree"),
    Column("node_short_delay", "cascade", "self", "short_delay"),
    Column("node_long_delay", "cascade", "self", "long_delay"),
    Column("node_level", "cascade", "self", "level"),
    Column("node_birth_order", "cascade", "self", "birth_order"),
    Column("p_node_degree", "cascade", "parent", "degree"),
    Column("p_node_birth_order", "cascade", "parent", "birth_order"),
    Column("gp_node_degree", "cascade", "grandparent", "degree"),
    Column("gp_node_birth_order", "cascade", "grandparent", "birth_order"),
)

_PREFIX = {"self": "", "parent": "p_", "grandparent": "gp_", "root": "root_"}


def _lineage_columns(source, attr, lineages, stem=None, **kw):
    stem = stem or attr
    return tuple(Column(_PREFIX[lin] + stem, source, lin, attr, **kw) for lin in lineages)


def _reddit_columns():
    cols = []
    for attr in ("node_author_past_no_comments", "node_author_past_score", "node_author_past_no_acts"):
        cols.append(Column(attr, "user", "self", attr))
    for attr in ("comment_score", "comment_subjectivity", "comment_controversiality"):
        cols.extend(_lineage_columns("content", attr, ("self", "parent", "grandparent")))
    return tuple(cols)


def _github_columns():
    cols = list(_lineage_columns("user", "node_author_age", ("self", "parent", "grandparent", "root"),
                                 stem="node_author_age"))
    # lineage names: p_node_author_age, gp_node_author_age, root_node_author_age
    for attr in ("node_author_influence_score", "node_author_public_repos",
                 "node_author_no_followers", "node_author_no_following"):
        cols.append(Column(attr, "user", "self", attr))
    for attr in ("repo_open_issue_count", "repo_no_watchers"):
        cols.extend(_lineage_columns("content", attr, ("self", "parent", "grandparent", "root")))
    return tuple(cols)


def _synthetic_columns():
    return (
        Column("sentiment", "content", "self", "sentiment", synthetic=True),
        Column("patience", "content", "self", "patience", synthetic=True),
        Column("p_sentiment", "content", "parent", "sentiment", synthetic=True),
    )


PROFILES = {
    "cascade": (),
    "reddit": _reddit_columns(),
    "github": _github_columns(),
    "synthetic": _synthetic_columns(),
}


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple
    platform_profile: str = "custom"

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")
        missing = [c.name for c in CASCADE_COLUMNS if c.name not in names]
        if missing:
            raise ValueError(f"schema lacks required cascade columns {missing}")

    @classmethod
    def for_profile(cls, profile: str) -> "FeatureSchema":
        try:
            extra = PROFILES[profile]
        except KeyError:
            raise ValueError(f"unknown platform profile {profile!r}") from None
        return cls(CASCADE_COLUMNS + extra, profile)

    @property
    def names(self):
        return [c.name for c in self.columns]

    @property
    def width(self):
        return len(self.columns)

    def index(self, name):
        return self.names.index(name)

    def attribute_columns(self, sources=("user", "content")):
        return [c for c in self.columns if c.source in sources]

    def self_attributes(self):
        """Distinct event attributes the schema reads, in column order."""
        seen = []
        for c in self.columns:
            if c.source != "cascade" and c.quantity not in seen:
                seen.append(c.quantity)
        return seen

    def to_dict(self):
        return {
            "platform_profile": self.platform_profile,
            "columns": [
                {"name": c.name, "source": c.source, "lineage": c.lineage, "quantity": c.quantity,
                 "synthetic": c.synthetic, "allow_missing": c.allow_missing}
                for c in self.columns
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Column(**c) for c in d["columns"]), d.get("platform_profile", "custom"))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class FeatureBrick:
    cascade_id: str
    rows: np.ndarray  # (N, F) float64
    labels_branch: np.ndarray  # (N,) int8
    labels_speed: np.ndarray  # (N,) int8, ABSENT for the root
    schema: FeatureSchema
    sentinel_mask: Optional[np.ndarray] = None  # (N, F) bool, True where a lineage value is absent
    levels: Optional[np.ndarray] = None
    birth_orders: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[1] != self.schema.width:
            raise SchemaMismatch(f"brick rows {self.rows.shape} do not match schema width {self.schema.width}")
        self.labels_branch = np.asarray(self.labels_branch, dtype=np.int8)
        self.labels_speed = np.asarray(self.labels_speed, dtype=np.int8)
        if self.sentinel_mask is None:
            self.sentinel_mask = default_sentinel_mask(self.rows, self.schema)
        # structural context for accuracy profiles; read from the raw columns when not given
        if self.levels is None:
            self.levels = self.rows[:, self.schema.index("node_level")].astype(np.int64)
        if self.birth_orders is None:
            self.birth_orders = self.rows[:, self.schema.index("node_birth_order")].astype(np.int64)

    @property
    def size(self):
        return self.rows.shape[0]

    def labels(self, task):
        if task == "branch":
            return self.labels_branch
        if task == "speed":
            return self.labels_speed
        raise ValueError(f"unknown task {task!r}")


def default_sentinel_mask(rows, schema):
    mask = np.zeros(rows.shape, dtype=bool)
    for j, c in enumerate(schema.columns):
        if c.lineage in ("parent", "grandparent"):
            mask[:, j] = rows[:, j] == SENTINEL
    return mask


@dataclass
class Block:
    bricks: list
    normalization_stats: Optional["NormStats"] = None
    rng_seed: Optional[int] = None

    def __post_init__(self):
        if self.bricks:
            digest = self.bricks[0].schema.digest()
            if any(b.schema.digest() != digest for b in self.bricks[1:]):
                raise SchemaMismatch("bricks in a block must share one schema")

    @property
    def schema(self):
        if not self.bricks:
            raise EmptyCorpus("empty block has no schema")
        return self.bricks[0].schema

    def __len__(self):
        return len(self.bricks)

    def __iter__(self):
        return iter(self.bricks)


def derive_branch_labels(tree: CascadeTree) -> np.ndarray:
    return np.array([1 if n.degree > 0 else 0 for n in tree.nodes], dtype=np.int8)


def derive_speed_labels(tree: CascadeTree) -> np.ndarray:
    """Late (1) / early (0) adopter labels against the cascade's median
    non-root delay; a delay equal to the median counts as early."""
    labels = np.full(tree.size, ABSENT, dtype=np.int8)
    if tree.size < 2:
        return labels
    delays = np.array([n.short_delay for n in tree.nodes[1:]], dtype=np.float64)
    labels[1:] = delays > np.median(delays)
    return labels


def _cascade_value(node, quantity):
    return getattr(node, quantity)


def brick_from_tree(tree: CascadeTree, schema: FeatureSchema,
                    attributes: Optional[Callable[[str], Mapping[str, float]]] = None) -> FeatureBrick:
    """Build the feature brick of ``tree``.

    ``attributes`` maps an event id to its user/content attributes; by default
    the attributes stored on the tree nodes are used.
    """
    nodes = tree.nodes
    n = len(nodes)
    pos = {id(node): i for i, node in enumerate(nodes)}
    parent_idx = np.array([-1 if x.parent is None else pos[id(x.parent)] for x in nodes], dtype=np.int64)
    gp_idx = np.where(parent_idx >= 0, parent_idx[np.maximum(parent_idx, 0)], -1)
    gp_idx[parent_idx < 0] = -1
    root_idx = np.zeros(n, dtype=np.int64)
    lineage_idx = {"self": np.arange(n), "parent": parent_idx, "grandparent": gp_idx, "root": root_idx}

    cache = {}

    def base(col):
        key = (col.source, col.quantity)
        if key in cache:
            return cache[key]
        missing = np.zeros(n, dtype=bool)
        if col.source == "cascade":
            vals = np.array([_cascade_value(x, col.quantity) for x in nodes], dtype=np.float64)
        else:
            vals = np.empty(n, dtype=np.float64)
            for i, x in enumerate(nodes):
                attrs = x.attributes if attributes is None else attributes(x.event_id)
                v = attrs.get(col.quantity) if attrs is not None else None
                if v is None:
                    if not col.allow_missing:
                        raise SchemaMismatch(
                            f"event {x.event_id!r} lacks attribute {col.quantity!r} required by {col.name!r}")
                    v = SENTINEL
                    missing[i] = True
                vals[i] = v
        cache[key] = vals, missing
        return cache[key]

    rows = np.empty((n, schema.width), dtype=np.float64)
    mask = np.zeros((n, schema.width), dtype=bool)
    for j, col in enumerate(schema.columns):
        idx = lineage_idx[col.lineage]
        vals, missing = base(col)
        safe = np.maximum(idx, 0)
        absent = (idx < 0) | missing[safe]
        rows[:, j] = np.where(absent, SENTINEL, vals[safe])
        mask[:, j] = absent

    return FeatureBrick(
        cascade_id=tree.cascade_id,
        rows=rows,
        labels_branch=derive_branch_labels(tree),
        labels_speed=derive_speed_labels(tree),
        schema=schema,
        sentinel_mask=mask,
        levels=np.array([x.level for x in nodes], dtype=np.int64),
        birth_orders=np.array([x.birth_order for x in nodes], dtype=np.int64),
    )


def block_from_trees(trees: Sequence[CascadeTree], schema: FeatureSchema, attributes=None,
                     rng_seed=None) -> Block:
    return Block([brick_from_tree(t, schema, attributes) for t in trees], rng_seed=rng_seed)


@dataclass
class NormStats:
    names: list
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"names": list(self.names), "mean": [float(x) for x in self.mean],
                "std": [float(x) for x in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["names"]), np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def fit_normalization(block: Block) -> NormStats:
    """Per-column mean and population std over every row of every brick.

    Structurally absent lineage entries are ignored. Constant (or empty)
    columns get std 1.
    """
    if not block.bricks:
        raise EmptyCorpus("cannot fit normalization on an empty block")
    width = block.schema.width
    total = np.zeros(width)
    count = np.zeros(width)
    for b in block.bricks:
        keep = ~b.sentinel_mask
        total += np.where(keep, b.rows, 0.0).sum(axis=0)
        count += keep.sum(axis=0)
    mean = np.divide(total, count, out=np.zeros(width), where=count > 0)
    sq = np.zeros(width)
    for b in block.bricks:
        keep = ~b.sentinel_mask
        sq += np.where(keep, (b.rows - mean) ** 2, 0.0).sum(axis=0)
    var = np.divide(sq, count, out=np.zeros(width), where=count > 0)
    std = np.sqrt(var)
    std = np.where(std < 1e-8, 1.0, std)
    return NormStats(block.schema.names, mean, std)


def normalize_brick(brick: FeatureBrick, stats: NormStats) -> FeatureBrick:
    if list(stats.names) != brick.schema.names:
        raise StatsSchemaMismatch("normalization stats were fitted on a different schema")
    scaled = (brick.rows - stats.mean) / stats.std
    scaled[brick.sentinel_mask] = SCALED_SENTINEL
    return replace(brick, rows=scaled)


def apply_normalization(block: Block, stats: NormStats) -> Block:
    return Block([normalize_brick(b, stats) for b in block.bricks], normalization_stats=stats,
                 rng_seed=block.rng_seed)


def denormalize_rows(rows, stats: NormStats):
    return rows * stats.std + stats.mean


def mask_for_generative_test(brick: FeatureBrick, task: str) -> FeatureBrick:
    """Copy of ``brick`` with the task's label-revealing columns zeroed."""
    try:
        names = TASK_MASKED_COLUMNS[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}") from None
    rows = brick.rows.copy()
    for name in names:
        rows[:, brick.schema.index(name)] = 0.0
    return replace(brick, rows=rows)


def mask_block(block: Block, task: str) -> Block:
    return Block([mask_for_generative_test(b, task) for b in block.bricks],
                 normalization_stats=block.normalization_stats, rng_seed=block.rng_seed)
