"""Event ingestion, corpus filtering and train/test splitting."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cascade import EventRecord, build_cascades
from .errors import EmptySplit, ParseError
from .features import FeatureSchema

log = logging.getLogger(__name__)

REQUIRED_KEYS = ("id", "parent_id", "author", "ts", "community", "attrs")


class TooManyMalformed(ParseError):
    pass


@dataclass
class IngestResult:
    events: list
    malformed: list = field(default_factory=list)  # ParseError per bad line
    n_lines: int = 0

    @property
    def malformed_count(self):
        return len(self.malformed)


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def parse_line(line: str, line_no: int, required_attrs=()) -> EventRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(line_no, f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise ParseError(line_no, "record is not an object")
    missing = [k for k in REQUIRED_KEYS if k not in obj]
    if missing:
        raise ParseError(line_no, f"missing {', '.join(missing)}")
    eid, pid, author, ts, community, attrs = (obj[k] for k in REQUIRED_KEYS)
    if not isinstance(eid, str) or not eid:
        raise ParseError(line_no, "id must be a nonempty string")
    if pid is not None and not isinstance(pid, str):
        raise ParseError(line_no, "parent_id must be a string or null")
    if pid == eid:
        raise ParseError(line_no, "event is its own parent")
    if not isinstance(author, str):
        raise ParseError(line_no, "author must be a string")
    if not _is_number(ts):
        raise ParseError(line_no, "ts must be a finite number")
    if community is not None and not isinstance(community, str):
        raise ParseError(line_no, "community must be a string or null")
    if not isinstance(attrs, dict) or not all(_is_number(v) for v in attrs.values()):
        raise ParseError(line_no, "attrs must map names to finite numbers")
    absent = [a for a in required_attrs if a not in attrs]
    if absent:
        raise ParseError(line_no, f"attrs lack {', '.join(absent)}")
    ts = int(ts) if float(ts).is_integer() else float(ts)
    return EventRecord(eid, pid, author, ts, {k: float(v) for k, v in attrs.items()}, community)


def required_attributes(profile: str):
    schema = FeatureSchema.for_profile(profile)
    return sorted({c.quantity for c in schema.attribute_columns() if not c.allow_missing})


def ingest_lines(lines, profile: str = "cascade", max_malformed_fraction: float = 0.1,
                 malformed_allowance: int = 2) -> IngestResult:
    """Parse JSONL records. Bad lines are counted and logged. The run aborts
    with ``TooManyMalformed`` when more than ``max_malformed_fraction`` of the
    lines are bad, unless there are no more than ``malformed_allowance`` of
    them (so a short file with a stray bad line still loads). Blank lines are
    ignored."""
    required = required_attributes(profile)
    result = IngestResult([])
    seen = set()
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        result.n_lines += 1
        try:
            ev = parse_line(line, line_no, required)
            if ev.event_id in seen:
                raise ParseError(line_no, f"duplicate id {ev.event_id!r}")
        except ParseError as err:
            log.warning("%s", err)
            result.malformed.append(err)
            continue
        seen.add(ev.event_id)
        result.events.append(ev)
    bad = result.malformed_count
    if bad > malformed_allowance and bad > max_malformed_fraction * result.n_lines:
        raise TooManyMalformed(result.malformed[-1].line_no,
                               f"{result.malformed_count} of {result.n_lines} lines malformed")
    return result


def ingest_files(paths, profile: str = "cascade", max_malformed_fraction: float = 0.1,
                 malformed_allowance: int = 2) -> IngestResult:
    lines = []
    for p in paths:
        lines.extend(Path(p).read_text(encoding="utf-8").splitlines())
    return ingest_lines(lines, profile, max_malformed_fraction, malformed_allowance)


def file_digest(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()[:16]


# --------------------------------------------------------------------------- manifests and splits


@dataclass
class CorpusManifest:
    source_files: list
    platform_profile: str
    filters: dict
    split_rule: Optional[dict]
    counts: dict  # split name -> {"cascades": n, "nodes": m}
    cascade_ids: dict  # split name -> sorted ids
    input_digest: str = ""

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def filter_trees(trees, min_depth: int = 0):
    """Keep trees whose depth is at least ``min_depth`` (``min_depth=2`` drops
    stars)."""
    return [t for t in trees if t.max_depth >= min_depth]


def split_by_time(trees, boundary):
    train = [t for t in trees if t.root.time < boundary]
    test = [t for t in trees if t.root.time >= boundary]
    return _checked(train, test)


def split_by_ratio(trees, n_train: int, n_test: Optional[int] = None):
    """First ``n_train`` trees in root order for training, the next
    ``n_test`` (default: all the rest) for testing."""
    ordered = sorted(trees, key=lambda t: (t.root.time, t.cascade_id))
    train = ordered[:n_train]
    rest = ordered[n_train:]
    test = rest if n_test is None else rest[:n_test]
    return _checked(train, test)


def split_by_group(trees, key_fn, ratio=(2, 1), seed: int = 0):
    """Assign whole groups to train or test. Groups are shuffled with
    ``seed`` and the first round(G * a / (a + b)) go to training."""
    groups = sorted({key_fn(t) for t in trees}, key=lambda g: (g is None, str(g)))
    order = np.random.default_rng(seed).permutation(len(groups))
    a, b = ratio
    n_train = int(round(len(groups) * a / (a + b)))
    train_groups = {groups[i] for i in order[:n_train]}
    train = [t for t in trees if key_fn(t) in train_groups]
    test = [t for t in trees if key_fn(t) not in train_groups]
    return _checked(train, test)


def _checked(train, test):
    if not train:
        raise EmptySplit("train")
    if not test:
        raise EmptySplit("test")
    return train, test


def apply_split(trees, rule: dict):
    kind = rule["rule"]
    if kind == "time":
        if rule.get("boundary") is None:
            raise ValueError("time split needs a boundary")
        return split_by_time(trees, rule["boundary"])
    if kind == "ratio":
        return split_by_ratio(trees, rule["n_train"], rule.get("n_test"))
    if kind == "group":
        key = rule.get("group_key", "community")
        key_fn = (lambda t: t.community) if key == "community" else (lambda t: t.root.attributes.get(key))
        return split_by_group(trees, key_fn, tuple(rule.get("group_ratio", (2, 1))), rule.get("seed", 0))
    raise ValueError(f"unknown split rule {kind!r}")


def counts(trees):
    return {"cascades": len(trees), "nodes": sum(t.size for t in trees)}


def build_corpus(events, min_depth: int = 0, issues=None):
    return filter_trees(build_cascades(events, issues), min_depth)
