"""Cascade trees built from raw platform events.

A cascade is a rooted tree of messages (posts/comments, repositories/forks)
where an edge means "responds to". Nodes carry the spatio-temporal
annotations used everywhere else in the package: level, birth order among
siblings, degree and the two adoption delays.
"""

from __future__ import annotations

import heapq
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .errors import CascadeError, CycleDetected, DanglingParent, TimeInversion

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EventRecord:
    event_id: str
    parent_id: Optional[str]
    author_id: str
    timestamp: int
    attributes: Mapping[str, float] = field(default_factory=dict)
    community: Optional[str] = None

    def __post_init__(self):
        if not self.event_id:
            raise ValueError("event_id must be nonempty")
        if self.parent_id is not None and self.parent_id == self.event_id:
            raise ValueError(f"event {self.event_id!r} is its own parent")


@dataclass(eq=False, repr=False)
class CascadeNode:
    event_id: str
    time: int
    level: int = 0
    birth_order: int = 1
    degree: int = 0
    short_delay: int = 0
    long_delay: int = 0
    parent: Optional["CascadeNode"] = None
    children: list = field(default_factory=list)
    author_id: str = ""
    attributes: Mapping[str, float] = field(default_factory=dict)

    @property
    def is_leaf(self):
        return self.degree == 0

    def __repr__(self):
        return (f"CascadeNode({self.event_id!r}, t={self.time}, level={self.level}, "
                f"bo={self.birth_order}, deg={self.degree})")


@dataclass(eq=False)
class CascadeTree:
    """Annotated cascade. Treat as read-only once returned by the builders."""

    root: CascadeNode
    nodes: list  # chronological; nodes[0] is the root
    community: Optional[str] = None
    truncated: bool = False  # set by the generator when a cap cut the tree short

    @property
    def cascade_id(self) -> str:
        return self.root.event_id

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def max_depth(self) -> int:
        return max(n.level for n in self.nodes)

    @property
    def nodes_chronological(self):
        return self.nodes

    def to_events(self) -> list:
        return [
            EventRecord(
                event_id=n.event_id,
                parent_id=None if n.parent is None else n.parent.event_id,
                author_id=n.author_id,
                timestamp=n.time,
                attributes=dict(n.attributes),
                community=self.community,
            )
            for n in self.nodes
        ]

    def signature(self):
        """Hashable structural fingerprint, used to compare trees in tests."""
        return tuple(
            (n.event_id, None if n.parent is None else n.parent.event_id, n.time, n.level,
             n.birth_order, n.degree, n.short_delay, n.long_delay)
            for n in self.nodes
        )


def _assemble(root_ev, child_map) -> CascadeTree:
    """Annotate one tree reachable from ``root_ev``; raises TimeInversion."""
    root = CascadeNode(root_ev.event_id, root_ev.timestamp, author_id=root_ev.author_id,
                       attributes=root_ev.attributes)
    # frontier ordered by (time, event_id); a node only enters once its parent is placed,
    # so equal timestamps can never put a child ahead of its parent
    order = []
    heap = [(root_ev.timestamp, root_ev.event_id, 0, root, root_ev)]
    counter = 1
    while heap:
        _, _, _, node, ev = heapq.heappop(heap)
        order.append(node)
        kids = sorted(child_map.get(ev.event_id, ()), key=lambda e: (e.timestamp, e.event_id))
        node.degree = len(kids)
        for rank, kid in enumerate(kids, start=1):
            if kid.timestamp < ev.timestamp:
                raise TimeInversion(kid.event_id)
            child = CascadeNode(
                kid.event_id,
                kid.timestamp,
                level=node.level + 1,
                birth_order=rank,
                short_delay=kid.timestamp - ev.timestamp,
                long_delay=kid.timestamp - root_ev.timestamp,
                parent=node,
                author_id=kid.author_id,
                attributes=kid.attributes,
            )
            node.children.append(child)
            heapq.heappush(heap, (kid.timestamp, kid.event_id, counter, child, kid))
            counter += 1
    return CascadeTree(root=root, nodes=order, community=root_ev.community)


def build_cascades(events: Iterable[EventRecord], issues: Optional[list] = None,
                   strict: bool = False) -> list:
    """Group events into annotated cascade trees, one per root event.

    Problems that only affect part of the corpus (dangling parents, cycles,
    time inversions) drop the affected subtree or tree. They are appended to
    ``issues`` when a list is given, logged otherwise, and raised immediately
    when ``strict`` is set. Output order is by (root time, root id) so that
    any permutation of the input produces the same result.
    """
    events = list(events)
    if not events:
        raise ValueError("no events")

    def report(err: CascadeError):
        if strict:
            raise err
        if issues is not None:
            issues.append(err)
        else:
            log.warning("%s", err)

    by_id = {}
    for ev in events:
        if ev.event_id in by_id:
            raise ValueError(f"duplicate event_id {ev.event_id!r}")
        by_id[ev.event_id] = ev

    child_map = defaultdict(list)
    roots = []
    dangling = []
    for ev in events:
        if ev.parent_id is None:
            roots.append(ev)
        elif ev.parent_id in by_id:
            child_map[ev.parent_id].append(ev)
        else:
            dangling.append(ev)

    reached = set()

    def mark(start):
        queue = deque([start])
        while queue:
            eid = queue.popleft()
            reached.add(eid)
            queue.extend(c.event_id for c in child_map.get(eid, ()))

    for ev in sorted(dangling, key=lambda e: e.event_id):
        report(DanglingParent(ev.event_id))
        mark(ev.event_id)

    trees = []
    for ev in sorted(roots, key=lambda e: (e.timestamp, e.event_id)):
        mark(ev.event_id)
        try:
            trees.append(_assemble(ev, child_map))
        except TimeInversion as err:
            report(err)

    stranded = [eid for eid in by_id if eid not in reached]
    if stranded:
        report(CycleDetected(stranded))
    return trees


def breadth_profile(tree: CascadeTree) -> dict:
    """Node count per level, levels 0..max_depth."""
    counts = [0] * (tree.max_depth + 1)
    for n in tree.nodes:
        counts[n.level] += 1
    return dict(enumerate(counts))


def max_breadth(tree: CascadeTree) -> int:
    return max(breadth_profile(tree).values())


def wiener_index(tree: CascadeTree) -> int:
    """Sum of shortest-path distances over unordered node pairs.

    Each edge (parent, child) lies on the path of every pair split by it,
    i.e. subtree(child) * (n - subtree(child)) pairs.
    """
    n = tree.size
    sub = {}
    total = 0
    for node in reversed(tree.nodes):  # children always come after parents
        s = 1 + sum(sub[id(c)] for c in node.children)
        sub[id(node)] = s
        if node.parent is not None:
            total += s * (n - s)
    return total


def structural_virality(tree: CascadeTree) -> float:
    n = tree.size
    if n < 2:
        return 0.0
    return wiener_index(tree) / (n * (n - 1) // 2)


def lifetime(tree: CascadeTree) -> int:
    return max(n.time for n in tree.nodes) - tree.root.time
