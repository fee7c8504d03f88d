import numpy as np

from cascadegen.cascade import EventRecord, build_cascades


def ev(eid, t, parent=None, attrs=None, author="u", community=None):
    return EventRecord(eid, parent, author, t, attrs or {}, community)


def tree_from_parents(parents, times=None, attrs=None, prefix="n"):
    """Tree from a parent-index list (parents[0] = -1); times default to the index."""
    times = list(range(len(parents))) if times is None else times
    events = [ev(f"{prefix}{i:04d}", times[i], None if p < 0 else f"{prefix}{p:04d}",
                 None if attrs is None else attrs[i]) for i, p in enumerate(parents)]
    (tree,) = build_cascades(events, strict=True)
    return tree


def random_parents(rng, n):
    return [-1] + [int(rng.integers(0, i)) for i in range(1, n)]


def edges_of(tree):
    pos = {node.event_id: i for i, node in enumerate(tree.nodes)}
    return [(pos[n.event_id], pos[n.parent.event_id]) for n in tree.nodes if n.parent is not None]
