"""Report rendering: JSON documents plus CSV and aligned text tables."""

from __future__ import annotations

import csv
import io

from .metrics import STRUCTURAL_PROPERTIES, ClassificationReport, Histogram
from .storage import atomic_write, write_json


def fmt(v, digits=4):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([("" if v is None else repr(v) if isinstance(v, float) else v) for v in r])
    return buf.getvalue()


def to_text(header, rows) -> str:
    cells = [list(map(str, header))] + [[fmt(v) for v in r] for r in rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_table(stem, header, rows, doc=None):
    """``stem.csv`` and ``stem.txt``, plus ``stem.json`` when ``doc`` is given."""
    atomic_write(f"{stem}.csv", to_csv(header, rows))
    atomic_write(f"{stem}.txt", to_text(header, rows))
    if doc is not None:
        write_json(f"{stem}.json", doc)


CLASS_HEADER = ["predictor", "accuracy", "auc", "precision_0", "recall_0", "f1_0", "support_0",
                "precision_1", "recall_1", "f1_1", "support_1"]


def classification_row(name, r: ClassificationReport):
    return [name, r.accuracy, r.auc, r.precision[0], r.recall[0], r.f1[0], r.support[0],
            r.precision[1], r.recall[1], r.f1[1], r.support[1]]


def profile_rows(profiles):
    rows = []
    for p in profiles:
        rows.extend([p.axis, k, a, c] for k, a, c in p.rows())
    return rows


PROFILE_HEADER = ["axis", "value", "accuracy", "count"]


def profile_doc(task, profiles):
    return {"task": task,
            "profiles": {p.axis: [{"value": k, "accuracy": a, "count": c} for k, a, c in p.rows()]
                         for p in profiles}}


DIVERGENCE_HEADER = ["selection", "trial", "rng_seed", "mean_score"] + list(STRUCTURAL_PROPERTIES)


def divergence_rows(entries):
    return [[name, e["trial"], e["rng_seed"], e["mean_score"]] + [e["js"][k] for k in STRUCTURAL_PROPERTIES]
            for name, e in entries.items()]


def histogram_rows(name, h: Histogram):
    return [[name, lo, hi, c] for lo, hi, c in h.to_rows()]


HISTOGRAM_HEADER = ["property", "lo", "hi", "count"]
