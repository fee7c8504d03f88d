"""Evaluation metrics: classification reports with rank AUC, accuracy
profiles, histograms and Jensen-Shannon divergence, structural histograms
and the power-law exponent estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .cascade import max_breadth, structural_virality
from .errors import BinningMismatch, TooFewObservations


def auc(labels, scores) -> Optional[float]:
    """Probability that a random positive outscores a random negative, ties
    counting one half (Mann-Whitney form). ``None`` for single-class input."""
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        return None
    ranks = rankdata(s)  # average ranks for ties
    return float((ranks[y].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


@dataclass
class ClassificationReport:
    accuracy: float
    precision: dict
    recall: dict
    f1: dict
    support: dict
    auc: Optional[float]

    @property
    def single_class(self):
        return self.auc is None

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "auc": self.auc,
            "precision": {str(k): v for k, v in self.precision.items()},
            "recall": {str(k): v for k, v in self.recall.items()},
            "f1": {str(k): v for k, v in self.f1.items()},
            "support": {str(k): v for k, v in self.support.items()},
        }


def _ratio(a, b):
    return a / b if b else 0.0


def classification_report(labels, predictions, scores=None) -> ClassificationReport:
    y = np.asarray(labels).astype(np.int64)
    p = np.asarray(predictions).astype(np.int64)
    if y.shape != p.shape:
        raise ValueError("labels and predictions differ in length")
    if y.size == 0:
        raise ValueError("nothing to evaluate")
    precision, recall, f1, support = {}, {}, {}, {}
    for c in (0, 1):
        tp = int(((p == c) & (y == c)).sum())
        pred_c = int((p == c).sum())
        true_c = int((y == c).sum())
        precision[c] = _ratio(tp, pred_c)
        recall[c] = _ratio(tp, true_c)
        f1[c] = _ratio(2 * precision[c] * recall[c], precision[c] + recall[c])
        support[c] = true_c
    acc = float((y == p).mean())
    a = auc(y, p if scores is None else scores)
    return ClassificationReport(acc, precision, recall, f1, support, a)


@dataclass
class AccuracyProfile:
    axis: str
    entries: dict  # axis value -> (accuracy, count)

    def overall(self):
        n = sum(c for _, c in self.entries.values())
        return sum(a * c for a, c in self.entries.values()) / n

    def rows(self):
        return [(k, a, c) for k, (a, c) in sorted(self.entries.items())]


def accuracy_profile(axis_values, correct, axis: str = "level") -> AccuracyProfile:
    axis_values = np.asarray(axis_values)
    correct = np.asarray(correct).astype(bool)
    if axis_values.size == 0:
        raise ValueError("empty profile")
    entries = {}
    for v in np.unique(axis_values):
        sel = axis_values == v
        entries[int(v)] = (float(correct[sel].mean()), int(sel.sum()))
    return AccuracyProfile(axis, entries)


# --------------------------------------------------------------------------- histograms


@dataclass
class Histogram:
    binning: str  # "integer", "log2" or "uniform"
    edges: np.ndarray
    counts: np.ndarray
    clamped: int = 0

    @property
    def total(self):
        return int(self.counts.sum())

    def normalized(self):
        return self.counts / self.counts.sum()

    def to_rows(self):
        return [(float(lo), float(hi), int(c)) for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)]


def integer_edges(max_value):
    return np.arange(0, int(max_value) + 2, dtype=np.float64)


def log2_edges(max_value):
    top = max(1, int(math.ceil(math.log2(max_value + 1))))
    return 2.0 ** np.arange(0, top + 1)


def uniform_edges(max_value, bins=50):
    hi = float(max_value) if max_value > 0 else 1.0
    return np.linspace(0.0, hi, bins + 1)


def histogram(values, edges, binning) -> Histogram:
    """Counts of ``values`` over half-open bins [e_k, e_k+1); values outside
    the edges are clamped into the first/last bin and counted as clamped."""
    values = np.asarray(values, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing with at least one bin")
    idx = np.searchsorted(edges, values, side="right") - 1
    nb = edges.size - 1
    out = (idx < 0) | (idx >= nb)
    # the top edge of the last bin is inclusive for uniform binning
    if binning == "uniform":
        out &= ~(values == edges[-1])
    clamped = int(out.sum())
    idx = np.clip(idx, 0, nb - 1)
    counts = np.bincount(idx, minlength=nb).astype(np.int64)
    return Histogram(binning, edges, counts, clamped)


def js_divergence(p: Histogram, q: Histogram) -> float:
    """Base-2 Jensen-Shannon divergence of two identically binned histograms."""
    if p.binning != q.binning or p.edges.shape != q.edges.shape or not np.array_equal(p.edges, q.edges):
        raise BinningMismatch("histograms use different bins")
    if p.total <= 0 or q.total <= 0:
        raise ValueError("histograms must be nonempty")
    return js_from_probabilities(p.normalized(), q.normalized())


def js_from_probabilities(P, Q) -> float:
    """Base-2 JS divergence of two weight vectors over the same support
    (normalized here). Bins held by one side only contribute their mass
    exactly, so disjoint supports give exactly 1.0."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    sp, sq = math.fsum(P), math.fsum(Q)
    if sp <= 0 or sq <= 0:
        raise ValueError("distributions must have positive mass")
    only_p = math.fsum(P[(P > 0) & (Q == 0)]) / sp
    only_q = math.fsum(Q[(Q > 0) & (P == 0)]) / sq
    both = (P > 0) & (Q > 0)
    p, q = P[both] / sp, Q[both] / sq
    m = 0.5 * (p + q)
    shared = math.fsum(p * np.log2(p / m) + q * np.log2(q / m))
    return min(1.0, max(0.0, 0.5 * (only_p + only_q + shared)))


STRUCTURAL_PROPERTIES = ("size", "max_depth", "max_breadth", "structural_virality")
_BINNING = {"size": "log2", "max_depth": "integer", "max_breadth": "log2", "structural_virality": "uniform"}


def structural_values(trees) -> dict:
    trees = list(trees)
    return {
        "size": np.array([t.size for t in trees], dtype=np.float64),
        "max_depth": np.array([t.max_depth for t in trees], dtype=np.float64),
        "max_breadth": np.array([max_breadth(t) for t in trees], dtype=np.float64),
        "structural_virality": np.array([structural_virality(t) for t in trees], dtype=np.float64),
    }


def structural_edges(values: dict, virality_bins: int = 50) -> dict:
    return {
        "size": log2_edges(values["size"].max()),
        "max_depth": integer_edges(values["max_depth"].max()),
        "max_breadth": log2_edges(values["max_breadth"].max()),
        "structural_virality": uniform_edges(values["structural_virality"].max(), virality_bins),
    }


def structural_histograms(trees, edges: Optional[dict] = None, virality_bins: int = 50) -> dict:
    """Size, depth, breadth and virality histograms of a tree set.

    Pass the ``edges`` of a reference (ground-truth) set so both sides share
    bins; otherwise edges are derived from ``trees`` themselves.
    """
    trees = list(trees)
    if not trees:
        raise ValueError("no trees")
    vals = structural_values(trees)
    if edges is None:
        edges = structural_edges(vals, virality_bins)
    return {k: histogram(vals[k], edges[k], _BINNING[k]) for k in STRUCTURAL_PROPERTIES}


def histogram_edges(hists: dict) -> dict:
    return {k: h.edges for k, h in hists.items()}


# --------------------------------------------------------------------------- power law


def power_law_alpha(sizes, xmin: int, discrete_correction: bool = True, min_observations: int = 10) -> float:
    """Maximum-likelihood power-law exponent over observations >= xmin:
    alpha = 1 + n / sum(ln(x / x0)), with x0 = xmin - 0.5 for integer data."""
    x = np.asarray(sizes, dtype=np.float64)
    x = x[x >= xmin]
    if x.size < min_observations:
        raise TooFewObservations(f"{x.size} observations >= xmin={xmin}, need {min_observations}")
    x0 = xmin - 0.5 if discrete_correction else float(xmin)
    denom = float(np.log(x / x0).sum())
    if denom <= 0:
        raise TooFewObservations("all observations sit at xmin; exponent undefined")
    return 1.0 + x.size / denom
