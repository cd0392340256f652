"""Detection metrics, GCD diagnostics and embedding export."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class MetricSet:
    auc: float | None
    f1_macro: float
    g_mean: float
    n_fraud: int
    n_benign: int

    def to_dict(self):
        return asdict(self)


def auc(scores, labels):
    """Mann-Whitney AUC with half credit for ties; ``None`` when a class is missing."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    # average 1-based rank within each run of equal scores
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], scores.size]
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion(pred, labels):
    pred = np.asarray(pred).astype(bool)
    labels = np.asarray(labels).astype(bool)
    tp = int(np.sum(pred & labels))
    tn = int(np.sum(~pred & ~labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    return tp, tn, fp, fn


def _ratio(num, den):
    return num / den if den else 0.0


def _f1(true_pos, false_pos, false_neg):
    precision = _ratio(true_pos, true_pos + false_pos)
    recall = _ratio(true_pos, true_pos + false_neg)
    return _ratio(2 * precision * recall, precision + recall)


def f1_macro(pred, labels):
    tp, tn, fp, fn = confusion(pred, labels)
    return (_f1(tp, fp, fn) + _f1(tn, fn, fp)) / 2.0


def g_mean(pred, labels):
    tp, tn, fp, fn = confusion(pred, labels)
    return math.sqrt(_ratio(tp, tp + fn) * _ratio(tn, tn + fp))


def compute_metrics(scores, labels, thres=0.5):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    pred = scores >= thres
    return MetricSet(
        auc=auc(scores, labels),
        f1_macro=f1_macro(pred, labels),
        g_mean=g_mean(pred, labels),
        n_fraud=int(np.sum(labels == 1)),
        n_benign=int(np.sum(labels == 0)),
    )


# ------------------------------------------------------------ GCD diagnostics


@dataclass(frozen=True)
class DistanceRecord:
    node: int
    relation: int
    gcd: float
    d_typ: float
    d_atyp: float
    d_avg: float
    rate_of_change: float

    def to_dict(self):
        return asdict(self)


def _weighted_distance(alpha, dist):
    return float(np.sum(alpha * dist) / np.sum(alpha))


def node_distances(x, node, neighbours, alpha_typ, alpha_atyp):
    """Attention-weighted and plain mean Euclidean distance from ``node`` to its neighbours."""
    x = np.asarray(x, dtype=np.float64)
    dist = np.linalg.norm(x[neighbours] - x[node], axis=1)
    d_typ = _weighted_distance(alpha_typ, dist)
    d_atyp = _weighted_distance(alpha_atyp, dist)
    d_avg = float(dist.mean())
    return d_typ, d_atyp, d_avg


def gcd_weighted_distances(x, att_typ, att_atyp, gcd, sample_size=20, seed=0, relation=0):
    """Distance report for nodes sampled uniformly among those with neighbours.

    ``att_typ``/``att_atyp`` are the unmasked attentions of one relation.
    """
    x = np.asarray(x, dtype=np.float64)
    gcd = np.asarray(gcd, dtype=np.float64)
    counts = np.bincount(att_typ.targets, minlength=att_typ.n_nodes)
    candidates = np.flatnonzero(counts > 0)
    rng = np.random.default_rng(seed)
    take = min(sample_size, candidates.size)
    chosen = np.sort(rng.choice(candidates, size=take, replace=False)) if take else []
    records = []
    for i in chosen:
        sel_t = att_typ.targets == i
        sel_a = att_atyp.targets == i
        if not np.array_equal(att_typ.sources[sel_t], att_atyp.sources[sel_a]):
            raise ValueError("typical and atypical attentions cover different edges")
        d_typ, d_atyp, d_avg = node_distances(
            x, int(i), att_typ.sources[sel_t], att_typ.alpha[sel_t], att_atyp.alpha[sel_a]
        )
        rate = d_typ / d_avg if d_avg > 0 else 1.0
        records.append(
            DistanceRecord(int(i), relation, float(gcd[i]), d_typ, d_atyp, d_avg, rate)
        )
    return records


@dataclass(frozen=True)
class BinMetrics:
    lo: float
    hi: float
    count: int
    metrics: MetricSet

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi, "count": self.count, **self.metrics.to_dict()}


def gcd_bin_index(gcd, n_bins):
    width = 2.0 / n_bins
    idx = np.floor((np.asarray(gcd, dtype=np.float64) + 1.0) / width).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def per_gcd_range_metrics(scores, labels, gcd, bin_width=0.1, thres=0.5):
    """Metrics of the nodes falling in each GCD bin over [-1, 1]; empty bins are omitted."""
    n_bins = int(round(2.0 / bin_width))
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    idx = gcd_bin_index(gcd, n_bins)
    width = 2.0 / n_bins
    out = []
    for b in range(n_bins):
        sel = idx == b
        if not sel.any():
            continue
        lo = round(-1.0 + b * width, 12)
        out.append(
            BinMetrics(lo, round(lo + width, 12), int(sel.sum()),
                       compute_metrics(scores[sel], labels[sel], thres))
        )
    return out


# ---------------------------------------------------------------------- export


def embedding_header(d):
    return ["node", "label"] + [f"x_{k}" for k in range(d)] + [f"xm_{k}" for k in range(d)]


def export_embeddings(x, x_mixed, labels, path):
    """Write original and mixed features per node as CSV (values via ``repr``)."""
    x = np.asarray(x, dtype=np.float64)
    x_mixed = np.asarray(x_mixed, dtype=np.float64)
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(embedding_header(x.shape[1]))
        for i in range(x.shape[0]):
            w.writerow(
                [i, int(labels[i])]
                + [repr(float(v)) for v in x[i]]
                + [repr(float(v)) for v in x_mixed[i]]
            )
    return path


def read_embeddings(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = (len(header) - 2) // 2
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, 2 + 2 * d))
    return data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2 : 2 + d], data[:, 2 + d :]
