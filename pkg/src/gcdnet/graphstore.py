"""Multi-relation graph container, file ingestion, splitting and synthetic data.

Graph text format::

    nodes=<n> dim=<d> relations=<R>
    features
    <n lines of d space-separated decimals>
    labels
    <n entries from {0, 1, -1}, whitespace separated>
    edges r=0
    <src> <dst>
    ...
    edges r=1
    ...

Blank lines and lines starting with ``#`` are ignored. Edges are undirected:
each ingested pair is stored in both directions and duplicates collapse.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, GraphFormatError, GraphValidationError

FRAUD, BENIGN, UNLABELED = 1, 0, -1

TRAIN, VALID, TEST, NONE = 0, 1, 2, -1
SPLIT_NAMES = {TRAIN: "train", VALID: "valid", TEST: "test", NONE: "none"}


@dataclass(frozen=True)
class Relation:
    """CSR adjacency of one relation. ``indices[indptr[i]:indptr[i+1]]`` are i's neighbours."""

    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n_edges(self):
        """Number of stored (directed) entries, i.e. twice the undirected edge count."""
        return int(self.indices.size)

    def degrees(self):
        return np.diff(self.indptr)

    def edge_arrays(self):
        """``(targets, sources)`` in CSR order: entry e is the edge sources[e] -> targets[e]."""
        targets = np.repeat(np.arange(self.indptr.size - 1, dtype=np.int64), self.degrees())
        return targets, self.indices


def _csr_from_pairs(n, src, dst, symmetric=True):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if symmetric:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    if src.size:
        key = np.unique(src * n + dst)
        rows, cols = key // n, key % n
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return Relation(indptr=indptr, indices=cols.astype(np.int64))


class MultiRelationGraph:
    """Immutable node features, labels and per-relation symmetric adjacency."""

    def __init__(self, features, labels, relations):
        features = np.array(features, dtype=np.float64)
        labels = np.array(labels, dtype=np.int64)
        if features.ndim != 2:
            raise GraphValidationError(f"features must be 2-D, got shape {features.shape}")
        n = features.shape[0]
        if labels.shape != (n,):
            raise GraphValidationError(f"expected {n} labels, got {labels.shape[0]}")
        if not np.isin(labels, (FRAUD, BENIGN, UNLABELED)).all():
            raise GraphValidationError("labels must be 1 (fraud), 0 (benign) or -1 (unlabeled)")
        for r, rel in enumerate(relations):
            if rel.indptr.shape != (n + 1,) or np.any(np.diff(rel.indptr) < 0):
                raise GraphValidationError(f"relation {r}: malformed CSR offsets")
            if rel.indices.size and (rel.indices.min() < 0 or rel.indices.max() >= n):
                raise GraphValidationError(f"relation {r}: neighbour index out of range")
        features.setflags(write=False)
        labels.setflags(write=False)
        for rel in relations:
            rel.indptr.setflags(write=False)
            rel.indices.setflags(write=False)
        self.features = features
        self.labels = labels
        self.relations = tuple(relations)
        self.camouflaged = np.zeros(0, dtype=np.int64)

    @classmethod
    def from_edges(cls, features, labels, edges):
        """Build from per-relation ``(src, dst)`` pair lists, mirroring each edge."""
        features = np.asarray(features, dtype=np.float64)
        n = features.shape[0]
        relations = []
        for r, pairs in enumerate(edges):
            pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
            if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
                bad = pairs[(pairs < 0).any(axis=1) | (pairs >= n).any(axis=1)][0]
                raise GraphValidationError(
                    f"relation {r}: edge ({bad[0]}, {bad[1]}) references a node outside [0, {n})"
                )
            relations.append(_csr_from_pairs(n, pairs[:, 0], pairs[:, 1]))
        return cls(features, labels, relations)

    @property
    def n_nodes(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def n_relations(self):
        return len(self.relations)

    def neighbors(self, node, relation):
        if not 0 <= relation < self.n_relations:
            raise IndexError(f"relation {relation} out of range [0, {self.n_relations})")
        if not 0 <= node < self.n_nodes:
            raise IndexError(f"node {node} out of range [0, {self.n_nodes})")
        rel = self.relations[relation]
        return rel.indices[rel.indptr[node] : rel.indptr[node + 1]]

    def degree(self, node, relation):
        return int(self.neighbors(node, relation).size)

    def undirected_edges(self, relation):
        """Each undirected edge once as ``(i, j)`` with ``i <= j``."""
        targets, sources = self.relations[relation].edge_arrays()
        keep = targets <= sources
        return np.stack([targets[keep], sources[keep]], axis=1)

    def edge_homophily(self, relation):
        """Share of edges between labeled nodes that join two nodes of the same class."""
        pairs = self.undirected_edges(relation)
        a, b = self.labels[pairs[:, 0]], self.labels[pairs[:, 1]]
        known = (a != UNLABELED) & (b != UNLABELED)
        if not known.any():
            return float("nan")
        return float(np.mean(a[known] == b[known]))

    def __repr__(self):
        return (
            f"MultiRelationGraph(n_nodes={self.n_nodes}, dim={self.dim}, "
            f"relations={self.n_relations})"
        )


def neighbors(g, node, relation):
    return g.neighbors(node, relation)


# ------------------------------------------------------------------ file I/O

_HEADER = re.compile(r"^nodes=(\d+)\s+dim=(\d+)\s+relations=(\d+)$")
_EDGES = re.compile(r"^edges\s+r=(\d+)$")


def load_graph(path):
    """Parse a graph text file (see module docstring)."""
    path = Path(path)
    if path.is_dir():
        return load_graph_csv(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    rows = [
        (no, line.strip())
        for no, line in enumerate(lines, start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not rows:
        raise GraphFormatError("empty file", line=1)
    no, head = rows[0]
    m = _HEADER.match(head)
    if not m:
        raise GraphFormatError(f"expected 'nodes=<n> dim=<d> relations=<R>', got {head!r}", line=no)
    n, d, n_rel = (int(v) for v in m.groups())

    features = np.zeros((n, d))
    labels = []
    edges = [[] for _ in range(n_rel)]
    section, filled, current = None, 0, None
    for no, line in rows[1:]:
        if line == "features":
            section, filled = "features", 0
            continue
        if line == "labels":
            if section == "features" and filled != n:
                raise GraphFormatError(f"expected {n} feature rows, found {filled}", line=no)
            section = "labels"
            continue
        em = _EDGES.match(line)
        if em:
            current = int(em.group(1))
            if current >= n_rel:
                raise GraphFormatError(f"relation {current} exceeds declared count {n_rel}", line=no)
            section = "edges"
            continue
        if line.startswith("edges"):
            raise GraphFormatError(f"malformed edge section header {line!r}", line=no)
        parts = line.split()
        try:
            if section == "features":
                if filled >= n:
                    raise GraphFormatError(f"more than {n} feature rows", line=no)
                if len(parts) != d:
                    raise GraphFormatError(f"expected {d} values, found {len(parts)}", line=no)
                features[filled] = [float(v) for v in parts]
                filled += 1
            elif section == "labels":
                labels.extend(int(v) for v in parts)
            elif section == "edges":
                if len(parts) != 2:
                    raise GraphFormatError("edge rows must be 'src dst'", line=no)
                edges[current].append((int(parts[0]), int(parts[1])))
            else:
                raise GraphFormatError(f"data outside any section: {line!r}", line=no)
        except ValueError as exc:
            if isinstance(exc, GraphFormatError):
                raise
            raise GraphFormatError(str(exc), line=no) from None
    if filled != n:
        raise GraphFormatError(f"expected {n} feature rows, found {filled}", line=len(lines))
    if len(labels) != n:
        raise GraphFormatError(f"expected {n} labels, found {len(labels)}", line=len(lines))
    return MultiRelationGraph.from_edges(features, labels, edges)


def load_graph_csv(directory):
    """Three-file CSV form: ``features.csv``, ``labels.csv``, ``edges_r<k>.csv``.

    Header rows are skipped when their first field is not numeric.
    """
    directory = Path(directory)

    def rows(p):
        with open(p, newline="", encoding="utf-8") as fh:
            out = []
            for no, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                try:
                    out.append([float(v) for v in row])
                except ValueError:
                    if no == 1:
                        continue
                    raise GraphFormatError(f"{p.name}: non-numeric row {row!r}", line=no) from None
            return out

    features = np.array(rows(directory / "features.csv"), dtype=np.float64)
    labels = [int(r[-1]) for r in rows(directory / "labels.csv")]
    edge_files = sorted(
        directory.glob("edges_r*.csv"), key=lambda p: int(p.stem.removeprefix("edges_r"))
    )
    edges = [[(int(r[0]), int(r[1])) for r in rows(p)] for p in edge_files]
    return MultiRelationGraph.from_edges(features, labels, edges)


def save_graph(g, path):
    """Write ``g`` in the text format. Floats use ``repr`` so values round-trip exactly."""
    out = [f"nodes={g.n_nodes} dim={g.dim} relations={g.n_relations}", "features"]
    out.extend(" ".join(repr(float(v)) for v in row) for row in g.features)
    out.append("labels")
    out.extend(str(int(v)) for v in g.labels)
    for r in range(g.n_relations):
        out.append(f"edges r={r}")
        out.extend(f"{i} {j}" for i, j in g.undirected_edges(r))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ splitting


@dataclass(frozen=True)
class SplitAssignment:
    assignment: np.ndarray
    seed: int

    def nodes(self, part):
        return np.flatnonzero(self.assignment == part)

    @property
    def train(self):
        return self.nodes(TRAIN)

    @property
    def valid(self):
        return self.nodes(VALID)

    @property
    def test(self):
        return self.nodes(TEST)


def partition_sizes(count, ratios):
    """Cumulative-rounding partition of ``count`` items: sizes sum to ``count`` exactly."""
    bounds = np.floor(np.cumsum(ratios) / np.sum(ratios) * count + 0.5).astype(int)
    bounds[-1] = count
    return tuple(int(v) for v in np.diff(np.concatenate([[0], bounds])))


def stratified_split(g, ratios=(0.4, 0.2, 0.4), seed=0):
    """Per-class shuffle then partition into train/valid/test; unlabeled nodes get none."""
    labels = g.labels if isinstance(g, MultiRelationGraph) else np.asarray(g)
    assignment = np.full(labels.shape[0], NONE, dtype=np.int64)
    rng = np.random.default_rng(seed)
    for cls in (FRAUD, BENIGN):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            name = "fraud" if cls == FRAUD else "benign"
            raise ConfigError(f"no labeled {name} nodes to split")
        members = members[rng.permutation(members.size)]
        start = 0
        for part, size in zip((TRAIN, VALID, TEST), partition_sizes(members.size, ratios)):
            assignment[members[start : start + size]] = part
            start += size
    assignment.setflags(write=False)
    return SplitAssignment(assignment=assignment, seed=seed)


# ------------------------------------------------------------------ synthetic


@dataclass(frozen=True)
class SynthParams:
    n_nodes: int = 2000
    fraud_ratio: float = 0.15
    d: int = 10
    n_relations: int = 2
    avg_degree: float = 10.0
    homophily: float = 0.6
    camouflage_rate: float = 0.4
    camouflage_strength: float = 0.7
    class_separation: float = 3.0
    unlabeled_ratio: float = 0.0
    seed: int = 0

    def validate(self):
        if self.n_nodes < 2:
            raise ConfigError("n_nodes must be at least 2")
        if not 0.0 < self.fraud_ratio < 1.0:
            raise ConfigError("fraud_ratio must lie in (0, 1)")
        if self.d < 1 or self.n_relations < 1:
            raise ConfigError("d and n_relations must be positive")
        if self.avg_degree < 1:
            raise ConfigError("avg_degree must be at least 1")
        if self.avg_degree >= self.n_nodes:
            raise ConfigError(f"avg_degree {self.avg_degree} infeasible for {self.n_nodes} nodes")
        for name in ("homophily", "camouflage_rate", "camouflage_strength"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.unlabeled_ratio < 1.0:
            raise ConfigError("unlabeled_ratio must lie in [0, 1)")
        if self.class_separation < 0:
            raise ConfigError("class_separation must be non-negative")
        n_fraud = self.n_fraud
        if n_fraud < 1 or n_fraud >= self.n_nodes:
            raise ConfigError(f"fraud_ratio {self.fraud_ratio} leaves a class empty")

    @property
    def n_fraud(self):
        return int(math.floor(self.n_nodes * self.fraud_ratio))

    @property
    def fraud_mean(self):
        return np.full(self.d, self.class_separation / math.sqrt(self.d))

    @property
    def benign_mean(self):
        return np.zeros(self.d)


def _sample_pairs(rng, pool_a, pool_b, count, taken, n):
    """Draw up to ``count`` new undirected pairs between two node pools without repeats."""
    same = pool_a is pool_b
    capacity = (
        pool_a.size * (pool_a.size - 1) // 2 if same else pool_a.size * pool_b.size
    )
    count = min(count, capacity)
    pairs = []
    attempts = 0
    while len(pairs) < count and attempts < 50 * max(count, 1):
        attempts += 1
        i = int(pool_a[rng.integers(pool_a.size)])
        j = int(pool_b[rng.integers(pool_b.size)])
        if i == j:
            continue
        key = min(i, j) * n + max(i, j)
        if key in taken:
            continue
        taken.add(key)
        pairs.append((i, j))
    return pairs


def generate_synthetic(p):
    """Camouflaged two-cluster fraud graph.

    Benign features are N(0, I); fraud features are N(mu_f, I) with
    ``|mu_f| = class_separation``. A ``camouflage_rate`` share of fraud nodes
    is pulled toward the benign mean by ``camouflage_strength``. Each relation
    holds ``round(n * avg_degree / 2)`` undirected edges: a ``1 - homophily``
    share join a fraud and a benign node, and the remaining same-class edges
    are split evenly between fraud-fraud and benign-benign, so that every
    node's expected same-class neighbour share equals ``homophily`` in both
    classes and the realized edge homophily matches it too.
    """
    p.validate()
    rng = np.random.default_rng(p.seed)
    n, n_fraud = p.n_nodes, p.n_fraud
    labels = np.zeros(n, dtype=np.int64)
    fraud_nodes = np.sort(rng.choice(n, size=n_fraud, replace=False))
    labels[fraud_nodes] = FRAUD
    benign_nodes = np.flatnonzero(labels == BENIGN)

    features = rng.standard_normal((n, p.d))
    features[fraud_nodes] += p.fraud_mean
    n_camo = int(round(p.camouflage_rate * n_fraud))
    camouflaged = np.sort(rng.choice(fraud_nodes, size=n_camo, replace=False))
    # shift toward the benign mean keeps unit variance
    features[camouflaged] -= p.camouflage_strength * (p.fraud_mean - p.benign_mean)

    n_edges = int(round(n * p.avg_degree / 2.0))
    n_cross = int(round(n_edges * (1.0 - p.homophily)))
    n_ff = (n_edges - n_cross) // 2
    n_bb = n_edges - n_cross - n_ff
    edges = []
    for _ in range(p.n_relations):
        taken = set()
        pairs = _sample_pairs(rng, fraud_nodes, benign_nodes, n_cross, taken, n)
        pairs += _sample_pairs(rng, fraud_nodes, fraud_nodes, n_ff, taken, n)
        pairs += _sample_pairs(rng, benign_nodes, benign_nodes, n_bb, taken, n)
        edges.append(np.array(pairs, dtype=np.int64).reshape(-1, 2))

    if p.unlabeled_ratio > 0:
        hide = rng.random(n) < p.unlabeled_ratio
        labels = np.where(hide, UNLABELED, labels)
    g = MultiRelationGraph.from_edges(features, labels, edges)
    g.camouflaged = camouflaged
    return g
