"""Training loop, early stopping and label-access auditing."""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .evalkit import MetricSet, compute_metrics
from .graphstore import BENIGN, FRAUD, SPLIT_NAMES, UNLABELED
from .model import GcdGnn
from .protogcd import init_prototypes, update_prototypes

log = logging.getLogger(__name__)

BCE_EPS = 1e-12
TRAINING_PURPOSES = ("prototype", "gcd", "loss")


class LabelView:
    """Label access that records how many labels of each split every caller reads."""

    def __init__(self, labels, split):
        self._labels = np.asarray(labels)
        self._split = split
        self.reads = Counter()

    def read(self, nodes, purpose):
        nodes = np.asarray(nodes, dtype=np.int64)
        parts = self._split.assignment[nodes]
        for part, count in zip(*np.unique(parts, return_counts=True)):
            self.reads[(purpose, SPLIT_NAMES[int(part)])] += int(count)
        return self._labels[nodes].copy()

    def training_labels(self, purpose):
        """Full-length label vector exposing only training nodes; the rest read as unlabeled."""
        out = np.full(self._labels.shape[0], UNLABELED, dtype=np.int64)
        train = self._split.train
        out[train] = self.read(train, purpose)
        return out

    def leaked_reads(self):
        return sum(
            count
            for (purpose, part), count in self.reads.items()
            if purpose in TRAINING_PURPOSES and part in ("valid", "test")
        )


def bce_loss(prob, labels, weights=None):
    """Weighted binary cross-entropy, normalized by the total weight.

    Probabilities are clamped to ``[1e-12, 1 - 1e-12]``.
    """
    labels = np.asarray(labels, dtype=np.float64)
    w = np.ones_like(labels) if weights is None else np.asarray(weights, dtype=np.float64)
    p = nk.clip(prob, BCE_EPS, 1.0 - BCE_EPS)
    per_node = labels * nk.log(p) + (1.0 - labels) * nk.log(1.0 - p)
    return -(per_node * w).sum() / float(w.sum())


def class_weights(labels, config):
    """Per-node weights: fraud nodes get ``n_benign / n_fraud`` of the training split."""
    labels = np.asarray(labels)
    if not config.class_weighted:
        return lambda y: np.ones(len(y))
    n_fraud = int(np.sum(labels == FRAUD))
    n_benign = int(np.sum(labels == BENIGN))
    w_fraud = n_benign / n_fraud if n_fraud else 1.0
    return lambda y: np.where(np.asarray(y) == FRAUD, w_fraud, 1.0)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float | None
    valid: MetricSet

    def to_dict(self):
        return {"epoch": self.epoch, "train_loss": self.train_loss, **{
            f"valid_{k}": v for k, v in self.valid.to_dict().items()
        }}


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    test: MetricSet | None = None
    # wall-clock seconds per epoch; kept apart so the rest stays reproducible
    timings: list = field(default_factory=list)

    @property
    def best_valid_auc(self):
        return self.epochs[self.best_epoch].valid.auc

    def summary(self):
        return {
            "best_epoch": self.best_epoch,
            "best_valid_auc": self.best_valid_auc,
            **{f"test_{k}": v for k, v in (self.test.to_dict() if self.test else {}).items()},
        }

    def to_jsonl(self):
        lines = [json.dumps(e.to_dict(), sort_keys=True) for e in self.epochs]
        lines.append(json.dumps({"summary": self.summary()}, sort_keys=True))
        return "\n".join(lines) + "\n"


@dataclass
class EpochContext:
    """State shared by the epochs of one fit."""

    view: LabelView
    train_labels: np.ndarray
    weight_fn: object
    prototypes: object = None
    gcd: np.ndarray | None = None


def _context(model, graph, split, config):
    view = LabelView(graph.labels, split)
    train_labels = view.training_labels("loss")
    ctx = EpochContext(view=view, train_labels=train_labels,
                       weight_fn=class_weights(train_labels[split.train], config))
    if model.uses_gcd and model.prototypes is None:
        proto_labels = view.training_labels("prototype")
        model.prototypes = init_prototypes(model.project(graph), proto_labels, config.tau)
    ctx.prototypes = model.prototypes
    return ctx


def predict(model, graph, train_labels):
    """Inference probabilities for every node with GCD from the model's prototypes."""
    gcd = None
    if model.uses_gcd:
        gcd = model.compute_gcd(model.prototypes, model.project(graph), train_labels)
    return model.forward(graph, gcd, training=False).prob.data


def evaluate_nodes(model, graph, view, nodes, train_labels, thres):
    prob = predict(model, graph, train_labels)
    return compute_metrics(prob[nodes], view.read(nodes, "eval"), thres)


def train_epoch(model, graph, split, config, ctx, optimizer):
    """Prototype refresh, epoch-level GCD, then Adam over shuffled training minibatches.

    Returns the mean batch loss.
    """
    if model.uses_gcd:
        x_exp = model.project(graph)
        labels = ctx.view.training_labels("prototype")
        ctx.prototypes = update_prototypes(ctx.prototypes, x_exp, labels)
        model.prototypes = ctx.prototypes
        ctx.gcd = model.compute_gcd(ctx.prototypes, x_exp, ctx.view.training_labels("gcd"))
    train = split.train
    order = train[model.rng.permutation(train.size)]
    losses = []
    for start in range(0, order.size, config.batch_size):
        batch = order[start : start + config.batch_size]
        y = ctx.view.read(batch, "loss")
        labeled = y != UNLABELED
        if not labeled.any():
            log.warning("skipping batch without labeled nodes")
            continue
        batch, y = batch[labeled], y[labeled]
        out = model.forward(graph, ctx.gcd, training=True)
        loss = bce_loss(out.prob[batch], y, ctx.weight_fn(y))
        nk.backward(loss)
        optimizer.step()
        losses.append(loss.item())
    return float(np.mean(losses)) if losses else float("nan")


def fit(model, graph, split, config=None):
    """Train with early stopping on validation AUC; restores the best epoch and scores the test split.

    Epoch 0 in the report is the untrained model. It is the best epoch only
    when no training epoch ran.
    """
    config = model.config if config is None else config
    ctx = _context(model, graph, split, config)
    optimizer = nk.Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    valid = split.valid
    report = TrainReport()

    t0 = time.perf_counter()
    initial = evaluate_nodes(model, graph, ctx.view, valid, ctx.train_labels, config.thres)
    report.epochs.append(EpochRecord(0, None, initial))
    report.timings.append(time.perf_counter() - t0)

    best_auc, best_state, stale = None, None, 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        loss = train_epoch(model, graph, split, config, ctx, optimizer)
        metrics = evaluate_nodes(model, graph, ctx.view, valid, ctx.train_labels, config.thres)
        report.epochs.append(EpochRecord(epoch, loss, metrics))
        report.timings.append(time.perf_counter() - t0)
        score = -np.inf if metrics.auc is None else metrics.auc
        if best_auc is None or score > best_auc:
            best_auc, stale = score, 0
            report.best_epoch = epoch
            best_state = (model.state_arrays(), _copy_prototypes(model.prototypes))
        else:
            stale += 1
            if stale >= config.patience:
                break

    if best_state is not None:
        model.load_arrays(best_state[0])
        model.prototypes = best_state[1]
    report.test = evaluate_nodes(model, graph, ctx.view, split.test, ctx.train_labels, config.thres)
    model.label_view = ctx.view
    return report


def _copy_prototypes(state):
    return None if state is None else state.copy()


def train_model(graph, split, config):
    model = GcdGnn(graph.dim, config)
    report = fit(model, graph, split, config)
    return model, report
