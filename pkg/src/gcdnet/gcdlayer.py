"""GCD-attention message passing from typical and atypical perspectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .errors import ConfigError, ShapeError
from .protogcd import MLP


@dataclass(frozen=True)
class PerspectiveGcd:
    g_typ: np.ndarray
    g_atyp: np.ndarray


def perspective_split(g):
    g = np.asarray(g, dtype=np.float64)
    return PerspectiveGcd(g_typ=g.copy(), g_atyp=-g)


@dataclass(frozen=True)
class EdgeAttention:
    """Normalized weights over the surviving edges of one relation and perspective.

    Edge e carries ``alpha[e]`` from ``sources[e]`` into ``targets[e]``.
    """

    targets: np.ndarray
    sources: np.ndarray
    alpha: np.ndarray
    n_nodes: int

    def per_node_sums(self):
        return np.bincount(self.targets, weights=self.alpha, minlength=self.n_nodes)


def _edge_mask(targets, n_nodes, gcd_drop, rng):
    keep = rng.random(targets.size) >= gcd_drop
    # a node whose every edge was dropped keeps all of them for this pass
    kept_per_node = np.bincount(targets, weights=keep, minlength=n_nodes)
    has_edges = np.bincount(targets, minlength=n_nodes) > 0
    restore = has_edges & (kept_per_node == 0)
    return keep | restore[targets]


def gcd_attention(g, targets, sources, n_nodes, gcd_drop=0.0, training=False, rng=None, slope=0.2):
    """Softmax over each target's neighbours of ``LeakyReLU(g[neighbour])``.

    During training every edge logit is dropped independently with
    probability ``gcd_drop`` before the softmax.
    """
    g = np.asarray(g, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    sources = np.asarray(sources, dtype=np.int64)
    if training and gcd_drop > 0.0 and targets.size:
        if rng is None:
            raise ValueError("gcd_drop during training needs an rng")
        keep = _edge_mask(targets, n_nodes, gcd_drop, rng)
        targets, sources = targets[keep], sources[keep]
    logits = nk.leaky_relu(g[sources], slope)
    alpha = nk.segment_softmax(logits, targets, n_nodes).data
    return EdgeAttention(targets=targets, sources=sources, alpha=alpha, n_nodes=n_nodes)


def uniform_attention(targets, sources, n_nodes):
    """Plain neighbour mean: every incoming edge weighted 1/degree."""
    targets = np.asarray(targets, dtype=np.int64)
    deg = np.bincount(targets, minlength=n_nodes)
    alpha = 1.0 / deg[targets] if targets.size else np.zeros(0)
    return EdgeAttention(targets=targets, sources=np.asarray(sources, dtype=np.int64),
                         alpha=alpha.astype(np.float64), n_nodes=n_nodes)


# -------------------------------------------------------------- self matrices


class MatrixGenerator:
    """Linear map from a node feature to a flattened ``in_dim x out_dim`` matrix."""

    def __init__(self, rng, in_dim, out_dim, name="gen"):
        self.in_dim, self.out_dim = in_dim, out_dim
        # zero weight: every node starts from the shared matrix held in the bias
        self.weight = nk.Parameter(np.zeros((in_dim, in_dim * out_dim)), name=f"{name}.w")
        self.bias = nk.init_uniform(rng, (in_dim * out_dim,), in_dim, f"{name}.b")

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return self_matrices(x, self)


def self_matrices(x, generator):
    """Per-node matrices ``W_i``, shape ``[n, in_dim, out_dim]``, row-major from the flat output."""
    x = nk.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != generator.in_dim:
        raise ShapeError(f"self_matrices: expected [n, {generator.in_dim}], got {x.shape}")
    flat = x @ generator.weight + generator.bias
    return nk.reshape(flat, (x.shape[0], generator.in_dim, generator.out_dim))


def aggregate_messages(x_in, attention, matrices):
    """Sum over perspectives of ``W_i @ sum_j alpha_ij x_j`` for one relation.

    ``attention`` and ``matrices`` are parallel sequences, one entry per
    perspective. A matrix is either per-node ``[n, d, d']`` or shared ``[d, d']``.
    Nodes without neighbours receive a zero message.
    """
    x_in = nk.as_tensor(x_in)
    n = x_in.shape[0]
    total = None
    for att, mats in zip(attention, matrices):
        if att.n_nodes != n:
            raise ShapeError(f"attention covers {att.n_nodes} nodes but features have {n}")
        agg = nk.edge_aggregate(att.alpha, x_in, att.targets, att.sources, n)
        msg = nk.batched_vecmat(agg, mats) if mats.ndim == 3 else agg @ mats
        total = msg if total is None else total + msg
    return total


# ---------------------------------------------------------------------- layer


@dataclass(frozen=True)
class LayerConfig:
    in_dim: int
    out_dim: int
    gcd_drop: float = 0.0
    use_self_matrix: bool = True
    use_atypical: bool = True
    use_gcd: bool = True
    slope: float = 0.2

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError("layer dimensions must be positive")
        if not 0.0 <= self.gcd_drop < 1.0:
            raise ConfigError(f"gcd_drop must lie in [0, 1), got {self.gcd_drop}")
        if self.use_atypical and not self.use_gcd:
            raise ConfigError("the atypical perspective needs GCD attention")


class GcdLayer:
    """GraphSAGE-style layer: ``LeakyReLU([x U || sum_r m^r] C + c)``.

    Messages come from GCD attention (typical, optionally atypical) or, with
    ``use_gcd`` off, from a plain neighbour mean.
    """

    def __init__(self, rng, config, name="layer"):
        self.config = config
        self.last_attention = None
        a, b = config.in_dim, config.out_dim
        self.self_weight = nk.init_uniform(rng, (a, b), a, f"{name}.self")
        self.combine_weight = nk.init_uniform(rng, (2 * b, b), 2 * b, f"{name}.combine.w")
        self.combine_bias = nk.init_uniform(rng, (b,), 2 * b, f"{name}.combine.b")
        perspectives = ("typ", "atyp") if config.use_atypical else ("typ",)
        self.transforms = {}
        for p in perspectives:
            if config.use_self_matrix:
                self.transforms[p] = MatrixGenerator(rng, a, b, name=f"{name}.gen_{p}")
            else:
                self.transforms[p] = nk.init_uniform(rng, (a, b), a, f"{name}.shared_{p}")

    @property
    def perspectives(self):
        return tuple(self.transforms)

    def parameters(self):
        out = [self.self_weight, self.combine_weight, self.combine_bias]
        for t in self.transforms.values():
            out.extend(t.parameters() if isinstance(t, MatrixGenerator) else [t])
        return out

    def attention(self, edges, n_nodes, gcd=None, training=False, rng=None):
        """Per relation, the attention of each active perspective."""
        cfg = self.config
        out = []
        if not cfg.use_gcd:
            return [[uniform_attention(t, s, n_nodes)] for t, s in edges]
        persp = perspective_split(gcd)
        for t, s in edges:
            per = [gcd_attention(persp.g_typ, t, s, n_nodes, cfg.gcd_drop, training, rng, cfg.slope)]
            if cfg.use_atypical:
                per.append(
                    gcd_attention(persp.g_atyp, t, s, n_nodes, cfg.gcd_drop, training, rng, cfg.slope)
                )
            out.append(per)
        return out

    def forward(self, x_in, edges, gcd=None, training=False, rng=None):
        x_in = nk.as_tensor(x_in)
        if x_in.ndim != 2 or x_in.shape[1] != self.config.in_dim:
            raise ShapeError(f"layer expects [n, {self.config.in_dim}] input, got {x_in.shape}")
        n = x_in.shape[0]
        attention = self.attention(edges, n, gcd, training, rng)
        mats = [
            t(x_in) if isinstance(t, MatrixGenerator) else t for t in self.transforms.values()
        ]
        messages = None
        for per_relation in attention:
            m = aggregate_messages(x_in, per_relation, mats)
            messages = m if messages is None else messages + m
        if messages is None:
            messages = nk.Tensor(np.zeros((n, self.config.out_dim)))
        hidden = nk.concat([x_in @ self.self_weight, messages], axis=1)
        out = nk.leaky_relu(hidden @ self.combine_weight + self.combine_bias, self.config.slope)
        self.last_attention = attention
        return out


def layer_forward(layer, graph, x_in, gcd, training=False, rng=None):
    edges = [rel.edge_arrays() for rel in graph.relations]
    return layer.forward(x_in, edges, gcd, training, rng)


# ----------------------------------------------------------------------- head


class ClassifierHead:
    """``d' -> hidden -> 1`` perceptron with a sigmoid output."""

    def __init__(self, rng, in_dim, hidden, slope=0.2):
        self.mlp = MLP(rng, in_dim, hidden, 1, name="head", slope=slope)

    def parameters(self):
        return self.mlp.parameters()

    def logits(self, h):
        return nk.reshape(self.mlp(h), (nk.as_tensor(h).shape[0],))

    def __call__(self, h):
        return nk.sigmoid(self.logits(h))


def classify(embeddings, head):
    return head(embeddings)


def predict_labels(probabilities, thres=0.5):
    return (np.asarray(probabilities) >= thres).astype(np.int64)
