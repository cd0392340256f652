"""The assembled fraud detector: projection, mixing, GCD layers and head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .gcdlayer import ClassifierHead, GcdLayer, LayerConfig
from .protogcd import MLP, Projection, compute_gcd, mix_features


@dataclass
class ForwardResult:
    prob: nk.Tensor
    x_in: nk.Tensor
    x_exp: nk.Tensor | None
    x_mixed: nk.Tensor | None
    embeddings: nk.Tensor


class GcdGnn:
    def __init__(self, in_dim, config):
        self.config = config
        self.in_dim = in_dim
        flags = config.flags
        rng = np.random.default_rng(config.seed)
        hidden = config.hidden_dim
        self.projection = Projection(rng, in_dim, hidden) if flags.m1_core else None
        self.gate = MLP(rng, in_dim, hidden, 1, name="gate", slope=config.slope) if flags.m1_core else None
        self.layers = []
        for idx in range(config.n_layers):
            lc = LayerConfig(
                in_dim=in_dim if idx == 0 else hidden,
                out_dim=hidden,
                gcd_drop=config.gcd_drop,
                use_self_matrix=flags.m2_self_matrix,
                use_atypical=flags.m3_dual_perspective,
                use_gcd=flags.m1_core,
                slope=config.slope,
            )
            self.layers.append(GcdLayer(rng, lc, name=f"layers.{idx}"))
        self.head = ClassifierHead(rng, hidden, hidden, slope=config.slope)
        # separate stream for dropout masks and batch order
        self.rng = np.random.default_rng([config.seed, 1])
        self.prototypes = None
        self.counters = {"gcd": 0, "forward": 0}
        self._edges = {}

    @property
    def uses_gcd(self):
        return self.projection is not None

    def named_parameters(self):
        parts = []
        if self.uses_gcd:
            parts += self.projection.parameters() + self.gate.parameters()
        for layer in self.layers:
            parts += layer.parameters()
        parts += self.head.parameters()
        return [(p.name, p) for p in parts]

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def n_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def state_arrays(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_arrays(self, arrays):
        for name, p in self.named_parameters():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, found {value.shape}")
            p.data = value.copy()

    def edges(self, graph):
        key = id(graph)
        if key not in self._edges:
            self._edges = {key: [rel.edge_arrays() for rel in graph.relations]}
        return self._edges[key]

    def project(self, graph):
        """Detached projected features used for prototypes and GCD."""
        return self.projection(graph.features).data.copy()

    def compute_gcd(self, prototypes, x_exp, labels):
        self.counters["gcd"] += 1
        return compute_gcd(prototypes, x_exp, labels)

    def forward(self, graph, gcd=None, training=False, rng=None):
        self.counters["forward"] += 1
        rng = self.rng if rng is None else rng
        x = nk.Tensor(graph.features)
        x_exp = x_mixed = None
        if self.uses_gcd:
            x_exp = self.projection(x)
            x_mixed = mix_features(x, x_exp, self.gate).x_mixed
            h = x_mixed
        else:
            h = x
        x_in = h
        for layer in self.layers:
            h = layer.forward(h, self.edges(graph), gcd, training, rng)
        emb = h
        h = nk.dropout(h, self.config.dropout, rng, training)
        return ForwardResult(self.head(h), x_in, x_exp, x_mixed, emb)


def expected_parameter_count(in_dim, config):
    """Closed-form parameter count for a configuration."""
    flags = config.flags
    h = config.hidden_dim
    total = 0
    if flags.m1_core:
        total += (in_dim * h + h) + (h * in_dim + in_dim) + 3 * in_dim  # projection + GraphNorm
        total += (in_dim * h + h) + (h + 1)  # gate
    n_persp = 2 if flags.m3_dual_perspective else 1
    for idx in range(config.n_layers):
        a = in_dim if idx == 0 else h
        total += a * h + 2 * h * h + h  # self path + combiner
        per = (a * a * h + a * h) if flags.m2_self_matrix else a * h
        total += n_persp * per
    total += (h * h + h) + (h + 1)  # head
    return total
