"""Feature projection, class prototypes, GCD and gated feature mixing.

Prototypes and GCD values live in the projected space and are computed from
detached copies of the projection output; no gradient reaches them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .errors import ConfigError, ShapeError
from .graphstore import BENIGN, FRAUD, UNLABELED

ZERO_NORM = 1e-12


class MLP:
    """Single-hidden-layer perceptron ``in -> hidden -> out`` with LeakyReLU."""

    def __init__(self, rng, in_dim, hidden, out_dim, name="mlp", slope=0.2):
        self.slope = slope
        self.w1 = nk.init_uniform(rng, (in_dim, hidden), in_dim, f"{name}.w1")
        self.b1 = nk.init_uniform(rng, (hidden,), in_dim, f"{name}.b1")
        self.w2 = nk.init_uniform(rng, (hidden, out_dim), hidden, f"{name}.w2")
        self.b2 = nk.init_uniform(rng, (out_dim,), hidden, f"{name}.b2")

    @property
    def in_dim(self):
        return self.w1.shape[0]

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, x):
        x = nk.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"MLP expects [n, {self.in_dim}] input, got {x.shape}")
        hidden = nk.leaky_relu(x @ self.w1 + self.b1, self.slope)
        return hidden @ self.w2 + self.b2


class GraphNorm:
    def __init__(self, dim, name="norm", eps=1e-5):
        self.eps = eps
        self.gamma = nk.Parameter(np.ones(dim), f"{name}.gamma")
        self.beta = nk.Parameter(np.zeros(dim), f"{name}.beta")
        self.alpha = nk.Parameter(np.ones(dim), f"{name}.alpha")

    def parameters(self):
        return [self.gamma, self.beta, self.alpha]

    def __call__(self, x):
        return nk.graph_norm(x, self.gamma, self.beta, self.alpha, self.eps)


class Projection:
    """``x_exp = GraphNorm(MLP(X))`` with the MLP mapping d -> d."""

    def __init__(self, rng, dim, hidden, name="proj"):
        self.mlp = MLP(rng, dim, hidden, dim, name=f"{name}.mlp")
        self.norm = GraphNorm(dim, name=f"{name}.norm")

    def parameters(self):
        return self.mlp.parameters() + self.norm.parameters()

    def __call__(self, x):
        return self.norm(self.mlp(x))


def project_features(x, projection):
    return projection(x)


# ----------------------------------------------------------------- prototypes


@dataclass
class PrototypeState:
    mu_fr: np.ndarray
    mu_be: np.ndarray
    tau: float = 0.1
    epoch: int = 0
    last_weights: dict = field(default_factory=dict, repr=False)

    def prototype(self, cls):
        return self.mu_fr if cls == FRAUD else self.mu_be

    def copy(self):
        return PrototypeState(self.mu_fr.copy(), self.mu_be.copy(), self.tau, self.epoch)


def _class_rows(x_exp, labels, cls):
    x = np.asarray(x_exp.data if isinstance(x_exp, nk.Tensor) else x_exp, dtype=np.float64)
    rows = x[np.asarray(labels) == cls]
    if rows.shape[0] == 0:
        name = "fraud" if cls == FRAUD else "benign"
        raise ConfigError(f"no labeled {name} training nodes for prototype extraction")
    return rows


def init_prototypes(x_exp, labels, tau=0.1):
    """Class means of the projected features.

    ``labels`` must already hide every non-training node (value -1).
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    mu_fr = _class_rows(x_exp, labels, FRAUD).mean(axis=0)
    mu_be = _class_rows(x_exp, labels, BENIGN).mean(axis=0)
    return PrototypeState(mu_fr=mu_fr, mu_be=mu_be, tau=tau, epoch=0)


def similarity_weights(rows, prev, tau):
    """Softmax over a class of the temperature-scaled cosine similarity to ``prev``."""
    s = np.array([cosine_similarity(r, prev) for r in rows]) / tau
    e = np.exp(s - s.max())
    return e / e.sum()


def update_prototypes(state, x_exp, labels):
    """One similarity-weighted refresh of both prototypes; returns a new state."""
    if state.tau <= 0:
        raise ConfigError(f"temperature must be positive, got {state.tau}")
    new = {}
    weights = {}
    for cls, prev in ((FRAUD, state.mu_fr), (BENIGN, state.mu_be)):
        rows = _class_rows(x_exp, labels, cls)
        w = similarity_weights(rows, prev, state.tau)
        new[cls] = w @ rows
        weights[cls] = w
    return PrototypeState(
        mu_fr=new[FRAUD],
        mu_be=new[BENIGN],
        tau=state.tau,
        epoch=state.epoch + 1,
        last_weights=weights,
    )


# ------------------------------------------------------------------------ GCD


def cosine_similarity(a, b):
    """Cosine of the angle between ``a`` and ``b``; 0 when either norm is below 1e-12."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < ZERO_NORM or nb < ZERO_NORM:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def compute_gcd(state, x_exp, labels):
    """Per-node global confidence degree.

    Labeled nodes use their own class prototype, unlabeled nodes the better
    matching of the two. Pass labels with validation and test nodes hidden.
    """
    x = np.asarray(x_exp.data if isinstance(x_exp, nk.Tensor) else x_exp, dtype=np.float64)
    labels = np.asarray(labels)
    g = np.empty(x.shape[0])
    for i, row in enumerate(x):
        if labels[i] == UNLABELED:
            g[i] = max(cosine_similarity(state.mu_fr, row), cosine_similarity(state.mu_be, row))
        else:
            g[i] = cosine_similarity(state.prototype(labels[i]), row)
    return g


# --------------------------------------------------------------------- mixing


@dataclass
class MixedFeatures:
    x_exp: nk.Tensor
    lam: nk.Tensor
    x_mixed: nk.Tensor


def mix_features(x, x_exp, gate):
    """``lambda = sigmoid(gate(x))``; ``x_mixed = lambda * x_exp + (1 - lambda) * x``."""
    x = nk.as_tensor(x)
    lam = nk.sigmoid(gate(x))
    x_mixed = lam * x_exp + (1.0 - lam) * x
    return MixedFeatures(x_exp=x_exp, lam=lam, x_mixed=x_mixed)
