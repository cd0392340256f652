"""Hyperparameters and ablation variants."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError


@dataclass(frozen=True)
class AblationFlags:
    """Which parts of the model are active.

    ``m1_core`` switches projection, mixing, prototypes and GCD attention as a
    block; only the plain GraphSAGE backbone turns it off.
    """

    m1_core: bool = True
    m2_self_matrix: bool = True
    m3_dual_perspective: bool = True


VARIANTS = {
    "backbone": AblationFlags(m1_core=False, m2_self_matrix=False, m3_dual_perspective=False),
    "M1": AblationFlags(m1_core=True, m2_self_matrix=False, m3_dual_perspective=False),
    "M2": AblationFlags(m1_core=True, m2_self_matrix=True, m3_dual_perspective=False),
    "M3": AblationFlags(m1_core=True, m2_self_matrix=True, m3_dual_perspective=True),
}


def configure_ablation(name):
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(VARIANTS)}") from None


@dataclass(frozen=True)
class ModelConfig:
    lr: float = 0.005
    batch_size: int = 1024
    dropout: float = 0.292
    hidden_dim: int = 64
    n_layers: int = 1
    weight_decay: float = 0.0
    thres: float = 0.5
    gcd_drop: float = 0.0
    tau: float = 0.1
    max_epochs: int = 100
    patience: int = 30
    seed: int = 0
    ablation: str = "M3"
    class_weighted: bool = True
    slope: float = 0.2

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if not 0.0 < self.thres < 1.0:
            raise ConfigError("thres must lie in (0, 1)")
        if self.batch_size < 1 or self.hidden_dim < 1 or self.n_layers < 1:
            raise ConfigError("batch_size, hidden_dim and n_layers must be positive")
        if not 0.0 <= self.dropout < 1.0 or not 0.0 <= self.gcd_drop < 1.0:
            raise ConfigError("dropout rates must lie in [0, 1)")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be non-negative")
        configure_ablation(self.ablation)

    @property
    def flags(self):
        return configure_ablation(self.ablation)

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
