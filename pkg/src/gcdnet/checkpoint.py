"""Versioned JSON checkpoints holding parameters, prototypes and the config."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import CheckpointError, ConfigError
from .model import GcdGnn
from .protogcd import PrototypeState

FORMAT = "gcdnet-checkpoint"
VERSION = 1


def _array(values, shape, what):
    arr = np.asarray(values, dtype=np.float64)
    if arr.size != int(np.prod(shape)):
        raise CheckpointError(f"{what}: {arr.size} values do not fill shape {tuple(shape)}")
    return arr.reshape(shape)


def checkpoint_dict(model):
    params = {
        name: {"shape": list(p.shape), "data": p.data.ravel().tolist()}
        for name, p in model.named_parameters()
    }
    proto = None
    if model.prototypes is not None:
        s = model.prototypes
        proto = {"mu_fr": s.mu_fr.tolist(), "mu_be": s.mu_be.tolist(), "tau": s.tau, "epoch": s.epoch}
    return {
        "format": FORMAT,
        "version": VERSION,
        "in_dim": model.in_dim,
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "params": params,
        "prototypes": proto,
    }


def save_checkpoint(model, path):
    path = Path(path)
    path.write_text(json.dumps(checkpoint_dict(model), sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path, expected_dim=None):
    """Rebuild a model from ``path``; ``expected_dim`` is the feature width of the target graph."""
    try:
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if blob.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob.get('version')!r}")
    try:
        config = ModelConfig.from_dict(blob["config"])
        in_dim = int(blob["in_dim"])
        params = blob["params"]
        proto = blob["prototypes"]
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"checkpoint {path} is incomplete: {exc}") from exc
    if config.hash() != blob.get("config_hash"):
        raise CheckpointError("config hash does not match the stored config")
    if expected_dim is not None and expected_dim != in_dim:
        raise CheckpointError(
            f"feature dimension mismatch: checkpoint expects {in_dim}, graph has {expected_dim}"
        )

    model = GcdGnn(in_dim, config)
    arrays = {}
    for name, p in model.named_parameters():
        entry = params.get(name)
        if entry is None:
            raise CheckpointError(f"checkpoint lacks parameter {name}")
        if list(entry["shape"]) != list(p.shape):
            raise CheckpointError(f"{name}: expected shape {list(p.shape)}, found {entry['shape']}")
        arrays[name] = _array(entry["data"], p.shape, name)
    model.load_arrays(arrays)
    if proto is not None:
        model.prototypes = PrototypeState(
            _array(proto["mu_fr"], (in_dim,), "mu_fr"),
            _array(proto["mu_be"], (in_dim,), "mu_be"),
            float(proto["tau"]),
            int(proto["epoch"]),
        )
    elif model.uses_gcd:
        raise CheckpointError("checkpoint of a GCD model carries no prototypes")
    return model
