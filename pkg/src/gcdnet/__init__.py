"""Fraud detection on multi-relation graphs with prototype-based GCD attention."""

from .config import AblationFlags, ModelConfig, configure_ablation
from .graphstore import MultiRelationGraph, SynthParams, generate_synthetic, load_graph, stratified_split
from .model import GcdGnn
from .trainer import TrainReport, fit, train_model

__version__ = "0.1.0"

__all__ = [
    "AblationFlags",
    "GcdGnn",
    "ModelConfig",
    "MultiRelationGraph",
    "SynthParams",
    "TrainReport",
    "configure_ablation",
    "fit",
    "generate_synthetic",
    "load_graph",
    "stratified_split",
    "train_model",
]
