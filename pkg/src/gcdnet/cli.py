"""``gcdnet synth|train|eval|analyze`` command-line entry point.

Configuration is a flat ``key=value`` file; ``--set key=value`` overrides
single entries. Exit codes: 0 success, 1 usage or configuration error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig
from .errors import ConfigError, GcdNetError
from .evalkit import export_embeddings, gcd_weighted_distances, per_gcd_range_metrics
from .graphstore import (
    FRAUD,
    UNLABELED,
    SynthParams,
    generate_synthetic,
    load_graph,
    save_graph,
    stratified_split,
)
from .trainer import LabelView, evaluate_nodes, train_model

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# file key -> (ModelConfig field, parser)
MODEL_KEYS = {
    "learning_rate": ("lr", float),
    "batch_size": ("batch_size", int),
    "dropout": ("dropout", float),
    "hidden_dimension": ("hidden_dim", int),
    "n_layer": ("n_layers", int),
    "weight_decay": ("weight_decay", float),
    "thres": ("thres", float),
    "gcd_drop": ("gcd_drop", float),
    "tau": ("tau", float),
    "patience": ("patience", int),
    "max_epochs": ("max_epochs", int),
    "ablation": ("ablation", str),
    "class_weighted": ("class_weighted", _bool),
    "slope": ("slope", float),
    "seed": ("seed", int),
}

# file key -> (SynthParams field, parser)
SYNTH_KEYS = {
    "n_nodes": ("n_nodes", int),
    "fraud_ratio": ("fraud_ratio", float),
    "dim": ("d", int),
    "n_relations": ("n_relations", int),
    "avg_degree": ("avg_degree", float),
    "homophily": ("homophily", float),
    "camouflage_rate": ("camouflage_rate", float),
    "camouflage_strength": ("camouflage_strength", float),
    "class_separation": ("class_separation", float),
    "unlabeled_ratio": ("unlabeled_ratio", float),
    "synth_seed": ("seed", int),
}

RUN_KEYS = {
    "graph": str,
    "seeds": int,
    "checkpoint": str,
    "split_seed": int,
    "sample_size": int,
    "bins": int,
}


@dataclass
class RunConfig:
    model: ModelConfig
    out: Path
    graph_path: Path | None = None
    synth: SynthParams | None = None
    seeds: int = 5
    checkpoint: Path | None = None
    split_seed: int | None = None
    sample_size: int = 20
    bins: int = 20
    raw: dict = field(default_factory=dict)


def parse_config_text(text, source="config"):
    """``key=value`` lines; ``#`` starts a comment; later keys win."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        entries[key] = value
    return entries


def build_run_config(entries, out, command):
    model_kw, synth_kw, run_kw = {}, {}, {}
    for key, text in entries.items():
        try:
            if key in MODEL_KEYS:
                name, conv = MODEL_KEYS[key]
                model_kw[name] = conv(text)
            elif key in SYNTH_KEYS:
                name, conv = SYNTH_KEYS[key]
                synth_kw[name] = conv(text)
            elif key in RUN_KEYS:
                run_kw[key] = RUN_KEYS[key](text)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {text!r}") from None

    model = ModelConfig(**model_kw)
    graph = run_kw.pop("graph", None)
    if command == "synth":
        if graph is not None:
            raise ConfigError("synth generates a graph; drop the 'graph' key")
        synth = SynthParams(**synth_kw)
    elif graph is not None and synth_kw:
        raise ConfigError("give either 'graph' or synthetic parameters, not both")
    elif graph is None and not synth_kw:
        raise ConfigError("no input graph: set 'graph' or synthetic parameters")
    else:
        synth = SynthParams(**synth_kw) if synth_kw else None
    if synth is not None:
        synth.validate()
    cfg = RunConfig(model=model, out=Path(out), graph_path=None if graph is None else Path(graph),
                    synth=synth, raw=dict(entries))
    for key, value in run_kw.items():
        if key == "checkpoint":
            value = Path(value)
        setattr(cfg, key, value)
    if cfg.seeds < 1:
        raise ConfigError("seeds must be at least 1")
    if cfg.sample_size < 1 or cfg.bins < 1:
        raise ConfigError("sample_size and bins must be positive")
    if command in ("eval", "analyze") and cfg.checkpoint is None:
        raise ConfigError(f"{command} needs a checkpoint (--checkpoint or checkpoint=...)")
    return cfg


def obtain_graph(cfg):
    if cfg.graph_path is not None:
        return load_graph(cfg.graph_path)
    return generate_synthetic(cfg.synth)


# ------------------------------------------------------------------- helpers


def _write_json(path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_jsonl(path, records):
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records), encoding="utf-8")


def _manifest(cfg, command, seeds, files, started, extra=None):
    body = {
        "command": command,
        "seeds": list(seeds),
        "config_hash": cfg.model.hash(),
        "config": cfg.model.to_dict(),
        "files": sorted(files),
        # wall-clock values live only here so every other output is reproducible
        "timestamps": {"started": started, "finished": time.time()},
    }
    body.update(extra or {})
    _write_json(cfg.out / "manifest.json", body)


def graph_summary(g):
    lines = [f"nodes: {g.n_nodes}", f"dim: {g.dim}", f"relations: {g.n_relations}"]
    labeled = g.labels != UNLABELED
    fraud = int(np.sum(g.labels == FRAUD))
    lines.append(f"fraud ratio: {fraud / max(int(labeled.sum()), 1):.4f} ({fraud} fraud)")
    for r in range(g.n_relations):
        lines.append(
            f"relation {r}: {g.undirected_edges(r).shape[0]} edges, "
            f"homophily {g.edge_homophily(r):.4f}"
        )
    return "\n".join(lines)


# ------------------------------------------------------------------ commands


def cmd_synth(cfg):
    g = generate_synthetic(cfg.synth)
    path = cfg.out / "graph.txt"
    save_graph(g, path)
    print(graph_summary(g))
    print(f"wrote {path}")
    return g


def _metric_stats(values):
    arr = np.array([np.nan if v is None else v for v in values], dtype=np.float64)
    mean, std = float(np.mean(arr)), float(np.std(arr))
    return {"mean": mean, "std": std, "mean_x100": mean * 100.0, "std_x10": std * 10.0}


def cmd_train(cfg):
    g = obtain_graph(cfg)
    base = cfg.model.seed
    seeds = list(range(base, base + cfg.seeds))
    finals, files, timings = [], [], {}
    started = time.time()
    for seed in seeds:
        config = cfg.model.with_(seed=seed)
        split = stratified_split(g, seed=seed)
        model, report = train_model(g, split, config)
        report_path = cfg.out / f"report_seed{seed}.jsonl"
        report_path.write_text(report.to_jsonl(), encoding="utf-8")
        ckpt = save_checkpoint(model, cfg.out / f"checkpoint_seed{seed}.json")
        files += [report_path.name, ckpt.name]
        finals.append({"seed": seed, **report.summary()})
        timings[str(seed)] = report.timings
        auc = report.test.auc
        print(f"seed {seed}: best epoch {report.best_epoch}, test auc "
              f"{'n/a' if auc is None else f'{auc:.4f}'}")
    stats = {
        key: _metric_stats([f[f"test_{key}"] for f in finals]) for key in ("auc", "f1_macro", "g_mean")
    }
    _write_json(cfg.out / "summary.json", {"seeds": finals, "metrics": stats,
                                           "config_hash": cfg.model.hash()})
    files.append("summary.json")
    _manifest(cfg, "train", seeds, files, started, {"epoch_seconds": timings})
    for key, s in stats.items():
        print(f"{key}: {s['mean_x100']:.2f} +- {s['std_x10']:.2f}")
    return stats


def _restore(cfg, g):
    model = load_checkpoint(cfg.checkpoint, expected_dim=g.dim)
    seed = model.config.seed if cfg.split_seed is None else cfg.split_seed
    split = stratified_split(g, seed=seed)
    view = LabelView(g.labels, split)
    return model, split, view, view.training_labels("gcd")


def cmd_eval(cfg):
    g = obtain_graph(cfg)
    started = time.time()
    model, split, view, train_labels = _restore(cfg, g)
    metrics = evaluate_nodes(model, g, view, split.test, train_labels, model.config.thres)
    _write_json(cfg.out / "metrics.json", metrics.to_dict())
    cfg.model = model.config
    _manifest(cfg, "eval", [model.config.seed], ["metrics.json"], started,
              {"split_seed": int(split.seed)})
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return metrics


def cmd_analyze(cfg):
    g = obtain_graph(cfg)
    started = time.time()
    model, split, view, train_labels = _restore(cfg, g)
    seed = model.config.seed
    gcd = None
    if model.uses_gcd:
        gcd = model.compute_gcd(model.prototypes, model.project(g), train_labels)
    out = model.forward(g, gcd, training=False)
    prob = out.prob.data

    # distances use the unmasked attentions of the first layer and its input features
    records = []
    layer = model.layers[0]
    if gcd is not None and "atyp" in layer.perspectives:
        for r, per in enumerate(layer.last_attention):
            recs = gcd_weighted_distances(out.x_in.data, per[0], per[1], gcd,
                                          cfg.sample_size, seed, r)
            records += [rec.to_dict() for rec in recs]
    _write_jsonl(cfg.out / "distances.jsonl", records)

    test = split.test
    bin_gcd = gcd if gcd is not None else np.zeros(g.n_nodes)
    bins = per_gcd_range_metrics(prob[test], view.read(test, "eval"), bin_gcd[test],
                                 bin_width=2.0 / cfg.bins, thres=model.config.thres)
    _write_jsonl(cfg.out / "gcd_bins.jsonl", [b.to_dict() for b in bins])

    mixed = out.x_mixed.data if out.x_mixed is not None else g.features
    export_embeddings(g.features, mixed, g.labels, cfg.out / "embeddings.csv")

    cfg.model = model.config
    _manifest(cfg, "analyze", [seed], ["distances.jsonl", "gcd_bins.jsonl", "embeddings.csv"],
              started, {"sample_size": cfg.sample_size, "bins": cfg.bins})
    if not records:
        print("distance report empty: the model has no atypical perspective")
    print(f"wrote {len(records)} distance records and {len(bins)} GCD bins to {cfg.out}")
    return records, bins


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze}


# ---------------------------------------------------------------------- main


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="gcdnet", description="GCD-attention fraud detection on multi-relation graphs.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="flat key=value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration entry (repeatable)")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--ablation", help="shorthand for --set ablation=NAME")
    parser.add_argument("--seeds", type=int, help="shorthand for --set seeds=K")
    parser.add_argument("--checkpoint", help="shorthand for --set checkpoint=PATH")
    parser.add_argument("--bins", type=int, help="shorthand for --set bins=N")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _entries(args):
    entries = {}
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        entries.update(parse_config_text(text, str(args.config)))
    for item in args.set:
        entries.update(parse_config_text(item, "--set"))
    for key in ("ablation", "seeds", "checkpoint", "bins"):
        value = getattr(args, key)
        if value is not None:
            entries[key] = str(value)
    return entries


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = build_run_config(_entries(args), args.out, args.command)
        cfg.out.mkdir(parents=True, exist_ok=True)
    except (UsageError, ConfigError, TypeError) as exc:
        print(f"gcdnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"gcdnet: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"gcdnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GcdNetError, OSError, ValueError) as exc:
        print(f"gcdnet: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
