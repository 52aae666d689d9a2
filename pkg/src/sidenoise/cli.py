"""Command-line orchestrator.

Each subcommand reads its declared inputs from --out-dir and writes its
declared outputs there, so stages communicate only through files and any
stage can be rerun or reused (one graph, many weightings).  Exit codes:
0 success, 1 usage/config error, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import (
    TRAIN_SEED_OFFSET,
    WARMUP_SEED_OFFSET,
    CORRUPT_SEED_OFFSET,
    build_relation_graph,
    run_benchmark,
    save_report,
)
from .config import PipelineConfig, config_header, parse_config, render_config
from .data import load_dataset, save_clean_labels, save_features, save_taxonomy
from .errors import (
    ConfigError,
    InputError,
    NumericalError,
    ParseError,
    ValidationError,
)
from .prototypes import load_prototypes, refresh, save_prototypes
from .relation import load_relation_matrix, save_relation_matrix
from .synth import corrupt, generate
from .trainer import (
    evaluate,
    label_confidences,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .weighting import assign_weights, load_weights, save_weights

FEATURES = "features.tsv"
TAXONOMY = "taxonomy.json"
CLEAN = "clean_labels.tsv"
VAL_FEATURES = "val_features.tsv"
GRAPH = "graph.tsv"
WARMUP_MODEL = "warmup_model.tsv"
PROTOTYPES = "prototypes.tsv"
CONSISTENCE = "consistence.tsv"
WEIGHTS = "weights.tsv"
MODEL = "model.tsv"
METRICS = "metrics.json"
REPORT_JSON = "report.json"
REPORT_TSV = "report.tsv"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage to 1
        raise _UsageError(message)


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise InputError(f"{path} not found: run `{producer}` first")
    return path


def _load_train(cfg: PipelineConfig, out: Path):
    return load_dataset(
        _require(out / FEATURES, "simulate"),
        _require(out / TAXONOMY, "simulate"),
        normalize=cfg.normalize_features,
    )


def cmd_simulate(cfg: PipelineConfig, out: Path) -> None:
    train_ds, val_ds = generate(cfg.synth_config())
    noisy_ds, _record = corrupt(
        train_ds, cfg.flip_rate, cfg.seed + CORRUPT_SEED_OFFSET
    )
    header = config_header(
        cfg,
        [
            "seed", "classes", "dim", "n_per_class", "branching", "depth",
            "sigma_within", "sigma_between", "flip_rate", "val_fraction",
        ],
    )
    save_features(noisy_ds, out / FEATURES, header)
    save_taxonomy(noisy_ds.taxonomy, out / TAXONOMY)
    save_clean_labels(noisy_ds, out / CLEAN, header)
    save_features(val_ds, out / VAL_FEATURES, header)


def cmd_build_graph(cfg: PipelineConfig, out: Path) -> None:
    ds = _load_train(cfg, out)
    graph = build_relation_graph(ds, cfg)
    header = config_header(cfg, ["graph_sources", "graph_coefficients", "embed_dim"])
    save_relation_matrix(graph, out / GRAPH, header)


def cmd_warmup(cfg: PipelineConfig, out: Path) -> None:
    ds = _load_train(cfg, out)
    result = train(
        ds,
        np.ones(len(ds.samples)),
        cfg.train_config(cfg.seed + WARMUP_SEED_OFFSET, warmup=True),
    )
    header = config_header(
        cfg,
        [
            "seed", "learning_rate", "lr_decay_factor", "lr_decay_at",
            "epochs", "batch_size", "warmup_fraction",
        ],
    )
    save_checkpoint(result.model, out / WARMUP_MODEL, header)


def cmd_prototypes(cfg: PipelineConfig, out: Path) -> None:
    ds = _load_train(cfg, out)
    graph = load_relation_matrix(_require(out / GRAPH, "build-graph"))
    warm = load_checkpoint(_require(out / WARMUP_MODEL, "warmup"))
    pset = refresh(
        ds,
        graph,
        label_confidences(warm, ds),
        rounds=cfg.refresh_rounds,
        k=cfg.prototype_topk,
        gamma=cfg.gamma,
        epsilon=cfg.epsilon,
        temperature=cfg.temperature,
        strategy=cfg.prototype_strategy,
        renormalize=cfg.normalize_features,
    )
    header = config_header(
        cfg,
        [
            "refresh_rounds", "prototype_topk", "prototype_strategy",
            "gamma", "epsilon", "temperature",
        ],
    )
    save_prototypes(pset, out / PROTOTYPES, out / CONSISTENCE, header)


def cmd_weigh(cfg: PipelineConfig, out: Path) -> None:
    ds = _load_train(cfg, out)
    pset = load_prototypes(_require(out / PROTOTYPES, "prototypes"))
    assignment = assign_weights(ds, pset, cfg.strategy, cfg.alpha, cfg.beta)
    save_weights(assignment, out / WEIGHTS)


def cmd_train(cfg: PipelineConfig, out: Path) -> None:
    ds = _load_train(cfg, out)
    assignment = load_weights(_require(out / WEIGHTS, "weigh"))
    smoothing_preds = None
    if cfg.smoothing:
        warm = load_checkpoint(_require(out / WARMUP_MODEL, "warmup"))
        smoothing_preds = predict(warm, ds)
    result = train(
        ds,
        assignment,
        cfg.train_config(cfg.seed + TRAIN_SEED_OFFSET),
        smoothing_predictions=smoothing_preds,
    )
    header = config_header(
        cfg,
        [
            "seed", "strategy", "alpha", "beta", "smoothing", "smoothing_lambda",
            "smoothing_topk", "learning_rate", "lr_decay_factor", "lr_decay_at",
            "epochs", "batch_size",
        ],
    )
    save_checkpoint(result.model, out / MODEL, header)


def cmd_eval(cfg: PipelineConfig, out: Path) -> None:
    model = load_checkpoint(_require(out / MODEL, "train"))
    val = load_dataset(
        _require(out / VAL_FEATURES, "simulate"),
        _require(out / TAXONOMY, "simulate"),
        normalize=cfg.normalize_features,
    )
    metrics = evaluate(model, val, "noisy")
    payload = {
        "top1": metrics["top1"],
        "top5": metrics["top5"],
        "n": metrics["n"],
        # resolved hyper-parameters, for the same auditability the TSV headers give
        "params": dict(
            line.split(" = ", 1) for line in render_config(cfg).splitlines()
        ),
    }
    (out / METRICS).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def cmd_pipeline(cfg: PipelineConfig, out: Path) -> None:
    for step in (
        cmd_simulate,
        cmd_build_graph,
        cmd_warmup,
        cmd_prototypes,
        cmd_weigh,
        cmd_train,
        cmd_eval,
    ):
        step(cfg, out)


def cmd_bench(cfg: PipelineConfig, out: Path) -> None:
    cells = run_benchmark(cfg)
    save_report(cells, out / REPORT_JSON, out / REPORT_TSV)


COMMANDS = {
    "simulate": cmd_simulate,
    "build-graph": cmd_build_graph,
    "warmup": cmd_warmup,
    "prototypes": cmd_prototypes,
    "weigh": cmd_weigh,
    "train": cmd_train,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
    "bench": cmd_bench,
}


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="sidenoise",
        description="Noisy-label curation pipeline on precomputed feature vectors.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="path to a `key = value` config file")
    parser.add_argument("--out-dir", default="artifacts", help="artifact directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.config is not None:
            config_path = Path(args.config)
            if not config_path.exists():
                raise ConfigError(f"config file not found: {config_path}")
            cfg = parse_config(config_path)
        else:
            cfg = PipelineConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        print(render_config(cfg))
        COMMANDS[args.command](cfg, out)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, ValidationError, InputError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
