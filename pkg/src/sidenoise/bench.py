"""End-to-end benchmark over strategy / graph / hyper-parameter settings.

Each cell runs generate -> corrupt -> warmup -> graph -> prototypes ->
weights -> train -> evaluate for one (setting, seed) pair and reports clean
validation top-1/top-5 plus the weight-separation AUC.  Stages that do not
depend on the varying axes (data, warmup, graphs, prototypes) are cached per
seed, which changes nothing in the results because every stage is a pure
function of its inputs.  A failing cell is recorded with its error and the
remaining cells still run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig, parse_graph_spec
from .data import Dataset
from .errors import SideNoiseError
from .prototypes import PrototypeStrategy, refresh
from .relation import (
    EmbeddingMode,
    RelationMatrix,
    blend,
    embed_labels,
    embedding_similarity,
    taxonomy_similarity,
)
from .synth import corrupt, generate, weight_separation
from .trainer import evaluate, label_confidences, predict, train
from .weighting import WeightStrategy, assign_weights

# offsets carving independent RNG streams out of one base seed
CORRUPT_SEED_OFFSET = 1
WARMUP_SEED_OFFSET = 2
TRAIN_SEED_OFFSET = 3
BENCH_SEED_STRIDE = 1000


@dataclass(frozen=True)
class BenchSetting:
    """One column of the ablation grid."""

    strategy: WeightStrategy = WeightStrategy.SOFT_WEIGHT
    graph: str = "CD+HW"
    prototype_strategy: PrototypeStrategy = PrototypeStrategy.WEIGHTING
    alpha: float = 1.2
    beta: float = 1.5

    def as_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "graph": self.graph,
            "prototype_strategy": self.prototype_strategy.value,
            "alpha": self.alpha,
            "beta": self.beta,
        }


def build_relation_graph(
    dataset: Dataset, cfg: PipelineConfig, spec: str | None = None
) -> RelationMatrix:
    """Build the configured relation graph (single source or hybrid sum)."""
    parts = parse_graph_spec(spec if spec is not None else cfg.graph_sources)
    mats = []
    for part in parts:
        if part == "HW":
            mats.append(taxonomy_similarity(dataset.taxonomy, dataset.num_classes))
        elif part == "CN":
            emb = embed_labels(dataset.classes, EmbeddingMode.NAME, cfg.embed_dim)
            mats.append(embedding_similarity(emb))
        else:  # CD
            emb = embed_labels(dataset.classes, EmbeddingMode.DESCRIPTION, cfg.embed_dim)
            mats.append(embedding_similarity(emb))
    if len(mats) == 1 and not cfg.graph_coefficients:
        return mats[0]
    coeffs = cfg.graph_coefficients if spec is None and cfg.graph_coefficients else None
    return blend(mats, coeffs)


def settings_from_config(cfg: PipelineConfig) -> list[BenchSetting]:
    """Cross product of the bench_* axes (empty alpha/beta lists = defaults)."""
    alphas = cfg.bench_alphas or (cfg.alpha,)
    betas = cfg.bench_betas or (cfg.beta,)
    return [
        BenchSetting(strategy, graph, proto, alpha, beta)
        for strategy in cfg.bench_strategies
        for graph in cfg.bench_graphs
        for proto in cfg.bench_prototype_strategies
        for alpha in alphas
        for beta in betas
    ]


def run_benchmark(
    cfg: PipelineConfig,
    settings: list[BenchSetting] | None = None,
    seeds: list[int] | None = None,
) -> list[dict]:
    """Run every (setting, seed) cell and return the flat report."""
    if settings is None:
        settings = settings_from_config(cfg)
    if seeds is None:
        seeds = [cfg.seed + BENCH_SEED_STRIDE * i for i in range(cfg.bench_seeds)]

    cells = []
    for seed in seeds:
        try:
            train_ds, val_ds = generate(cfg.synth_config(seed))
            noisy_ds, record = corrupt(
                train_ds, cfg.flip_rate, seed + CORRUPT_SEED_OFFSET
            )
            warm = train(
                noisy_ds,
                np.ones(len(noisy_ds.samples)),
                cfg.train_config(seed + WARMUP_SEED_OFFSET, warmup=True),
            ).model
            confidences = label_confidences(warm, noisy_ds)
        except SideNoiseError as exc:
            for setting in settings:
                cells.append(
                    {"setting": setting.as_dict(), "seed": seed, "error": str(exc)}
                )
            continue

        graphs: dict[str, RelationMatrix] = {}
        protos: dict[tuple, object] = {}
        for setting in settings:
            try:
                if setting.graph not in graphs:
                    graphs[setting.graph] = build_relation_graph(
                        noisy_ds, cfg, setting.graph
                    )
                pkey = (setting.graph, setting.prototype_strategy)
                if pkey not in protos:
                    protos[pkey] = refresh(
                        noisy_ds,
                        graphs[setting.graph],
                        confidences,
                        rounds=cfg.refresh_rounds,
                        k=cfg.prototype_topk,
                        gamma=cfg.gamma,
                        epsilon=cfg.epsilon,
                        temperature=cfg.temperature,
                        strategy=setting.prototype_strategy,
                        renormalize=cfg.normalize_features,
                    )
                weights = assign_weights(
                    noisy_ds,
                    protos[pkey],
                    setting.strategy,
                    setting.alpha,
                    setting.beta,
                )
                result = train(
                    noisy_ds,
                    weights,
                    cfg.train_config(seed + TRAIN_SEED_OFFSET),
                    smoothing_predictions=(
                        predict(warm, noisy_ds) if cfg.smoothing else None
                    ),
                )
                metrics = evaluate(result.model, val_ds, "noisy")
                try:
                    auc = weight_separation(weights, record)
                except SideNoiseError:
                    auc = None  # e.g. flip_rate=0 leaves no flipped samples
                cells.append(
                    {
                        "setting": setting.as_dict(),
                        "seed": seed,
                        "top1": metrics["top1"],
                        "top5": metrics["top5"],
                        "auc": auc,
                    }
                )
            except SideNoiseError as exc:
                cells.append(
                    {"setting": setting.as_dict(), "seed": seed, "error": str(exc)}
                )
    return cells


def _setting_key(setting: dict) -> tuple:
    return tuple(setting[k] for k in ("strategy", "graph", "prototype_strategy", "alpha", "beta"))


def summarize(cells: list[dict]) -> list[dict]:
    """Per-setting mean and std over seeds (failed cells excluded)."""
    groups: dict[tuple, list[dict]] = {}
    order = []
    for cell in cells:
        key = _setting_key(cell["setting"])
        if key not in groups:
            groups[key] = []
            order.append((key, cell["setting"]))
        if "error" not in cell:
            groups[key].append(cell)
    out = []
    for key, setting in order:
        ok = groups[key]
        row = {"setting": setting, "seeds": len(ok)}
        for metric in ("top1", "top5", "auc"):
            vals = [c[metric] for c in ok if c.get(metric) is not None]
            row[f"{metric}_mean"] = float(np.mean(vals)) if vals else None
            row[f"{metric}_std"] = float(np.std(vals)) if vals else None
        out.append(row)
    return out


_TSV_COLUMNS = (
    "strategy", "graph", "prototype_strategy", "alpha", "beta",
    "seed", "top1", "top5", "auc", "error",
)


def save_report(cells: list[dict], json_path, tsv_path) -> None:
    """Write the report as JSON cells plus a flat TSV rendering."""
    Path(json_path).write_text(
        json.dumps(cells, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    lines = ["\t".join(_TSV_COLUMNS)]
    for cell in cells:
        row = dict(cell["setting"])
        row["seed"] = cell["seed"]
        for metric in ("top1", "top5", "auc"):
            value = cell.get(metric)
            row[metric] = "" if value is None else "%.17g" % value
        row["error"] = cell.get("error", "")
        lines.append("\t".join(str(row[c]) for c in _TSV_COLUMNS))
    Path(tsv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
