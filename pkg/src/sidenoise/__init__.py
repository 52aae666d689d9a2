"""Noisy-label curation on precomputed feature vectors.

Pipeline: class relation graphs from side information (taxonomy structure
and class text), KL-consistence visual prototypes, per-sample noise weights,
and weighted cross-entropy training, plus a synthetic benchmark that ties
taxonomy to feature geometry for desk-scale ablations.
"""

from .data import ClassMeta, Dataset, Sample, load_dataset, normalize_features, save_dataset
from .errors import (
    ConfigError,
    InputError,
    NumericalError,
    ParseError,
    SideNoiseError,
    ValidationError,
)
from .relation import (
    EmbeddingMode,
    GraphSource,
    LabelEmbedding,
    RelationMatrix,
    blend,
    embed_labels,
    embedding_similarity,
    taxonomy_similarity,
)
from .prototypes import (
    PrototypeSet,
    PrototypeStrategy,
    SimilarityVectors,
    consistence_score,
    initial_prototypes,
    refresh,
    weighted_prototype,
)
from .weighting import (
    WeightAssignment,
    WeightStrategy,
    assign_weights,
    sample_weight,
    smooth_labels,
)
from .trainer import (
    ClassifierModel,
    TrainConfig,
    TrainResult,
    evaluate,
    predict,
    train,
    weighted_ce_loss,
)
from .synth import NoiseRecord, SynthConfig, corrupt, generate, weight_separation
from .bench import BenchSetting, run_benchmark, summarize
from .config import PipelineConfig, parse_config, render_config

__version__ = "0.1.0"

__all__ = [
    "BenchSetting",
    "ClassMeta",
    "ClassifierModel",
    "ConfigError",
    "Dataset",
    "EmbeddingMode",
    "GraphSource",
    "InputError",
    "LabelEmbedding",
    "NoiseRecord",
    "NumericalError",
    "ParseError",
    "PipelineConfig",
    "PrototypeSet",
    "PrototypeStrategy",
    "RelationMatrix",
    "Sample",
    "SideNoiseError",
    "SimilarityVectors",
    "SynthConfig",
    "TrainConfig",
    "TrainResult",
    "ValidationError",
    "WeightAssignment",
    "WeightStrategy",
    "assign_weights",
    "blend",
    "consistence_score",
    "corrupt",
    "embed_labels",
    "embedding_similarity",
    "evaluate",
    "generate",
    "initial_prototypes",
    "load_dataset",
    "normalize_features",
    "parse_config",
    "predict",
    "refresh",
    "render_config",
    "run_benchmark",
    "sample_weight",
    "save_dataset",
    "smooth_labels",
    "summarize",
    "taxonomy_similarity",
    "train",
    "weight_separation",
    "weighted_ce_loss",
    "weighted_prototype",
]
