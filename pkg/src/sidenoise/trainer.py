"""Multinomial softmax classifier trained with a weighted cross-entropy loss.

The model is linear (W in R^{C x d}, bias b); the loss over a batch is

    sum_i w_i * CE(target_i, softmax(W g_i + b)) / sum_i w_i

with exact analytic gradients.  Normalizing by the weight sum keeps the
learning-rate scale independent of the weighting strategy, so different
weight assignments compare fairly under one schedule.  Training is plain
mini-batch SGD with seeded Gaussian init and a seeded shuffle per epoch;
given the same seed and config it is bit-reproducible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigError, NumericalError, ParseError, ValidationError
from .weighting import WeightAssignment, smooth_targets

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class ClassifierModel:
    weights: np.ndarray  # C x d
    bias: np.ndarray     # C

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValidationError(f"bad parameter shapes: W {w.shape}, b {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValidationError("model parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    lr_decay_factor: float = 0.1
    lr_decay_at: tuple[float, ...] = (0.6, 0.85)  # fractions of the epoch budget
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    smoothing: bool = False
    smoothing_lambda: float = 0.7
    smoothing_topk: int = 5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.lr_decay_factor <= 0:
            raise ConfigError(f"lr_decay_factor must be > 0, got {self.lr_decay_factor}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if any(not 0.0 <= f < 1.0 for f in self.lr_decay_at):
            raise ConfigError(f"lr_decay_at fractions must lie in [0, 1), got {self.lr_decay_at}")
        if not 0.0 <= self.smoothing_lambda <= 1.0:
            raise ConfigError(
                f"smoothing_lambda must lie in [0, 1], got {self.smoothing_lambda}"
            )
        if self.smoothing_topk < 1:
            raise ConfigError(f"smoothing_topk must be >= 1, got {self.smoothing_topk}")


@dataclass(frozen=True)
class TrainResult:
    model: ClassifierModel
    epoch_losses: tuple[float, ...]


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def weighted_ce_loss(model: ClassifierModel, features, targets, weights):
    """Weighted cross entropy and its exact gradient.

    Returns ``(loss, (dW, db))``.  A batch whose weights sum to zero
    contributes zero loss and zero gradient.
    """
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n = x.shape[0]
    if t.shape != (n, model.num_classes) or w.shape != (n,):
        raise ValidationError(
            f"shape mismatch: features {x.shape}, targets {t.shape}, weights {w.shape}"
        )
    if np.any(w < 0):
        raise ValidationError("weights must be nonnegative")
    wsum = w.sum()
    if wsum <= 0.0:
        return 0.0, (np.zeros_like(model.weights), np.zeros_like(model.bias))
    probs = _softmax_rows(x @ model.weights.T + model.bias)
    ce = -np.sum(t * np.log(np.maximum(probs, _LOG_FLOOR)), axis=1)
    loss = float((w * ce).sum() / wsum)
    g = (probs - t) * (w / wsum)[:, None]
    return loss, (g.T @ x, g.sum(axis=0))


def _onehot(labels: np.ndarray, c: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], c))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def train(
    dataset: Dataset,
    weights,
    config: TrainConfig,
    smoothing_predictions=None,
) -> TrainResult:
    """Mini-batch SGD on the weighted objective.

    ``weights`` is a WeightAssignment or an array in dataset order.  With
    ``config.smoothing`` on, ``smoothing_predictions`` (an N x C probability
    matrix, normally from the warmup model) replaces the one-hot targets by
    smoothed ones.  The returned per-epoch losses are weight-averaged over
    each epoch's batches, measured before each update.
    """
    if isinstance(weights, WeightAssignment):
        w = weights.aligned_to(dataset)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(dataset.samples),):
            raise ValidationError(
                f"expected {len(dataset.samples)} weights, got {w.shape}"
            )
    c, d, n = dataset.num_classes, dataset.d, len(dataset.samples)
    targets = _onehot(dataset.noisy_labels, c)
    if config.smoothing:
        if smoothing_predictions is None:
            raise ConfigError("smoothing is on but no prediction matrix was given")
        targets = smooth_targets(
            dataset.noisy_labels,
            smoothing_predictions,
            config.smoothing_topk,
            config.smoothing_lambda,
        )

    rng = np.random.default_rng(config.seed)
    weight_matrix = rng.normal(0.0, 0.01, (c, d))
    bias = rng.normal(0.0, 0.01, c)
    milestones = sorted({int(f * config.epochs) for f in config.lr_decay_at})

    x = dataset.features
    losses = []
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            lr = config.learning_rate * config.lr_decay_factor ** sum(
                epoch >= m for m in milestones
            )
            perm = rng.permutation(n)
            num = 0.0
            den = 0.0
            for start in range(0, n, config.batch_size):
                idx = perm[start : start + config.batch_size]
                model = ClassifierModel(weight_matrix, bias)
                loss, (dw, db) = weighted_ce_loss(model, x[idx], targets[idx], w[idx])
                if not np.isfinite(loss):
                    raise NumericalError(
                        f"training diverged at epoch {epoch}: loss={loss}"
                    )
                bw = w[idx].sum()
                num += loss * bw
                den += bw
                weight_matrix = weight_matrix - lr * dw
                bias = bias - lr * db
                if not (
                    np.all(np.isfinite(weight_matrix)) and np.all(np.isfinite(bias))
                ):
                    raise NumericalError(
                        f"training diverged at epoch {epoch}: non-finite parameters"
                    )
            losses.append(num / den if den > 0 else 0.0)
    return TrainResult(ClassifierModel(weight_matrix, bias), tuple(losses))


def predict(model: ClassifierModel, dataset: Dataset) -> np.ndarray:
    """Softmax probabilities for every sample; each row sums to 1."""
    return predict_features(model, dataset.features)


def predict_features(model: ClassifierModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ValidationError(
            f"feature dimension {x.shape} does not match model d={model.dim}"
        )
    probs = _softmax_rows(x @ model.weights.T + model.bias)
    return probs / probs.sum(axis=1, keepdims=True)


def label_confidences(model: ClassifierModel, dataset: Dataset) -> np.ndarray:
    """Predicted probability of each sample's own noisy label."""
    probs = predict(model, dataset)
    return probs[np.arange(len(dataset.samples)), dataset.noisy_labels]


def evaluate(model: ClassifierModel, dataset: Dataset, label_field: str = "noisy") -> dict:
    """Top-1/top-5 accuracy against the chosen label field.

    Rank ties break toward the lower class index.  With C < 5 the top-5
    metric is top-min(5, C).
    """
    if label_field == "noisy":
        labels = dataset.noisy_labels
    elif label_field == "clean":
        labels = dataset.clean_labels
        if labels is None:
            raise ValidationError("clean labels are not present on every sample")
    else:
        raise ConfigError(f"label_field must be 'noisy' or 'clean', got '{label_field}'")
    probs = predict(model, dataset)
    order = np.argsort(-probs, axis=1, kind="stable")
    k = min(5, dataset.num_classes)
    top1 = float(np.mean(order[:, 0] == labels))
    top5 = float(np.mean(np.any(order[:, :k] == labels[:, None], axis=1)))
    return {"top1": top1, "top5": top5, "n": len(dataset.samples)}


# ---------------------------------------------------------------------------
# checkpoint format: `# C=<C> d=<d>`, C rows of W, then one row of b

_CKPT_HEADER = re.compile(r"^#\s*C=(\d+)\s+d=(\d+)\s*$")


def save_checkpoint(model: ClassifierModel, path, extra_header=()) -> None:
    lines = [f"# C={model.num_classes} d={model.dim}"]
    lines.extend(f"# {h}" for h in extra_header)
    for row in model.weights:
        lines.append("\t".join("%.17g" % v for v in row))
    lines.append("\t".join("%.17g" % v for v in model.bias))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> ClassifierModel:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    m = _CKPT_HEADER.match(lines[0])
    if m is None:
        raise ParseError(f"{path}: line 1: expected header '# C=<C> d=<d>'")
    c, d = int(m.group(1)), int(m.group(2))
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            rows.append([float(v) for v in line.split("\t")])
        except ValueError:
            raise ParseError(f"{path}: line {ln}: non-numeric value") from None
    if len(rows) != c + 1:
        raise ParseError(f"{path}: expected {c} weight rows plus a bias row")
    weights = np.array(rows[:c])
    bias = np.array(rows[c])
    if weights.shape != (c, d) or bias.shape != (c,):
        raise ParseError(f"{path}: checkpoint shapes do not match header")
    return ClassifierModel(weights, bias)
