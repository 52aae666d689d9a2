"""Per-sample training weights from prototype distances, plus label smoothing.

The weight of a sample at Euclidean distance dist from its labeled class's
prototype is ``(max(0, alpha - dist)) ** beta``: alpha shifts the cutoff
(weight is exactly 0 at and beyond alpha), beta sharpens the contrast.  The
max is applied before exponentiation; for non-integer beta the power of a
negative base would not be real.

Three assignment strategies cover the uniform / hard-selection / soft-weight
training comparisons:

* ``AllUniform``  -- every weight 1 (train on everything);
* ``HardSelect``  -- indicator(dist < alpha) (train on the near subset);
* ``SoftWeight``  -- the continuous weight above.
"""

from __future__ import annotations

import enum
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigError, ParseError, ValidationError
from .prototypes import PrototypeSet

DEFAULT_ALPHA = 1.2
DEFAULT_BETA = 1.5
DEFAULT_SMOOTHING_LAMBDA = 0.7
DEFAULT_SMOOTHING_TOPK = 5


class WeightStrategy(enum.Enum):
    ALL_UNIFORM = "AllUniform"
    HARD_SELECT = "HardSelect"
    SOFT_WEIGHT = "SoftWeight"


@dataclass(frozen=True)
class WeightAssignment:
    """Per-sample weights keyed by sample id, with provenance."""

    ids: tuple[str, ...]
    weights: np.ndarray
    distances: np.ndarray
    strategy: WeightStrategy
    alpha: float
    beta: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        d = np.array(self.distances, dtype=np.float64)
        n = len(self.ids)
        if w.shape != (n,) or d.shape != (n,):
            raise ValidationError("ids, weights and distances must align")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(d))):
            raise ValidationError("weights and distances must be finite")
        if np.any(w < 0):
            raise ValidationError("weights must be nonnegative")
        if self.strategy is WeightStrategy.ALL_UNIFORM and not np.all(w == 1.0):
            raise ValidationError("AllUniform weights must all equal 1")
        if self.strategy is WeightStrategy.HARD_SELECT and not np.all(
            (w == 0.0) | (w == 1.0)
        ):
            raise ValidationError("HardSelect weights must be 0 or 1")
        cap = self.alpha**self.beta
        if self.strategy is WeightStrategy.SOFT_WEIGHT and np.any(w > cap + 1e-12):
            raise ValidationError(f"SoftWeight weights must lie in [0, alpha^beta={cap}]")
        w.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "distances", d)

    def aligned_to(self, dataset: Dataset) -> np.ndarray:
        """Weights reordered to the dataset's sample order."""
        by_id = dict(zip(self.ids, self.weights))
        missing = [sid for sid in dataset.ids if sid not in by_id]
        if missing:
            raise ValidationError(f"weights missing for samples: {missing[:5]}")
        return np.array([by_id[sid] for sid in dataset.ids])


def _check_hyper(alpha: float, beta: float) -> None:
    if alpha <= 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    if beta <= 0:
        raise ConfigError(f"beta must be > 0, got {beta}")


def sample_weight(distance: float, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA) -> float:
    """Weight for one sample: (max(0, alpha - distance)) ** beta."""
    _check_hyper(alpha, beta)
    if not np.isfinite(distance):
        raise ValidationError(f"distance must be finite, got {distance}")
    if distance < 0:
        raise ValidationError(f"distance must be >= 0, got {distance}")
    return float(max(0.0, alpha - distance) ** beta)


def prototype_distances(dataset: Dataset, prototypes: PrototypeSet) -> np.ndarray:
    """Euclidean distance of each sample to its labeled class's prototype."""
    if prototypes.num_classes != dataset.num_classes:
        raise ValidationError(
            f"prototype set covers {prototypes.num_classes} classes, "
            f"dataset has {dataset.num_classes}"
        )
    rows = prototypes.prototypes[dataset.noisy_labels]
    return np.linalg.norm(dataset.features - rows, axis=1)


def assign_weights(
    dataset: Dataset,
    prototypes: PrototypeSet,
    strategy: WeightStrategy = WeightStrategy.SOFT_WEIGHT,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> WeightAssignment:
    """Weight every sample by its distance to its labeled class's prototype."""
    _check_hyper(alpha, beta)
    dist = prototype_distances(dataset, prototypes)
    if strategy is WeightStrategy.ALL_UNIFORM:
        w = np.ones_like(dist)
    elif strategy is WeightStrategy.HARD_SELECT:
        w = (dist < alpha).astype(np.float64)
    else:
        w = np.maximum(0.0, alpha - dist) ** beta
    return WeightAssignment(dataset.ids, w, dist, strategy, alpha, beta)


def smooth_labels(noisy_onehot, predictions, k: int = DEFAULT_SMOOTHING_TOPK, lam: float = DEFAULT_SMOOTHING_LAMBDA) -> np.ndarray:
    """Mix a one-hot label with the renormalized top-k of a prediction vector.

    target = lam * onehot + (1 - lam) * q, where q keeps the k largest
    prediction entries (ties at the k-th rank break toward the lower class
    index), zeroes the rest, and renormalizes.  k > C clamps to C with a
    warning.
    """
    onehot = np.asarray(noisy_onehot, dtype=np.float64)
    preds = np.asarray(predictions, dtype=np.float64)
    if onehot.shape != preds.shape or onehot.ndim != 1:
        raise ValidationError(
            f"one-hot and predictions must share one length, got {onehot.shape} vs {preds.shape}"
        )
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if np.any(preds < 0) or abs(preds.sum() - 1.0) > 1e-6:
        raise ValidationError("predictions must be a probability vector")
    c = preds.shape[0]
    if k > c:
        warnings.warn(f"smoothing k={k} exceeds C={c}; clamping to C", stacklevel=2)
        k = c
    order = np.argsort(-preds, kind="stable")
    q = np.zeros(c)
    top = order[:k]
    q[top] = preds[top]
    q /= q.sum()
    return lam * onehot + (1.0 - lam) * q


def smooth_targets(labels, predictions, k: int, lam: float) -> np.ndarray:
    """Row-wise :func:`smooth_labels` for a whole batch of noisy labels."""
    preds = np.asarray(predictions, dtype=np.float64)
    n, c = preds.shape
    out = np.zeros((n, c))
    eye = np.eye(c)
    for i in range(n):
        out[i] = smooth_labels(eye[labels[i]], preds[i], k, lam)
    return out


# ---------------------------------------------------------------------------
# serialization: TSV `id<TAB>weight<TAB>distance`, rows ordered by sample id

_WEIGHTS_HEADER = re.compile(r"^#\s*strategy=(\S+)\s+alpha=(\S+)\s+beta=(\S+)\s*$")


def save_weights(assignment: WeightAssignment, path, extra_header=()) -> None:
    lines = [
        "# strategy=%s alpha=%.17g beta=%.17g"
        % (assignment.strategy.value, assignment.alpha, assignment.beta)
    ]
    lines.extend(f"# {h}" for h in extra_header)
    order = sorted(range(len(assignment.ids)), key=lambda i: assignment.ids[i])
    for i in order:
        lines.append(
            "%s\t%.17g\t%.17g"
            % (assignment.ids[i], assignment.weights[i], assignment.distances[i])
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_weights(path) -> WeightAssignment:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    m = _WEIGHTS_HEADER.match(lines[0])
    if m is None:
        raise ParseError(
            f"{path}: line 1: expected header '# strategy=<s> alpha=<a> beta=<b>'"
        )
    try:
        strategy = WeightStrategy(m.group(1))
    except ValueError:
        raise ParseError(f"{path}: unknown strategy '{m.group(1)}'") from None
    alpha, beta = float(m.group(2)), float(m.group(3))
    ids, weights, dists = [], [], []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise ParseError(f"{path}: line {ln}: expected 3 columns, got {len(cols)}")
        try:
            ids.append(cols[0])
            weights.append(float(cols[1]))
            dists.append(float(cols[2]))
        except ValueError:
            raise ParseError(f"{path}: line {ln}: non-numeric value") from None
    return WeightAssignment(tuple(ids), np.array(weights), np.array(dists), strategy, alpha, beta)
