"""Synthetic benchmark data: taxonomy-correlated features plus uniform-flip noise.

The generator builds a branching tree of Gaussian mean vectors (each child
drifts from its parent by N(0, sigma_between^2) per coordinate), takes the
first C leaves as classes, and samples features around the unit-normalized
leaf directions with N(0, sigma_within^2) coordinate noise before a final
L2 normalization.  Class descriptions are the token path from the root to
the leaf, so sibling classes share all but one token and the hashed text
embeddings mirror the taxonomy.  Semantic similarity therefore correlates
with visual similarity, which is exactly the property the consistence score
exploits; the leaf directions are normalized so that distances on the unit
sphere spread over a meaningful range for the weighting cutoffs.

Noise injection flips an exact floor(rho * n) subset of every class to
labels drawn uniformly from the other C - 1 classes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import ceil

import numpy as np

from .data import ClassMeta, Dataset, Sample
from .errors import ConfigError, NumericalError, ValidationError
from .weighting import WeightAssignment


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 20
    dim: int = 16
    n_per_class: int = 200
    branching: int = 3
    depth: int = 3
    sigma_within: float = 0.25
    sigma_between: float = 1.0
    flip_rate: float = 0.4
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.n_per_class < 1:
            raise ConfigError(f"n_per_class must be >= 1, got {self.n_per_class}")
        if self.branching < 1 or self.depth < 1:
            raise ConfigError("branching and depth must be >= 1")
        if self.branching**self.depth < self.classes:
            raise ConfigError(
                f"branching^depth = {self.branching ** self.depth} cannot host "
                f"{self.classes} classes"
            )
        if self.sigma_within < 0 or self.sigma_between < 0:
            raise ConfigError("noise stds must be >= 0")
        if not 0.0 <= self.flip_rate < 1.0:
            raise ConfigError(f"flip_rate must lie in [0, 1), got {self.flip_rate}")
        if not 0.0 < self.val_fraction <= 1.0:
            raise ConfigError(f"val_fraction must lie in (0, 1], got {self.val_fraction}")


@dataclass(frozen=True)
class NoiseRecord:
    """Which samples were flipped, and what their labels were before."""

    ids: tuple[str, ...]
    flipped: np.ndarray
    clean_labels: np.ndarray

    def __post_init__(self):
        f = np.array(self.flipped, dtype=bool)
        c = np.array(self.clean_labels, dtype=np.int64)
        if f.shape != (len(self.ids),) or c.shape != (len(self.ids),):
            raise ValidationError("ids, flags and clean labels must align")
        f.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "flipped", f)
        object.__setattr__(self, "clean_labels", c)


def _leaf_paths(branching: int, depth: int) -> list[tuple[int, ...]]:
    paths = [()]
    for _ in range(depth):
        paths = [p + (j,) for p in paths for j in range(branching)]
    return paths


def _token(path: tuple[int, ...]) -> str:
    return "root" if not path else "root" + "".join(f"x{j}" for j in path)


def generate(config: SynthConfig) -> tuple[Dataset, Dataset]:
    """Generate (train, validation) datasets from one seed.

    Train samples carry clean labels (noisy == clean until corruption); the
    validation split is a freshly drawn clean set of
    ceil(val_fraction * n_per_class) samples per class.  Output is a pure
    function of the config.
    """
    rng = np.random.default_rng(config.seed)
    c, d = config.classes, config.dim

    # draw the full tree of means level by level, then keep the used part
    means: dict[tuple[int, ...], np.ndarray] = {(): np.zeros(d)}
    level = [()]
    for _ in range(config.depth):
        nxt = []
        for path in level:
            for j in range(config.branching):
                child = path + (j,)
                means[child] = means[path] + rng.normal(
                    0.0, config.sigma_between, d
                )
                nxt.append(child)
        level = nxt
    class_paths = _leaf_paths(config.branching, config.depth)[:c]

    directions = np.zeros((c, d))
    for cid, path in enumerate(class_paths):
        norm = np.linalg.norm(means[path])
        if norm == 0.0:
            raise NumericalError(f"degenerate zero mean for class {cid}")
        directions[cid] = means[path] / norm

    # taxonomy: class leaves get ids 0..C-1, used internal nodes ids C..
    used_internal: list[tuple[int, ...]] = []
    seen = set()
    for path in class_paths:
        for cut in range(len(path)):
            anc = path[:cut]
            if anc not in seen:
                seen.add(anc)
                used_internal.append(anc)
    used_internal.sort(key=lambda p: (len(p), p))
    node_id = {path: cid for cid, path in enumerate(class_paths)}
    for offset, path in enumerate(used_internal):
        node_id[path] = c + offset

    def meta(path: tuple[int, ...], cid: int) -> ClassMeta:
        tokens = [_token(path[:i]) for i in range(len(path) + 1)]
        return ClassMeta(
            class_id=cid,
            name=_token(path),
            description=" ".join(tokens),
            parent=node_id[path[:-1]] if path else None,
        )

    classes = tuple(meta(p, node_id[p]) for p in class_paths)
    taxonomy = classes + tuple(meta(p, node_id[p]) for p in used_internal)

    def draw_split(prefix: str, per_class: int) -> list[Sample]:
        samples = []
        counter = 0
        for cid in range(c):
            block = directions[cid] + rng.normal(
                0.0, config.sigma_within, (per_class, d)
            )
            norms = np.linalg.norm(block, axis=1)
            if np.any(norms == 0.0):
                raise NumericalError(f"degenerate zero feature in class {cid}")
            block /= norms[:, None]
            for row in block:
                samples.append(
                    Sample(
                        id=f"{prefix}{counter:06d}",
                        features=row,
                        noisy_label=cid,
                        clean_label=cid if prefix == "t" else None,
                    )
                )
                counter += 1
        return samples

    n_val = ceil(config.val_fraction * config.n_per_class)
    train = Dataset(tuple(draw_split("t", config.n_per_class)), classes, d, taxonomy)
    val = Dataset(tuple(draw_split("v", n_val)), classes, d, taxonomy)
    return train, val


def corrupt(dataset: Dataset, rho: float, seed: int) -> tuple[Dataset, NoiseRecord]:
    """Flip floor(rho * n) labels per class, uniformly to the other classes.

    Selection is without replacement inside each class; every flipped label
    differs from the original.  Returns the corrupted dataset plus the
    bookkeeping record.
    """
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"rho must lie in [0, 1), got {rho}")
    rng = np.random.default_rng(seed)
    c = dataset.num_classes
    labels = np.array(dataset.noisy_labels)
    original = labels.copy()
    for cid in range(c):
        members = np.flatnonzero(original == cid)
        n_flip = int(rho * members.size)
        if n_flip == 0:
            continue
        chosen = rng.choice(members, size=n_flip, replace=False)
        targets = rng.integers(0, c - 1, size=n_flip)
        targets[targets >= cid] += 1
        labels[chosen] = targets
    samples = tuple(
        replace(s, noisy_label=int(lab), clean_label=int(orig))
        for s, lab, orig in zip(dataset.samples, labels, original)
    )
    record = NoiseRecord(dataset.ids, labels != original, original)
    return Dataset(samples, dataset.classes, dataset.d, dataset.taxonomy), record


def weight_separation(weights: WeightAssignment, record: NoiseRecord) -> float:
    """ROC AUC of the weights as a clean-vs-flipped score.

    Ties are handled by the rank-average (Mann-Whitney) formulation, so a
    constant weighting scores exactly 0.5.  Undefined (raises) when every
    sample is clean or every sample is flipped.
    """
    flipped_by_id = dict(zip(record.ids, record.flipped))
    if set(weights.ids) != set(record.ids):
        raise ValidationError("weights and noise record must cover the same samples")
    scores = np.asarray(weights.weights, dtype=np.float64)
    clean = np.array([not flipped_by_id[sid] for sid in weights.ids])
    n_pos = int(clean.sum())
    n_neg = clean.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError(
            "weight separation is undefined: need both clean and flipped samples"
        )
    order = np.argsort(scores, kind="stable")
    ranks = np.zeros(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j < scores.size and scores[order[j]] == scores[order[i]]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0  # average of 1-based ranks i+1..j
        i = j
    return float((ranks[clean].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
