"""Per-class visual prototypes and KL-consistence scoring.

A prototype is a single feature-space vector standing for the clean content
of one class.  Round 0 averages the top-k most confident members of each
class (confidence from a warmup classifier).  Every later round scores each
sample by how well its visual similarity profile against the current
prototypes agrees with the semantic profile from the class relation graph,

    score = 1 / ((KL(softmax(s_t / T), softmax(s_v / T)) + eps) ** gamma),

then rebuilds each prototype as the score-weighted mean of its members.
Softmax is used as the normalizer because similarity vectors may contain
negatives, which would make KL against a plain L2 normalization undefined.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import ConfigError, ParseError, ValidationError
from .relation import RelationMatrix

_LOG_FLOOR = 1e-300

DEFAULT_GAMMA = 1.0
DEFAULT_EPSILON = 1e-6
DEFAULT_TEMPERATURE = 0.1
DEFAULT_ROUNDS = 2


class PrototypeStrategy(enum.Enum):
    CONSTANT = "Constant"    # plain mean of the class members
    WEIGHTING = "Weighting"  # consistence-score weighted mean


@dataclass(frozen=True)
class PrototypeSet:
    """C x d prototype rows plus the per-sample consistence scores."""

    prototypes: np.ndarray
    consistence: np.ndarray
    round: int
    sample_ids: tuple[str, ...] = ()

    def __post_init__(self):
        p = np.array(self.prototypes, dtype=np.float64)
        s = np.array(self.consistence, dtype=np.float64)
        if not np.all(np.isfinite(p)):
            raise ValidationError("prototype rows must be finite")
        if s.size and not np.all(s > 0):
            raise ValidationError("consistence scores must be strictly positive")
        if self.sample_ids and len(self.sample_ids) != s.shape[0]:
            raise ValidationError("one consistence score per sample id required")
        p.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "prototypes", p)
        object.__setattr__(self, "consistence", s)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]


@dataclass(frozen=True)
class SimilarityVectors:
    """A sample's semantic and visual class-similarity profiles (length C)."""

    semantic: np.ndarray
    visual: np.ndarray

    def __post_init__(self):
        sem = np.array(self.semantic, dtype=np.float64)
        vis = np.array(self.visual, dtype=np.float64)
        if sem.shape != vis.shape or sem.ndim != 1:
            raise ValidationError(
                f"similarity vectors must share one length, got {sem.shape} vs {vis.shape}"
            )
        if not (np.all(np.isfinite(sem)) and np.all(np.isfinite(vis))):
            raise ValidationError("similarity vectors must be finite")
        if np.any(np.abs(vis) > 1.0 + 1e-9):
            raise ValidationError("visual similarities must lie in [-1, 1]")
        vis = np.clip(vis, -1.0, 1.0)
        sem.setflags(write=False)
        vis.setflags(write=False)
        object.__setattr__(self, "semantic", sem)
        object.__setattr__(self, "visual", vis)


def softmax(values, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax with temperature; strictly positive output."""
    if temperature <= 0:
        raise ConfigError(f"softmax temperature must be > 0, got {temperature}")
    z = np.asarray(values, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def kl_divergence(p, q) -> float:
    """KL(P || Q) = sum_c P_c ln(P_c / Q_c) for positive distributions."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float(
        np.sum(p * (np.log(np.maximum(p, _LOG_FLOOR)) - np.log(np.maximum(q, _LOG_FLOOR))))
    )


def _consistence_rows(semantic, visual, gamma, epsilon, temperature) -> np.ndarray:
    p = softmax(semantic, temperature)
    q = softmax(visual, temperature)
    kl = np.sum(
        p * (np.log(np.maximum(p, _LOG_FLOOR)) - np.log(np.maximum(q, _LOG_FLOOR))),
        axis=-1,
    )
    return (kl + epsilon) ** (-gamma)


def consistence_score(
    vecs: SimilarityVectors,
    gamma: float = DEFAULT_GAMMA,
    epsilon: float = DEFAULT_EPSILON,
    temperature: float = DEFAULT_TEMPERATURE,
) -> float:
    """Reciprocal-power KL agreement between semantic and visual profiles."""
    if gamma <= 0:
        raise ConfigError(f"gamma must be > 0, got {gamma}")
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")
    return float(
        _consistence_rows(vecs.semantic, vecs.visual, gamma, epsilon, temperature)
    )


def default_topk(class_size: int) -> int:
    """Default number of confidence-ranked seeds per class."""
    return max(5, math.ceil(0.05 * class_size))


def _class_members(dataset: Dataset) -> list[np.ndarray]:
    labels = dataset.noisy_labels
    members = [np.flatnonzero(labels == c) for c in range(dataset.num_classes)]
    empty = [c for c, idx in enumerate(members) if idx.size == 0]
    if empty:
        raise ValidationError(f"classes without samples: {empty}")
    return members


def _renormalized(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise ValidationError(f"prototype for class {bad} has zero norm")
    return rows / norms[:, None]


def initial_prototypes(
    dataset: Dataset,
    confidences,
    k: int | None = None,
    *,
    renormalize: bool = True,
) -> PrototypeSet:
    """Round-0 prototypes: mean of each class's top-k most confident members.

    ``confidences`` is one score per sample (order = dataset order), normally
    the warmup classifier's probability on the sample's own noisy label.
    ``k=None`` uses :func:`default_topk` per class.  Ranking ties break on
    sample id so the result is order-independent.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    if conf.shape != (len(dataset.samples),):
        raise ValidationError(
            f"expected {len(dataset.samples)} confidence scores, got {conf.shape}"
        )
    if not np.all(np.isfinite(conf)):
        raise ValidationError("confidence scores must be finite")
    if k is not None and k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")

    members = _class_members(dataset)
    ids = dataset.ids
    protos = np.zeros((dataset.num_classes, dataset.d))
    for c, idx in enumerate(members):
        take = min(k if k is not None else default_topk(idx.size), idx.size)
        ranked = sorted(idx, key=lambda i: (-conf[i], ids[i]))[:take]
        protos[c] = dataset.features[ranked].mean(axis=0)
    if renormalize:
        protos = _renormalized(protos)
    return PrototypeSet(
        protos, np.ones(len(dataset.samples)), round=0, sample_ids=ids
    )


def weighted_prototype(
    features,
    scores,
    strategy: PrototypeStrategy = PrototypeStrategy.WEIGHTING,
) -> np.ndarray:
    """Score-weighted mean of one class's features: (sum g_i p_i) / (sum p_i).

    With ``strategy=Constant`` every score is treated as 1, reducing to the
    plain mean.  The output is the raw convex combination; renormalization to
    the unit sphere happens where prototype sets are assembled.
    """
    f = np.asarray(features, dtype=np.float64)
    p = np.asarray(scores, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValidationError("weighted_prototype needs a nonempty m x d feature block")
    if p.shape != (f.shape[0],):
        raise ValidationError(f"expected {f.shape[0]} scores, got {p.shape}")
    if not np.all(p > 0):
        raise ValidationError("prototype scores must be strictly positive")
    if strategy is PrototypeStrategy.CONSTANT:
        p = np.ones_like(p)
    return (p @ f) / p.sum()


def visual_similarities(features: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Cosine of every feature row against every prototype row (N x C)."""
    fn = np.linalg.norm(features, axis=1)
    pn = np.linalg.norm(prototypes, axis=1)
    if np.any(fn == 0.0) or np.any(pn == 0.0):
        raise ValidationError("cosine undefined for zero-norm rows")
    sims = (features / fn[:, None]) @ (prototypes / pn[:, None]).T
    return np.clip(sims, -1.0, 1.0)


def refresh(
    dataset: Dataset,
    relation: RelationMatrix,
    confidences,
    *,
    rounds: int = DEFAULT_ROUNDS,
    k: int | None = None,
    gamma: float = DEFAULT_GAMMA,
    epsilon: float = DEFAULT_EPSILON,
    temperature: float = DEFAULT_TEMPERATURE,
    strategy: PrototypeStrategy = PrototypeStrategy.WEIGHTING,
    renormalize: bool = True,
) -> PrototypeSet:
    """Iteratively refresh prototypes against the class relation graph.

    Round 0 is :func:`initial_prototypes`; each later round recomputes the
    visual profiles against the current prototypes, rescores every sample,
    and rebuilds each class prototype from its members.  ``rounds=0`` returns
    the initial set unchanged.
    """
    if rounds < 0:
        raise ConfigError(f"rounds must be >= 0, got {rounds}")
    if gamma <= 0:
        raise ConfigError(f"gamma must be > 0, got {gamma}")
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")
    if relation.num_classes != dataset.num_classes:
        raise ValidationError(
            f"relation graph covers {relation.num_classes} classes, "
            f"dataset has {dataset.num_classes}"
        )

    pset = initial_prototypes(dataset, confidences, k, renormalize=renormalize)
    members = _class_members(dataset)
    semantic = relation.values[dataset.noisy_labels]
    protos = pset.prototypes
    scores = pset.consistence
    for r in range(1, rounds + 1):
        visual = visual_similarities(dataset.features, protos)
        scores = _consistence_rows(semantic, visual, gamma, epsilon, temperature)
        protos = np.vstack(
            [
                weighted_prototype(dataset.features[idx], scores[idx], strategy)
                for idx in members
            ]
        )
        if renormalize:
            protos = _renormalized(protos)
        pset = PrototypeSet(protos, scores, round=r, sample_ids=dataset.ids)
    return pset


# ---------------------------------------------------------------------------
# serialization

_PROTO_HEADER = re.compile(r"^#\s*round=(\d+)\s+C=(\d+)\s+d=(\d+)\s*$")


def save_prototypes(
    pset: PrototypeSet, proto_path, scores_path=None, extra_header=()
) -> None:
    c, d = pset.prototypes.shape
    lines = [f"# round={pset.round} C={c} d={d}"]
    lines.extend(f"# {h}" for h in extra_header)
    for cid, row in enumerate(pset.prototypes):
        lines.append("\t".join([str(cid)] + ["%.17g" % v for v in row]))
    Path(proto_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if scores_path is not None and pset.sample_ids:
        score_lines = [f"# round={pset.round}"]
        score_lines.extend(
            f"{sid}\t%.17g" % p for sid, p in zip(pset.sample_ids, pset.consistence)
        )
        Path(scores_path).write_text("\n".join(score_lines) + "\n", encoding="utf-8")


def load_prototypes(proto_path, scores_path=None) -> PrototypeSet:
    path = Path(proto_path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    m = _PROTO_HEADER.match(lines[0])
    if m is None:
        raise ParseError(f"{path}: line 1: expected header '# round=<r> C=<C> d=<d>'")
    rnd, c, d = (int(g) for g in m.groups())
    rows = np.zeros((c, d))
    seen = 0
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != d + 1:
            raise ParseError(f"{path}: line {ln}: expected {d + 1} columns, got {len(cols)}")
        cid = int(cols[0])
        if not 0 <= cid < c:
            raise ParseError(f"{path}: line {ln}: class id {cid} out of range")
        rows[cid] = [float(v) for v in cols[1:]]
        seen += 1
    if seen != c:
        raise ParseError(f"{path}: expected {c} prototype rows, got {seen}")

    ids: tuple[str, ...] = ()
    scores: np.ndarray = np.ones(0)
    if scores_path is not None:
        pairs = []
        for ln, line in enumerate(
            Path(scores_path).read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ParseError(
                    f"{scores_path}: line {ln}: expected 2 columns, got {len(cols)}"
                )
            pairs.append((cols[0], float(cols[1])))
        ids = tuple(p[0] for p in pairs)
        scores = np.array([p[1] for p in pairs])
    return PrototypeSet(rows, scores, round=rnd, sample_ids=ids)
