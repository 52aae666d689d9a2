"""Class relation graphs built from side information.

Three C x C similarity matrices over classes:

* hierarchy graph -- reciprocal shortest-path distance through the taxonomy
  forest, ``1 / (1 + d)``;
* embedding graph -- pairwise cosine of deterministic hashed text embeddings
  of class names or descriptions;
* hybrid graph -- elementwise sum of any of the above (optionally scaled).

The text embedder is signed feature hashing with FNV-1a 64-bit: it is a pure
function of the text, needs no training, and still makes classes with shared
description tokens come out similar, which is the property the prototype
stage relies on.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ClassMeta, validate_taxonomy
from .errors import ConfigError, ParseError, ValidationError

_SYMMETRY_TOL = 1e-12

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_TOKEN_RE = re.compile(r"[0-9a-z]+")


class GraphSource(enum.Enum):
    HIERARCHY = "Hierarchy"
    NAME_EMBEDDING = "NameEmbedding"
    DESCRIPTION_EMBEDDING = "DescriptionEmbedding"
    HYBRID = "Hybrid"


class EmbeddingMode(enum.Enum):
    NAME = "Name"
    DESCRIPTION = "Description"


@dataclass(frozen=True)
class RelationMatrix:
    """Symmetric C x C inter-class similarity matrix."""

    values: np.ndarray
    source: GraphSource

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError(f"relation matrix must be square, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("relation matrix contains non-finite values")
        if np.max(np.abs(v - v.T), initial=0.0) > _SYMMETRY_TOL:
            raise ValidationError("relation matrix is not symmetric")
        if self.source is not GraphSource.HYBRID:
            # for elementary sources the self-similarity must dominate its row
            if np.any(v.max(axis=1) > np.diag(v) + _SYMMETRY_TOL):
                raise ValidationError(
                    "diagonal entries must be the row maximum for "
                    f"source={self.source.value}"
                )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class LabelEmbedding:
    """Per-class text embedding; rows are unit vectors.

    ``fallback`` flags classes whose text produced no usable tokens; those
    rows are the deterministic basis vector e_(class_id mod dim).
    """

    vectors: np.ndarray
    mode: EmbeddingMode
    fallback: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        f = np.array(self.fallback, dtype=bool)
        norms = np.linalg.norm(v, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValidationError("label embedding rows must be unit vectors")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "fallback", f)


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def taxonomy_similarity(
    nodes: Sequence[ClassMeta], num_classes: int | None = None
) -> RelationMatrix:
    """Hierarchy graph: similarity(i, j) = 1 / (1 + shortest-path edges).

    Paths run through the taxonomy forest (undirected parent links), so two
    siblings are at distance 2.  Classes in disconnected trees get the finite
    penalty distance ``2 * max_depth + 2`` instead of an infinite one, which
    keeps downstream softmax scores well conditioned.

    ``num_classes`` defaults to treating every node as a class; pass it
    explicitly when ``nodes`` contains internal taxonomy entries (ids >= C).
    """
    validate_taxonomy(nodes)
    c = len(nodes) if num_classes is None else num_classes
    by_id = {m.class_id: m for m in nodes}
    for cid in range(c):
        if cid not in by_id:
            raise ValidationError(f"class {cid} missing from taxonomy nodes")

    adjacency: dict[int, list[int]] = {m.class_id: [] for m in nodes}
    for m in nodes:
        if m.parent is not None:
            adjacency[m.class_id].append(m.parent)
            adjacency[m.parent].append(m.class_id)

    def depth(node: int) -> int:
        steps = 0
        while by_id[node].parent is not None:
            node = by_id[node].parent
            steps += 1
        return steps

    max_depth = max(depth(m.class_id) for m in nodes)
    penalty = 2 * max_depth + 2

    values = np.full((c, c), float(penalty))
    for start in range(c):
        dist = {start: 0}
        frontier = [start]
        while frontier:
            nxt = []
            for node in frontier:
                for nb in adjacency[node]:
                    if nb not in dist:
                        dist[nb] = dist[node] + 1
                        nxt.append(nb)
            frontier = nxt
        for target in range(c):
            if target in dist:
                values[start, target] = dist[target]
    values = 1.0 / (1.0 + values)
    values = (values + values.T) / 2.0
    return RelationMatrix(values, GraphSource.HIERARCHY)


def embed_labels(
    classes: Sequence[ClassMeta], mode: EmbeddingMode, dim: int = 64
) -> LabelEmbedding:
    """Deterministic hashed text embedding for each class.

    Lowercase, split on non-alphanumeric runs, then for each token add
    sign(bit 63) into bucket ``fnv1a64(token) mod dim`` and L2-normalize.
    A class whose text yields no tokens (or whose buckets cancel exactly)
    falls back to the basis vector e_(class_id mod dim) and is flagged.
    """
    if dim < 2:
        raise ConfigError(f"embedding dimension must be >= 2, got {dim}")
    vectors = np.zeros((len(classes), dim))
    fallback = np.zeros(len(classes), dtype=bool)
    for row, meta in enumerate(classes):
        text = meta.name if mode is EmbeddingMode.NAME else meta.description
        for token in _tokenize(text):
            h = fnv1a64(token.encode("utf-8"))
            sign = 1.0 if (h >> 63) == 0 else -1.0
            vectors[row, h % dim] += sign
        norm = np.linalg.norm(vectors[row])
        if norm == 0.0:
            vectors[row] = 0.0
            vectors[row, meta.class_id % dim] = 1.0
            fallback[row] = True
        else:
            vectors[row] /= norm
    return LabelEmbedding(vectors, mode, fallback)


def embedding_similarity(emb: LabelEmbedding) -> RelationMatrix:
    """Embedding graph: pairwise cosine of the label embedding rows."""
    values = emb.vectors @ emb.vectors.T
    values = np.clip((values + values.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(values, 1.0)
    source = (
        GraphSource.NAME_EMBEDDING
        if emb.mode is EmbeddingMode.NAME
        else GraphSource.DESCRIPTION_EMBEDDING
    )
    return RelationMatrix(values, source)


def blend(
    parts: Sequence[RelationMatrix],
    coefficients: Sequence[float] | None = None,
) -> RelationMatrix:
    """Hybrid graph: elementwise sum of the given matrices.

    ``coefficients`` optionally scales each part (default 1.0 for all); the
    plain sum is the canonical hybrid.
    """
    if not parts:
        raise ValidationError("blend requires at least one relation matrix")
    shape = parts[0].values.shape
    for p in parts[1:]:
        if p.values.shape != shape:
            raise ValidationError(
                f"dimension mismatch: {p.values.shape} vs {shape}"
            )
    if coefficients is None:
        coefficients = [1.0] * len(parts)
    if len(coefficients) != len(parts):
        raise ConfigError(
            f"expected {len(parts)} blend coefficients, got {len(coefficients)}"
        )
    total = np.zeros(shape)
    for coef, part in zip(coefficients, parts):
        total += float(coef) * part.values
    return RelationMatrix(total, GraphSource.HYBRID)


# ---------------------------------------------------------------------------
# serialization: TSV, C lines of C floats, 17 significant digits

_MATRIX_HEADER = re.compile(r"^#\s*source=(\S+)\s+C=(\d+)\s*$")


def save_relation_matrix(mat: RelationMatrix, path, extra_header=()) -> None:
    lines = [f"# source={mat.source.value} C={mat.num_classes}"]
    lines.extend(f"# {h}" for h in extra_header)
    for row in mat.values:
        lines.append("\t".join("%.17g" % v for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_relation_matrix(path) -> RelationMatrix:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file, expected '# source=<s> C=<C>' header")
    m = _MATRIX_HEADER.match(lines[0])
    if m is None:
        raise ParseError(f"{path}: line 1: expected header '# source=<s> C=<C>'")
    try:
        source = GraphSource(m.group(1))
    except ValueError:
        raise ParseError(f"{path}: unknown graph source '{m.group(1)}'") from None
    c = int(m.group(2))
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != c:
            raise ParseError(f"{path}: line {ln}: expected {c} columns, got {len(cols)}")
        try:
            rows.append([float(v) for v in cols])
        except ValueError:
            raise ParseError(f"{path}: line {ln}: non-numeric value") from None
    if len(rows) != c:
        raise ParseError(f"{path}: expected {c} rows, got {len(rows)}")
    return RelationMatrix(np.array(rows), source)
