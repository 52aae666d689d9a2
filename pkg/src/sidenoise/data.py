"""Dataset container, validation, and the on-disk formats every stage shares.

Three file formats live here:

* features file -- UTF-8 TSV, header line ``# d=<d> C=<C>``, then one sample
  per line: ``id<TAB>noisy_label<TAB>f1<TAB>...<TAB>fd``.
* taxonomy file -- JSON array of ``{"class_id", "name", "description",
  "parent"}`` objects; internal (non-class) nodes use ids >= C and may appear
  as parents of classes or of each other.
* clean-label sidecar -- TSV ``id<TAB>clean_label``.  Kept out of the
  training file on purpose so no training stage can consume it by accident.

All floats are stored and computed in 64-bit precision; feature vectors are
L2-normalized at ingestion by default (``normalize=False`` to disable).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

_FEATURES_HEADER = re.compile(r"^#\s*d=(\d+)\s+C=(\d+)\s*$")
_TAXONOMY_KEYS = {"class_id", "name", "description", "parent"}


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Sample:
    """One feature vector with its (possibly wrong) label.

    ``clean_label`` exists only on synthetic data and is hidden from every
    training stage; it travels in the sidecar file, never the features file.
    """

    id: str
    features: np.ndarray
    noisy_label: int
    clean_label: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen_array(self.features))


@dataclass(frozen=True)
class ClassMeta:
    """A class (or internal taxonomy node): id, name, text, parent link."""

    class_id: int
    name: str
    description: str = ""
    parent: int | None = None


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of samples plus the class side information.

    ``classes`` holds exactly the C class entries (ids 0..C-1, sorted);
    ``taxonomy`` additionally includes internal nodes with ids >= C.
    """

    samples: tuple[Sample, ...]
    classes: tuple[ClassMeta, ...]
    d: int
    taxonomy: tuple[ClassMeta, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.taxonomy:
            object.__setattr__(self, "taxonomy", self.classes)
        else:
            object.__setattr__(self, "taxonomy", tuple(self.taxonomy))
        _validate_dataset(self)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @cached_property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.samples)

    @cached_property
    def features(self) -> np.ndarray:
        """N x d feature matrix (read-only), row order = sample order."""
        return _frozen_array([s.features for s in self.samples])

    @cached_property
    def noisy_labels(self) -> np.ndarray:
        return _frozen_array([s.noisy_label for s in self.samples], dtype=np.int64)

    @cached_property
    def clean_labels(self) -> np.ndarray | None:
        """Clean labels, or None unless every sample carries one."""
        if any(s.clean_label is None for s in self.samples):
            return None
        return _frozen_array([s.clean_label for s in self.samples], dtype=np.int64)


def _validate_dataset(ds: Dataset) -> None:
    if ds.d < 1:
        raise ValidationError(f"feature dimension must be >= 1, got {ds.d}")
    c = len(ds.classes)
    if c < 2:
        raise ValidationError(f"need at least 2 classes, got {c}")
    if len(ds.samples) < c:
        raise ValidationError(
            f"need at least as many samples as classes ({c}), got {len(ds.samples)}"
        )

    class_ids = sorted(m.class_id for m in ds.classes)
    if class_ids != list(range(c)):
        raise ValidationError(
            f"class ids must form the contiguous range 0..{c - 1}, got {class_ids}"
        )
    validate_taxonomy(ds.taxonomy)
    tax_ids = {m.class_id for m in ds.taxonomy}
    for m in ds.classes:
        if m.class_id not in tax_ids:
            raise ValidationError(f"class {m.class_id} missing from taxonomy")

    seen: set[str] = set()
    for s in ds.samples:
        if s.id in seen:
            raise ValidationError(f"duplicate sample id '{s.id}'")
        seen.add(s.id)
        if s.features.shape != (ds.d,):
            raise ValidationError(
                f"sample '{s.id}': expected {ds.d} features, got {s.features.shape}"
            )
        if not np.all(np.isfinite(s.features)):
            raise ValidationError(f"sample '{s.id}': non-finite feature value")
        if not 0 <= s.noisy_label < c:
            raise ValidationError(
                f"sample '{s.id}': noisy_label {s.noisy_label} references no class "
                f"(referential integrity, C={c})"
            )
        if s.clean_label is not None and not 0 <= s.clean_label < c:
            raise ValidationError(
                f"sample '{s.id}': clean_label {s.clean_label} references no class "
                f"(referential integrity, C={c})"
            )


def validate_taxonomy(nodes: Sequence[ClassMeta]) -> None:
    """Check that parent links over ``nodes`` form a forest."""
    by_id: dict[int, ClassMeta] = {}
    for m in nodes:
        if m.class_id in by_id:
            raise ValidationError(f"duplicate taxonomy node id {m.class_id}")
        by_id[m.class_id] = m
    for m in nodes:
        if m.parent is not None and m.parent not in by_id:
            raise ValidationError(
                f"node {m.class_id} links to unknown parent {m.parent}"
            )
    # walk parent chains; any revisit inside the current walk is a cycle
    state: dict[int, int] = {}  # 1 = on current path, 2 = done
    for m in nodes:
        path = []
        node = m.class_id
        while node is not None and state.get(node) != 2:
            if state.get(node) == 1:
                raise ValidationError(f"cycle detected in taxonomy at node {node}")
            state[node] = 1
            path.append(node)
            parent = by_id[node].parent
            node = parent
        for n in path:
            state[n] = 2


def normalize_features(ds: Dataset) -> Dataset:
    """Return a copy of ``ds`` with every feature vector scaled to unit L2 norm.

    Idempotent; sample order and labels are unchanged.  Raises on an all-zero
    feature vector (naming the sample).
    """
    norms = np.linalg.norm(ds.features, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(
            f"sample '{ds.samples[int(zero[0])].id}' has a zero feature vector; "
            "cannot normalize"
        )
    samples = tuple(
        replace(s, features=s.features / n) for s, n in zip(ds.samples, norms)
    )
    return Dataset(samples, ds.classes, ds.d, ds.taxonomy)


# ---------------------------------------------------------------------------
# file I/O


def _fmt(x: float) -> str:
    return "%.17g" % x


def load_dataset(
    features_path,
    taxonomy_path,
    clean_path=None,
    *,
    normalize: bool = True,
) -> Dataset:
    """Load and validate a dataset from its feature + taxonomy files.

    ``clean_path`` optionally attaches the clean-label sidecar.  Features are
    L2-normalized unless ``normalize=False``.
    """
    d, c, rows = _read_features(features_path)
    nodes = load_taxonomy(taxonomy_path)
    classes = tuple(sorted((m for m in nodes if m.class_id < c), key=lambda m: m.class_id))
    clean = _read_sidecar(clean_path) if clean_path is not None else {}
    known = {r[0] for r in rows}
    for sid in clean:
        if sid not in known:
            raise ValidationError(
                f"clean-label sidecar references unknown sample id '{sid}'"
            )
    samples = tuple(
        Sample(sid, vec, label, clean.get(sid)) for sid, label, vec in rows
    )
    ds = Dataset(samples, classes, d, taxonomy=tuple(nodes))
    return normalize_features(ds) if normalize else ds


def _read_features(path):
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file, expected header '# d=<d> C=<C>'")
    m = _FEATURES_HEADER.match(lines[0])
    if m is None:
        raise ParseError(f"{path}: line 1: expected header '# d=<d> C=<C>'")
    d, c = int(m.group(1)), int(m.group(2))
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 2 + d:
            raise ParseError(
                f"{path}: line {ln}: expected {2 + d} columns, got {len(cols)}"
            )
        sid = cols[0]
        try:
            label = int(cols[1])
        except ValueError:
            raise ParseError(f"{path}: line {ln}: non-integer label '{cols[1]}'") from None
        try:
            vec = np.array([float(v) for v in cols[2:]], dtype=np.float64)
        except ValueError:
            raise ParseError(f"{path}: line {ln}: non-numeric feature value") from None
        if not np.all(np.isfinite(vec)):
            raise ParseError(f"{path}: line {ln}: non-finite feature value")
        rows.append((sid, label, vec))
    return d, c, rows


def load_taxonomy(path) -> list[ClassMeta]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, list):
        raise ParseError(f"{path}: expected a JSON array of taxonomy nodes")
    nodes = []
    for i, obj in enumerate(raw):
        if not isinstance(obj, dict) or set(obj) != _TAXONOMY_KEYS:
            raise ParseError(
                f"{path}: entry {i}: expected keys {sorted(_TAXONOMY_KEYS)}"
            )
        if not isinstance(obj["class_id"], int) or isinstance(obj["class_id"], bool):
            raise ParseError(f"{path}: entry {i}: class_id must be an integer")
        if obj["parent"] is not None and not isinstance(obj["parent"], int):
            raise ParseError(f"{path}: entry {i}: parent must be an integer or null")
        nodes.append(
            ClassMeta(
                class_id=obj["class_id"],
                name=str(obj["name"]),
                description=str(obj["description"]),
                parent=obj["parent"],
            )
        )
    return nodes


def _read_sidecar(path) -> dict[str, int]:
    path = Path(path)
    out: dict[str, int] = {}
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 2:
            raise ParseError(f"{path}: line {ln}: expected 2 columns, got {len(cols)}")
        try:
            label = int(cols[1])
        except ValueError:
            raise ParseError(f"{path}: line {ln}: non-integer label '{cols[1]}'") from None
        if cols[0] in out:
            raise ValidationError(f"{path}: duplicate sample id '{cols[0]}'")
        out[cols[0]] = label
    return out


def save_features(ds: Dataset, path, extra_header: Iterable[str] = ()) -> None:
    path = Path(path)
    lines = [f"# d={ds.d} C={ds.num_classes}"]
    lines.extend(f"# {h}" for h in extra_header)
    for s in ds.samples:
        lines.append(
            "\t".join([s.id, str(s.noisy_label)] + [_fmt(v) for v in s.features])
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_taxonomy(nodes: Sequence[ClassMeta], path) -> None:
    objs = [
        {
            "class_id": m.class_id,
            "name": m.name,
            "description": m.description,
            "parent": m.parent,
        }
        for m in sorted(nodes, key=lambda m: m.class_id)
    ]
    Path(path).write_text(json.dumps(objs, indent=2) + "\n", encoding="utf-8")


def save_clean_labels(ds: Dataset, path, extra_header: Iterable[str] = ()) -> None:
    lines = [f"# clean labels for {len(ds.samples)} samples"]
    lines.extend(f"# {h}" for h in extra_header)
    for s in ds.samples:
        if s.clean_label is not None:
            lines.append(f"{s.id}\t{s.clean_label}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_dataset(
    ds: Dataset,
    features_path,
    taxonomy_path,
    clean_path=None,
    extra_header: Iterable[str] = (),
) -> None:
    """Write a dataset back to disk; inverse of :func:`load_dataset`."""
    save_features(ds, features_path, extra_header)
    save_taxonomy(ds.taxonomy, taxonomy_path)
    if clean_path is not None and any(s.clean_label is not None for s in ds.samples):
        save_clean_labels(ds, clean_path)
