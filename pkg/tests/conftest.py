import numpy as np
import pytest

from sidenoise.data import ClassMeta, Dataset, Sample


def build_dataset(features, labels, num_classes=None, clean=None, taxonomy=None, ids=None):
    """Small-dataset factory for tests; features row-per-sample."""
    features = np.asarray(features, dtype=np.float64)
    c = num_classes if num_classes is not None else int(max(labels)) + 1
    classes = tuple(
        ClassMeta(i, f"class{i}", f"description of class {i}", None) for i in range(c)
    )
    samples = tuple(
        Sample(
            ids[i] if ids else f"s{i}",
            features[i],
            int(labels[i]),
            None if clean is None else int(clean[i]),
        )
        for i in range(len(labels))
    )
    return Dataset(samples, classes, features.shape[1], taxonomy or classes)


@pytest.fixture
def two_class_dataset():
    # three samples per class on the unit circle, classes near e1 / e2
    angles = [0.0, 10.0, 20.0, 90.0, 80.0, 70.0]
    feats = [[np.cos(np.radians(a)), np.sin(np.radians(a))] for a in angles]
    return build_dataset(feats, [0, 0, 0, 1, 1, 1])
