import numpy as np
import pytest

from nabkit.dataset import DatasetSplit, LabeledExample, make_synthetic


@pytest.fixture(scope="session")
def tiny_pair():
    return make_synthetic(train_size=200, test_size=80, class_count=4, seed=0)


def make_split(n, class_count=4, size=8, seed=0, name="train", labels=None):
    """Small split of random images for structural tests."""
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        image = rng.uniform(0, 1, size=(size, size, 3)).astype(np.float32)
        label = int(labels[i]) if labels is not None else i % class_count
        examples.append(LabeledExample(id=i, image=image, label=label))
    return DatasetSplit(name=name, class_count=class_count, examples=examples)


@pytest.fixture
def small_split():
    return make_split(40)
