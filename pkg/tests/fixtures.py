"""Shared test stubs: index-coded splits and table-driven classifiers."""

import numpy as np

from nabkit.dataset import DatasetSplit, LabeledExample
from nabkit.stamping import StampSpec

CHECKER = np.array([[1, 0, 1], [0, 1, 0], [1, 0, 1]], dtype=np.float32)


def coded_split(n, class_count, labels=None, seed=0):
    """Images carrying their index in a pixel the trigger and stamp never touch."""
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        image = np.full((8, 8, 3), 0.5, dtype=np.float32)
        image[0, 7, 0] = np.float32(i / 256.0)
        label = int(labels[i]) if labels is not None else int(rng.integers(0, class_count))
        examples.append(LabeledExample(id=i, image=image, label=label))
    return DatasetSplit(name="test", class_count=class_count, examples=examples)


class TableClassifier:
    """Looks up predictions by (example index, stamped?, triggered?)."""

    is_trained = True

    def __init__(self, table, stamp=StampSpec()):
        self.table = table
        self.stamp = stamp

    def predict(self, images):
        images = np.asarray(images)
        idxs = np.rint(images[:, 0, 7, 0] * 256.0).astype(int)
        region = images[:, self.stamp.row:self.stamp.row + self.stamp.height,
                        self.stamp.col:self.stamp.col + self.stamp.width]
        stamped = (region == self.stamp.value).all(axis=(1, 2, 3))
        triggered = (images[:, -3:, -3:, 0] == CHECKER).all(axis=(1, 2))
        return np.array(
            [self.table[(int(i), bool(s), bool(t))]
             for i, s, t in zip(idxs, stamped, triggered)],
            dtype=np.int64,
        )


def random_table(n, class_count, rng):
    return {
        (i, stamped, triggered): int(rng.integers(0, class_count))
        for i in range(n) for stamped in (False, True) for triggered in (False, True)
    }
