"""Dataset model: labeled image examples with stable ids and provenance.

Images are channel-last float32 arrays with values in [0, 1]. Splits are
immutable by convention: transforms build new splits, ids survive every
transform so sample identity can be tracked across poisoning, detection
and relabeling.
"""

from __future__ import annotations

import os
import pickle
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ArgumentError, DataLoadError, IntegrityError
from .seeding import rng_for, round_count

# rng stream tags, one per stochastic operation on a shared seed
_STREAM_SUBSAMPLE = 11
_STREAM_VERIFIED = 12


class Provenance(IntEnum):
    CLEAN = 0
    ATTACKER_POISONED = 1
    DEFENDER_STAMPED = 2


@dataclass
class LabeledExample:
    """One image with its label, stable id and provenance flag."""

    id: int
    image: np.ndarray  # (H, W, C) float32 in [0, 1]
    label: int
    provenance: Provenance = Provenance.CLEAN


@dataclass
class DatasetSplit:
    """An ordered collection of examples with a fixed class count."""

    name: str
    class_count: int
    examples: list[LabeledExample]

    def __post_init__(self):
        ids = [ex.id for ex in self.examples]
        if len(set(ids)) != len(ids):
            raise ArgumentError(f"duplicate example ids in split '{self.name}'")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[LabeledExample]:
        return iter(self.examples)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(ex.id for ex in self.examples)

    @property
    def id_set(self) -> frozenset[int]:
        return frozenset(ex.id for ex in self.examples)

    def by_id(self, example_id: int) -> LabeledExample:
        if not hasattr(self, "_index"):
            self._index = {ex.id: ex for ex in self.examples}
        return self._index[example_id]

    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)

    def images(self) -> np.ndarray:
        """Stacked (N, H, W, C) float32 view of all images, in split order."""
        return np.stack([ex.image for ex in self.examples])

    def provenances(self) -> np.ndarray:
        return np.array([int(ex.provenance) for ex in self.examples], dtype=np.int64)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        if not self.examples:
            raise ArgumentError(f"split '{self.name}' is empty")
        return self.examples[0].image.shape


class DatasetPair(NamedTuple):
    train: DatasetSplit
    test: DatasetSplit


@dataclass
class PoisonManifest:
    """Ground-truth record of which ids were poisoned.

    Evaluation-only: defenses never receive a manifest (the oracle detector
    is the single deliberate exception). ``original_labels`` keeps each
    poisoned example's pre-poisoning label so pseudo-label accuracy can be
    measured. ``noise_ids`` lists warp noise-mode samples, which keep their
    labels and do not count toward the poisoning quota.
    """

    poisoned_ids: frozenset[int]
    trigger_name: str
    target_map_name: str
    poison_rate: float
    seed: int
    original_labels: dict[int, int] = field(default_factory=dict)
    noise_ids: frozenset[int] = field(default_factory=frozenset)

    def to_json_dict(self) -> dict:
        return {
            "poisoned_ids": sorted(self.poisoned_ids),
            "trigger_name": self.trigger_name,
            "target_map_name": self.target_map_name,
            "poison_rate": self.poison_rate,
            "seed": self.seed,
            "original_labels": {str(k): int(v) for k, v in sorted(self.original_labels.items())},
            "noise_ids": sorted(self.noise_ids),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PoisonManifest":
        return cls(
            poisoned_ids=frozenset(d["poisoned_ids"]),
            trigger_name=d["trigger_name"],
            target_map_name=d["target_map_name"],
            poison_rate=float(d["poison_rate"]),
            seed=int(d["seed"]),
            original_labels={int(k): int(v) for k, v in d.get("original_labels", {}).items()},
            noise_ids=frozenset(d.get("noise_ids", [])),
        )


def validate_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ArgumentError(f"expected (H, W, C) image with 1 or 3 channels, got {image.shape}")
    if image.dtype != np.float32:
        raise ArgumentError(f"expected float32 image, got {image.dtype}")
    lo, hi = float(image.min()), float(image.max())
    if lo < 0.0 or hi > 1.0:
        raise ArgumentError(f"pixel values outside [0, 1]: min={lo}, max={hi}")


# ---------------------------------------------------------------------------
# synthetic dataset
# ---------------------------------------------------------------------------

# Shape bank: classes differ by geometry only. Color, position, size,
# aspect, rotation, contrast and clutter are all randomized per example so
# a classifier has to learn shape and cannot finish in the first epochs.
_SHAPE_COUNT = 10


def _shape_mask(shape_idx: int, size: int, cx: float, cy: float, r: float,
                angle: float = 0.0, aspect: float = 1.0) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    dx = (cos_a * (xx - cx) + sin_a * (yy - cy)) / aspect
    dy = (-sin_a * (xx - cx) + cos_a * (yy - cy)) * aspect
    adx, ady = np.abs(dx), np.abs(dy)
    if shape_idx == 0:  # filled square
        return (adx <= r) & (ady <= r)
    if shape_idx == 1:  # disk
        return dx * dx + dy * dy <= r * r
    if shape_idx == 2:  # plus
        return ((adx <= r / 3) & (ady <= r)) | ((ady <= r / 3) & (adx <= r))
    if shape_idx == 3:  # triangle, apex up
        return (ady <= r) & (adx <= (dy + r) / 2)
    if shape_idx == 4:  # diamond
        return adx + ady <= r
    if shape_idx == 5:  # ring
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 >= (r / 2) ** 2)
    if shape_idx == 6:  # diagonal cross
        return (np.abs(adx - ady) <= r / 3) & (adx <= r) & (ady <= r)
    if shape_idx == 7:  # horizontal bars
        return (adx <= r) & (ady <= r) & ((np.floor((dy + r) / max(2.0, r / 2)) % 2) == 0)
    if shape_idx == 8:  # vertical bars
        return (adx <= r) & (ady <= r) & ((np.floor((dx + r) / max(2.0, r / 2)) % 2) == 0)
    if shape_idx == 9:  # hollow square frame
        m = np.maximum(adx, ady)
        return (m <= r) & (m >= r / 2)
    raise ArgumentError(f"no shape for class {shape_idx}")


def _synthetic_example(example_id: int, label: int, size: int, rng: np.random.Generator) -> LabeledExample:
    bg = rng.uniform(0.0, 0.5, size=3)
    img = np.ones((size, size, 3), dtype=np.float64) * bg
    # illumination ramp in a random direction, label-irrelevant
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    direction = rng.uniform(0, 2 * np.pi)
    ramp = 0.7 + 0.3 * (np.cos(direction) * xx + np.sin(direction) * yy + 1) / 2
    img *= ramp[:, :, None]
    # background clutter, label-irrelevant
    for _ in range(int(rng.integers(1, 6))):
        dcx, dcy = rng.uniform(1, size - 1, size=2)
        dr = rng.uniform(1.0, 3.2)
        img[_shape_mask(1, size, dcx, dcy, dr)] = rng.uniform(0.0, 1.0, size=3)
    cx, cy = rng.uniform(size * 0.28, size * 0.72, size=2)
    r = rng.uniform(size * 0.12, size * 0.30)
    # rotation capped so a tilted square cannot pass for a diamond
    angle = rng.uniform(-np.pi / 12, np.pi / 12)
    aspect = rng.uniform(0.7, 1.4)
    color = rng.uniform(0.3, 1.0, size=3)
    img[_shape_mask(label % _SHAPE_COUNT, size, cx, cy, r, angle, aspect)] = color
    # foreground occluders, often directly on the shape
    for _ in range(int(rng.integers(0, 3))):
        ocx, ocy = rng.uniform(cx - r, cx + r), rng.uniform(cy - r, cy + r)
        odr = rng.uniform(1.0, 3.0)
        img[_shape_mask(1, size, ocx, ocy, odr)] = rng.uniform(0.0, 1.0, size=3)
    img += rng.normal(0.0, rng.uniform(0.04, 0.14), size=img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return LabeledExample(id=example_id, image=img, label=label)


def make_synthetic(
    train_size: int = 4000,
    test_size: int = 1000,
    class_count: int = 4,
    seed: int = 0,
    image_size: int = 32,
) -> DatasetPair:
    """Procedurally generated shape-classification dataset, no downloads."""
    if class_count < 2 or class_count > _SHAPE_COUNT:
        raise ArgumentError(f"class_count must be in [2, {_SHAPE_COUNT}], got {class_count}")
    if train_size < class_count or test_size < class_count:
        raise ArgumentError("splits must contain at least one example per class")
    splits = []
    for split_idx, (name, n) in enumerate([("train", train_size), ("test", test_size)]):
        examples = []
        for i in range(n):
            rng = rng_for(seed, split_idx, i)
            examples.append(_synthetic_example(i, i % class_count, image_size, rng))
        splits.append(DatasetSplit(name=name, class_count=class_count, examples=examples))
    return DatasetPair(train=splits[0], test=splits[1])


# ---------------------------------------------------------------------------
# CIFAR-10 loader (python pickled batches layout)
# ---------------------------------------------------------------------------

_CIFAR_TRAIN_BATCHES = [f"data_batch_{i}" for i in range(1, 6)]
_CIFAR_TEST_BATCH = "test_batch"
_CIFAR_DIR = "cifar-10-batches-py"

DATA_ROOT_ENV = "NABKIT_DATA_ROOT"


def _cifar_batch(path: Path, batch_index: int) -> tuple[np.ndarray, list[int]]:
    if not path.exists():
        raise DataLoadError(f"missing CIFAR-10 batch file: {path}")
    try:
        with open(path, "rb") as f:
            entry = pickle.load(f, encoding="bytes")
        data = entry[b"data"]
        labels = entry[b"labels"]
        data = np.asarray(data, dtype=np.uint8).reshape(-1, 3, 32, 32)
    except DataLoadError:
        raise
    except Exception as exc:
        raise IntegrityError(f"corrupted CIFAR-10 batch {batch_index} at {path}: {exc}") from exc
    if len(data) != len(labels):
        raise IntegrityError(f"corrupted CIFAR-10 batch {batch_index}: data/label count mismatch")
    images = (data.astype(np.float32) / 255.0).transpose(0, 2, 3, 1)
    return images, [int(y) for y in labels]


def load_cifar10(root: str | os.PathLike) -> DatasetPair:
    base = Path(root)
    if (base / _CIFAR_DIR).is_dir():
        base = base / _CIFAR_DIR
    splits = []
    next_id = 0
    for name, batch_names in [("train", _CIFAR_TRAIN_BATCHES), ("test", [_CIFAR_TEST_BATCH])]:
        examples: list[LabeledExample] = []
        next_id = 0
        for bi, bname in enumerate(batch_names):
            images, labels = _cifar_batch(base / bname, bi)
            for img, y in zip(images, labels):
                examples.append(LabeledExample(id=next_id, image=img, label=y))
                next_id += 1
        splits.append(DatasetSplit(name=name, class_count=10, examples=examples))
    return DatasetPair(train=splits[0], test=splits[1])


def load_dataset(
    name: str,
    root: str | os.PathLike | None = None,
    *,
    seed: int = 0,
    train_size: int = 4000,
    test_size: int = 1000,
    class_count: int = 4,
) -> DatasetPair:
    """Load a named dataset; 'synthetic' needs no files, 'cifar10' needs a root."""
    if name == "synthetic":
        return make_synthetic(train_size, test_size, class_count, seed)
    if name == "cifar10":
        if root is None:
            root = os.environ.get(DATA_ROOT_ENV)
        if root is None:
            raise DataLoadError(
                f"cifar10 requires a dataset root (flag or ${DATA_ROOT_ENV})"
            )
        return load_cifar10(root)
    raise DataLoadError(f"unknown dataset '{name}' (expected 'synthetic' or 'cifar10')")


# ---------------------------------------------------------------------------
# seeded, stratified subsampling and verified-data splitting
# ---------------------------------------------------------------------------


def _stratified_pick(split: DatasetSplit, total: int, rng: np.random.Generator) -> list[int]:
    """Pick `total` positions stratified by class, largest-remainder allocation."""
    labels = split.labels()
    n = len(split)
    class_positions = [np.flatnonzero(labels == c) for c in range(split.class_count)]
    shares = np.array([total * len(p) / n for p in class_positions])
    base = np.floor(shares).astype(int)
    remainders = shares - base
    deficit = total - int(base.sum())
    # ties in remainders resolved by ascending class index
    order = np.lexsort((np.arange(split.class_count), -remainders))
    for c in order[:deficit]:
        base[c] += 1
    picked: list[int] = []
    for c, positions in enumerate(class_positions):
        k = min(base[c], len(positions))
        if k > 0:
            picked.extend(rng.choice(positions, size=k, replace=False).tolist())
    picked_set = set(picked)
    if len(picked) < total:  # classes exhausted, top up from the rest
        pool = [i for i in range(n) if i not in picked_set]
        extra = rng.choice(pool, size=total - len(picked), replace=False)
        picked.extend(int(i) for i in extra)
    return sorted(picked)


def subsample(split: DatasetSplit, fraction: float, seed: int) -> DatasetSplit:
    """Seeded stratified subsample keeping round(fraction * N) examples."""
    if not (0.0 < fraction <= 1.0):
        raise ArgumentError(f"fraction must be in (0, 1], got {fraction}")
    if fraction * len(split) < split.class_count:
        raise ArgumentError(
            f"fraction {fraction} of {len(split)} examples yields fewer than "
            f"{split.class_count} samples (one per class required)"
        )
    if fraction == 1.0:
        return DatasetSplit(name=split.name, class_count=split.class_count, examples=list(split.examples))
    total = round_count(fraction * len(split))
    rng = rng_for(seed, _STREAM_SUBSAMPLE)
    picked = _stratified_pick(split, total, rng)
    examples = [split.examples[i] for i in picked]
    return DatasetSplit(name=split.name, class_count=split.class_count, examples=examples)


def split_verified(split: DatasetSplit, fraction: float, seed: int) -> tuple[DatasetSplit, DatasetSplit]:
    """Partition into a small verified split and the remainder, stratified and seeded."""
    if not (0.0 < fraction < 1.0):
        raise ArgumentError(f"fraction must be in (0, 1), got {fraction}")
    total = round_count(fraction * len(split))
    rng = rng_for(seed, _STREAM_VERIFIED)
    picked = _stratified_pick(split, total, rng)
    picked_set = set(picked)
    verified = [split.examples[i] for i in picked]
    rest = [ex for i, ex in enumerate(split.examples) if i not in picked_set]
    return (
        DatasetSplit(name="verified", class_count=split.class_count, examples=verified),
        DatasetSplit(name=split.name, class_count=split.class_count, examples=rest),
    )
