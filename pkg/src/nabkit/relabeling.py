"""Pseudo-label generation for detected samples.

Two real strategies (a predictor trained on verified data, and nearest
class center in feature space) plus a synthetic relabeler with exactly
controllable accuracy for sweeps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace as dc_replace
from typing import Callable, Iterable, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .dataset import DatasetSplit
from .errors import ArgumentError, UndefinedMetricError
from .seeding import rng_for, round_count
from .training import Classifier, TrainConfig, train

_STREAM_SYNTH_FLIP = 51
_STREAM_CONTRASTIVE = 52

RECIPES = ("verified-supervised", "contrastive")


class FeatureExtractor:
    """Deterministic image-to-vector map backed by a trained encoder."""

    def __init__(self, classifier: Classifier, recipe: str):
        self.classifier = classifier
        self.recipe = recipe

    @property
    def feature_dim(self) -> int:
        return self.classifier.feature_dim

    def transform(self, data: DatasetSplit | np.ndarray) -> np.ndarray:
        images = data.images() if isinstance(data, DatasetSplit) else data
        return self.classifier.features(images)


@dataclass
class ClassCenters:
    centers: dict[int, np.ndarray]
    source_count: dict[int, int]


@dataclass
class PseudoLabelMap:
    assignments: dict[int, int]
    method: str
    coverage: frozenset[int]
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "assignments": {str(k): int(v) for k, v in sorted(self.assignments.items())},
            "method": self.method,
            "coverage": sorted(self.coverage),
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json_dict(cls, d: dict) -> "PseudoLabelMap":
        return cls(
            assignments={int(k): int(v) for k, v in d["assignments"].items()},
            method=d["method"],
            coverage=frozenset(d["coverage"]),
            metadata=d.get("metadata", {}),
        )


# ---------------------------------------------------------------------------
# feature extractor training
# ---------------------------------------------------------------------------


def _contrastive_augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    h, w, c = image.shape
    # crop with pad 4, flip, brightness/contrast jitter
    padded = np.zeros((h + 8, w + 8, c), dtype=np.float32)
    padded[4:4 + h, 4:4 + w] = image
    top, left = rng.integers(0, 9, size=2)
    out = padded[top:top + h, left:left + w]
    if rng.random() < 0.5:
        out = out[:, ::-1]
    scale = rng.uniform(0.6, 1.4)
    shift = rng.uniform(-0.2, 0.2)
    return np.clip(out * scale + shift, 0.0, 1.0).astype(np.float32)


def _train_contrastive(data: DatasetSplit, epochs: int, seed: int,
                       architecture: str, batch_size: int = 128,
                       temperature: float = 0.5) -> FeatureExtractor:
    """Augmentation-pair agreement (normalized temperature-scaled CE)."""
    from .models import build_model

    torch.manual_seed(seed)
    h, w, c = data.image_shape
    module = build_model(architecture, data.class_count, in_channels=c)
    projector = torch.nn.Sequential(
        torch.nn.Linear(module.feature_dim, 128), torch.nn.ReLU(), torch.nn.Linear(128, 64)
    )
    params = list(module.parameters()) + list(projector.parameters())
    optimizer = torch.optim.Adam(params, lr=1e-3)
    images = data.images()
    ids = np.array(data.ids, dtype=np.int64)
    n = len(data)
    module.train()
    for epoch in range(epochs):
        order = rng_for(seed, _STREAM_CONTRASTIVE, epoch).permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue
            views = []
            for view in (0, 1):
                batch = np.stack([
                    _contrastive_augment(images[i], rng_for(seed, _STREAM_CONTRASTIVE, epoch, int(ids[i]), view))
                    for i in idx
                ])
                views.append(torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2))))
            z = projector(module.encode(torch.cat(views)))
            z = F.normalize(z, dim=1)
            sim = z @ z.T / temperature
            b = len(idx)
            sim.fill_diagonal_(float("-inf"))
            targets = torch.cat([torch.arange(b, 2 * b), torch.arange(0, b)])
            loss = F.cross_entropy(sim, targets)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    clf = Classifier(module, architecture, data.class_count, in_channels=c)
    clf._trained = True
    return FeatureExtractor(clf, recipe="contrastive")


def train_feature_extractor(
    data: DatasetSplit,
    recipe: str = "verified-supervised",
    epochs: int = 20,
    seed: int = 0,
    architecture: str = "small-cnn",
) -> FeatureExtractor:
    """Train an encoder; supervised on a verified split, or contrastive on images."""
    if epochs < 1:
        raise ArgumentError(f"epochs must be >= 1, got {epochs}")
    if len(data) == 0:
        raise ArgumentError("cannot train a feature extractor on an empty split")
    if recipe == "verified-supervised":
        config = TrainConfig(architecture=architecture, epochs=epochs, seed=seed)
        result = train(data, config)
        return FeatureExtractor(result.classifier, recipe=recipe)
    if recipe == "contrastive":
        return _train_contrastive(data, epochs, seed, architecture)
    raise ArgumentError(f"unknown recipe '{recipe}' (expected one of {RECIPES})")


# ---------------------------------------------------------------------------
# pseudo-label strategies
# ---------------------------------------------------------------------------


def vd_pseudo_labels(
    verified: DatasetSplit,
    targets: DatasetSplit,
    train_config: TrainConfig | None = None,
    seed: int = 0,
) -> PseudoLabelMap:
    """Train a label predictor on the verified split, predict over targets."""
    if len(verified) == 0:
        raise ArgumentError("verified split is empty")
    if verified.class_count != targets.class_count:
        raise ArgumentError("verified and target splits disagree on class count")
    config = dc_replace(train_config or TrainConfig(), seed=seed)
    result = train(verified, config)
    preds = result.classifier.predict(targets.images())
    assignments = {ex.id: int(preds[i]) for i, ex in enumerate(targets.examples)}
    metadata = {}
    present = set(verified.labels().tolist())
    missing = sorted(set(range(verified.class_count)) - present)
    if missing:
        metadata["missing_classes"] = missing
    return PseudoLabelMap(assignments=assignments, method="VD",
                          coverage=frozenset(assignments), metadata=metadata)


def compute_class_centers(features: np.ndarray, labels: np.ndarray, ids: np.ndarray,
                          retained: frozenset[int] | set[int]) -> ClassCenters:
    """Arithmetic mean of retained feature vectors per class.

    Summation runs in ascending id order so the result is bit-stable no
    matter how the split was ordered.
    """
    order = np.argsort(ids, kind="stable")
    centers: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    sums: dict[int, np.ndarray] = {}
    for i in order:
        if int(ids[i]) not in retained:
            continue
        c = int(labels[i])
        if c not in sums:
            sums[c] = np.zeros(features.shape[1], dtype=np.float64)
            counts[c] = 0
        sums[c] += features[i]
        counts[c] += 1
    for c in sums:
        centers[c] = (sums[c] / counts[c]).astype(np.float64)
    return ClassCenters(centers=centers, source_count=counts)


def nc_pseudo_labels(
    dp: DatasetSplit,
    extractor: FeatureExtractor,
    removal_rate: float = 0.2,
    detector: Optional[Callable[[DatasetSplit, float], "object"]] = None,
    seed: int = 0,
) -> PseudoLabelMap:
    """Nearest class center on learned features.

    A removal set (the detector run at ``removal_rate``) is excluded from
    center computation to limit the influence of poisoned samples; every
    example, removed or not, is then assigned its nearest center.
    """
    if not (0.0 <= removal_rate < 1.0):
        raise ArgumentError(f"removal_rate must be in [0, 1), got {removal_rate}")
    removed: frozenset[int] = frozenset()
    if removal_rate > 0.0:
        if detector is None:
            raise ArgumentError("a detector handle is required when removal_rate > 0")
        removal_report = detector(dp, removal_rate)
        removed = frozenset(removal_report.suspected_ids)
    features = extractor.transform(dp)
    labels = dp.labels()
    ids = np.array(dp.ids, dtype=np.int64)
    retained = frozenset(int(i) for i in ids) - removed
    centers = compute_class_centers(features, labels, ids, retained)
    if not centers.centers:
        raise ArgumentError("no class centers could be computed (everything removed)")
    class_order = sorted(centers.centers)
    center_matrix = np.stack([centers.centers[c] for c in class_order])
    dists = np.linalg.norm(features[:, None, :] - center_matrix[None, :, :], axis=2)
    nearest = dists.argmin(axis=1)  # argmin takes the first minimum: lowest class index
    assignments = {int(ids[i]): int(class_order[nearest[i]]) for i in range(len(dp))}
    metadata = {"removal_rate": removal_rate, "removed": len(removed)}
    missing = sorted(set(range(dp.class_count)) - set(class_order))
    if missing:
        metadata["missing_classes"] = missing
    return PseudoLabelMap(assignments=assignments, method="NC",
                          coverage=frozenset(assignments), metadata=metadata)


def synthetic_pseudo_labels(
    dp: DatasetSplit,
    coverage: Iterable[int],
    pla: float,
    seed: int,
    truth: DatasetSplit | None = None,
) -> PseudoLabelMap:
    """Pseudo labels with exactly the requested accuracy.

    A seeded round((1 - pla) * |coverage|) subset is flipped to a uniformly
    random different class; the rest receive the true label. ``truth``
    supplies the true labels (defaults to dp itself, which is only correct
    for splits whose labels were never rewritten).
    """
    if not (0.0 <= pla <= 1.0):
        raise ArgumentError(f"pseudo-label accuracy must be in [0, 1], got {pla}")
    truth = truth or dp
    coverage = sorted(set(coverage))
    unknown = [i for i in coverage if i not in dp.id_set]
    if unknown:
        raise ArgumentError(f"coverage ids not in split: {unknown[:10]}")
    flip_count = round_count((1.0 - pla) * len(coverage))
    rng = rng_for(seed, _STREAM_SYNTH_FLIP)
    flipped = set(
        int(coverage[i]) for i in rng.choice(len(coverage), size=flip_count, replace=False)
    ) if flip_count else set()
    assignments: dict[int, int] = {}
    for ex_id in coverage:
        true_label = truth.by_id(ex_id).label
        if ex_id in flipped:
            offset = int(rng.integers(1, dp.class_count))
            assignments[ex_id] = (true_label + offset) % dp.class_count
        else:
            assignments[ex_id] = true_label
    return PseudoLabelMap(assignments=assignments, method="synthetic",
                          coverage=frozenset(coverage), metadata={"pla": pla})


def pseudo_label_accuracy(
    label_map: PseudoLabelMap,
    truth: DatasetSplit,
    coverage: Iterable[int],
) -> float:
    """Fraction of covered ids whose assignment equals the true label."""
    coverage = sorted(set(coverage))
    if not coverage:
        raise UndefinedMetricError("pseudo-label accuracy undefined over an empty coverage set")
    outside = [i for i in coverage if i not in label_map.coverage]
    if outside:
        raise ArgumentError(f"ids outside the map's coverage: {outside[:10]}")
    hits = sum(1 for i in coverage if label_map.assignments[i] == truth.by_id(i).label)
    return hits / len(coverage)
