"""Standard supervised training pipeline and classifier wrapper.

The pipeline is deliberately unmodified by the defense: SGD with momentum,
cosine learning-rate decay, random crop / horizontal flip / cutout
augmentation. The defense only ever rewrites the training data upstream.

Augmentation draws are keyed by (seed, epoch, example id), so results do
not depend on batch composition or worker count. Training is deterministic
given the seed up to platform kernel nondeterminism; with a single torch
thread it is bit-stable in practice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .attacks import TargetMap, TriggerSpec
from .dataset import DatasetSplit, Provenance
from .errors import ArgumentError, StateError, TrainingDivergedError
from .models import build_model
from .seeding import rng_for
from .stamping import StampSpec

_STREAM_SHUFFLE = 31
_STREAM_AUG = 32

_GROUP_NAMES = {
    Provenance.CLEAN: "clean",
    Provenance.ATTACKER_POISONED: "poisoned",
    Provenance.DEFENDER_STAMPED: "stamped",
}


@dataclass
class TrainConfig:
    architecture: str = "small-cnn"
    epochs: int = 20  # reference setting is 100; 20 suits desk-scale runs
    batch_size: int = 64
    momentum: float = 0.9
    initial_lr: Optional[float] = None  # default 0.1, 0.3 for resnet-50
    weight_decay: Optional[float] = None  # default 1e-4, 5e-4 for resnet-50
    augment: bool = True
    seed: int = 0

    @property
    def lr(self) -> float:
        if self.initial_lr is not None:
            return self.initial_lr
        return 0.3 if self.architecture == "resnet-50" else 0.1

    @property
    def decay(self) -> float:
        if self.weight_decay is not None:
            return self.weight_decay
        return 5e-4 if self.architecture == "resnet-50" else 1e-4


class Classifier:
    """Torch classifier with numpy in/out and checkpointing."""

    CHECKPOINT_VERSION = 1

    def __init__(self, module: torch.nn.Module, architecture: str, class_count: int,
                 in_channels: int = 3):
        self.module = module
        self.architecture = architecture
        self.class_count = class_count
        self.in_channels = in_channels
        self._trained = False

    @property
    def is_trained(self) -> bool:
        return self._trained

    @property
    def feature_dim(self) -> int:
        return self.module.feature_dim

    def _to_tensor(self, images: np.ndarray) -> torch.Tensor:
        if images.ndim == 3:
            images = images[None]
        return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))

    @torch.no_grad()
    def predict_logits(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        self.module.eval()
        outs = []
        for i in range(0, len(images), batch_size):
            outs.append(self.module(self._to_tensor(images[i:i + batch_size])).numpy())
        return np.concatenate(outs, axis=0)

    def predict(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return self.predict_logits(images, batch_size).argmax(axis=1)

    @torch.no_grad()
    def features(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        self.module.eval()
        outs = []
        for i in range(0, len(images), batch_size):
            outs.append(self.module.encode(self._to_tensor(images[i:i + batch_size])).numpy())
        return np.concatenate(outs, axis=0)

    def input_gradient(self, images: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Gradient of the summed cross-entropy w.r.t. the input pixels."""
        self.module.eval()
        x = self._to_tensor(images.astype(np.float32)).requires_grad_(True)
        y = torch.from_numpy(np.asarray(labels, dtype=np.int64))
        loss = F.cross_entropy(self.module(x), y, reduction="sum")
        loss.backward()
        return x.grad.detach().numpy().transpose(0, 2, 3, 1).astype(np.float32)

    def save(self, path, config_hash: str | None = None) -> None:
        torch.save(
            {
                "version": self.CHECKPOINT_VERSION,
                "architecture": self.architecture,
                "class_count": self.class_count,
                "in_channels": self.in_channels,
                "config_hash": config_hash,
                "state_dict": self.module.state_dict(),
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "Classifier":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        if payload.get("version") != cls.CHECKPOINT_VERSION:
            raise StateError(f"unsupported checkpoint version in {path}")
        module = build_model(payload["architecture"], payload["class_count"], payload["in_channels"])
        module.load_state_dict(payload["state_dict"])
        clf = cls(module, payload["architecture"], payload["class_count"], payload["in_channels"])
        clf._trained = True
        return clf


@dataclass
class EvalProbe:
    """Held-out data plus attack context for per-epoch trace metrics."""

    test: DatasetSplit
    trigger: TriggerSpec
    target_map: TargetMap
    stamp: Optional[StampSpec] = None


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_by_group: dict[str, float]
    asr: Optional[float] = None
    ca: Optional[float] = None


@dataclass
class TrainResult:
    classifier: Classifier
    epochs: list[EpochRecord]
    example_losses: dict[int, list[float]] = field(default_factory=dict)

    def trace_rows(self) -> list[dict]:
        rows = []
        for rec in self.epochs:
            row = {"epoch": rec.epoch, "lr": rec.lr, "asr": rec.asr, "ca": rec.ca}
            for group, value in rec.loss_by_group.items():
                row[f"loss_{group}"] = value
            rows.append(row)
        return rows


def augment_image(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random crop (pad 4), horizontal flip (p=0.5), 3x3 cutout."""
    h, w, c = image.shape
    padded = np.zeros((h + 8, w + 8, c), dtype=np.float32)
    padded[4:4 + h, 4:4 + w] = image
    top, left = rng.integers(0, 9, size=2)
    out = padded[top:top + h, left:left + w]
    if rng.random() < 0.5:
        out = out[:, ::-1]
    out = np.ascontiguousarray(out)
    cy = int(rng.integers(0, h - 2))
    cx = int(rng.integers(0, w - 2))
    out[cy:cy + 3, cx:cx + 3] = 0.0
    return out


def _cosine_lr(base_lr: float, epoch: int, total: int) -> float:
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / total))


def train(
    data: DatasetSplit,
    config: TrainConfig,
    probe: EvalProbe | None = None,
    loss_floor: float | None = None,
    record_example_losses: bool = False,
    lr_schedule: str = "cosine",
) -> TrainResult:
    """Train a classifier on the split with the configured pipeline.

    ``loss_floor`` enables the ascent-shaped loss sign(ce - floor) * ce used
    for loss-dynamics isolation; None trains with plain cross-entropy.
    ``lr_schedule`` is "cosine" for the standard pipeline or "constant" for
    isolation-style training that must not anneal.
    """
    if lr_schedule not in ("cosine", "constant"):
        raise ArgumentError(f"unknown lr schedule '{lr_schedule}'")
    if config.epochs < 1:
        raise ArgumentError(f"epochs must be >= 1, got {config.epochs}")
    if len(data) == 0:
        raise ArgumentError("cannot train on an empty split")
    labels_np = data.labels()
    if labels_np.max() >= data.class_count or labels_np.min() < 0:
        raise ArgumentError("labels outside [0, class_count)")

    torch.manual_seed(config.seed)
    h, w, c = data.image_shape
    module = build_model(config.architecture, data.class_count, in_channels=c)
    clf = Classifier(module, config.architecture, data.class_count, in_channels=c)

    images = data.images()
    ids = np.array(data.ids, dtype=np.int64)
    groups = data.provenances()
    n = len(data)
    present_groups = [(g, _GROUP_NAMES[Provenance(g)]) for g in sorted(set(groups.tolist()))]

    optimizer = torch.optim.SGD(
        module.parameters(), lr=config.lr, momentum=config.momentum, weight_decay=config.decay
    )

    records: list[EpochRecord] = []
    loss_history = np.zeros((config.epochs, n), dtype=np.float64) if record_example_losses else None

    for epoch in range(config.epochs):
        lr = _cosine_lr(config.lr, epoch, config.epochs) if lr_schedule == "cosine" else config.lr
        for group_ in optimizer.param_groups:
            group_["lr"] = lr
        module.train()
        order = rng_for(config.seed, _STREAM_SHUFFLE, epoch).permutation(n)
        epoch_losses = np.zeros(n, dtype=np.float64)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if config.augment:
                batch = np.stack(
                    [augment_image(images[i], rng_for(config.seed, _STREAM_AUG, epoch, int(ids[i])))
                     for i in idx]
                )
            else:
                batch = images[idx]
            x = torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2)))
            y = torch.from_numpy(labels_np[idx])
            ce = F.cross_entropy(module(x), y, reduction="none")
            if not torch.isfinite(ce).all():
                raise TrainingDivergedError(epoch)
            if loss_floor is not None:
                loss = (torch.sign(ce - loss_floor) * ce).mean()
            else:
                loss = ce.mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses[idx] = ce.detach().numpy()

        if loss_history is not None:
            # score with a post-epoch eval pass: during-epoch values see the
            # model at a different state for every example
            module.eval()
            with torch.no_grad():
                for start in range(0, n, 256):
                    x = torch.from_numpy(
                        np.ascontiguousarray(images[start:start + 256].transpose(0, 3, 1, 2))
                    )
                    ce_eval = F.cross_entropy(
                        module(x), torch.from_numpy(labels_np[start:start + 256]),
                        reduction="none",
                    )
                    loss_history[epoch, start:start + 256] = ce_eval.numpy()
            module.train()
        by_group = {
            name: float(epoch_losses[groups == g].mean())
            for g, name in present_groups
        }
        record = EpochRecord(epoch=epoch, lr=lr, loss_by_group=by_group)
        if probe is not None:
            from .metrics import compute_core_metrics

            report = compute_core_metrics(clf, probe.test, probe.trigger, probe.target_map, probe.stamp)
            record.asr, record.ca = report.asr, report.ca
        records.append(record)

    clf._trained = True
    example_losses = {}
    if loss_history is not None:
        example_losses = {int(ids[i]): loss_history[:, i].tolist() for i in range(n)}
    return TrainResult(classifier=clf, epochs=records, example_losses=example_losses)
