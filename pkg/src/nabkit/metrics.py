"""Evaluation metrics for attack and defense effectiveness.

Let f be the classifier, P the attacker trigger, S the stamp, y_t the
per-example target class, over a clean test set. All values are percentages.

Core metrics:
    ASR = #(f(P(x)) = y_t and y != y_t) / #(y != y_t)
    CA  = #(f(x) = y) / #(all)
    BA  = #(f(P(x)) = y) / #(all)
Under defended evaluation every input is stamped first: x -> S(x),
P(x) -> S(P(x)).

Filtered-inference metrics (predictions compared with and without stamp):
    C-REJ = #(f(S(x)) != f(x)) / #(all)
    PSR   = #(f(S(x)) = y and f(S(x)) = f(x)) / #(all)
    B-REJ = #(f(S(P(x))) != f(P(x))) / #(all)
    DSR   = #(f(S(P(x))) = y or f(S(P(x))) != f(P(x))) / #(all)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attacks import TargetMap, TriggerSpec, apply_trigger
from .dataset import DatasetSplit
from .errors import UndefinedMetricError
from .stamping import StampSpec, apply_stamp


class _Reject:
    __slots__ = ()

    def __repr__(self) -> str:
        return "REJECT"


REJECT = _Reject()


@dataclass
class MetricsReport:
    mode: str  # plain | defended | filtered
    asr: Optional[float] = None
    ca: Optional[float] = None
    ba: Optional[float] = None
    c_rej: Optional[float] = None
    psr: Optional[float] = None
    b_rej: Optional[float] = None
    dsr: Optional[float] = None
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    per_epoch: Optional[list[dict]] = None
    metadata: dict = field(default_factory=dict)

    _FIELDS = ("asr", "ca", "ba", "c_rej", "psr", "b_rej", "dsr")

    def to_json_dict(self) -> dict:
        out = {"mode": self.mode}
        for name in self._FIELDS:
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.seed is not None:
            out["seed"] = self.seed
        if self.config_hash is not None:
            out["config_hash"] = self.config_hash
        if self.per_epoch is not None:
            out["per_epoch"] = self.per_epoch
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            mode=d["mode"],
            **{name: d.get(name) for name in cls._FIELDS},
            seed=d.get("seed"),
            config_hash=d.get("config_hash"),
            per_epoch=d.get("per_epoch"),
            metadata=d.get("metadata", {}),
        )


def triggered_images(test: DatasetSplit, trigger: TriggerSpec) -> np.ndarray:
    """Apply the trigger to every test image, seeded per example id."""
    return np.stack([apply_trigger(ex.image, trigger, per_sample_seed=ex.id) for ex in test.examples])


def stamped_images(images: np.ndarray, stamp: StampSpec) -> np.ndarray:
    return np.stack([apply_stamp(img, stamp) for img in images])


def _targets(test: DatasetSplit, target_map: TargetMap) -> np.ndarray:
    return np.array(
        [target_map.target_for(ex.label, test.class_count) for ex in test.examples], dtype=np.int64
    )


def compute_core_metrics(
    f,
    test: DatasetSplit,
    trigger: TriggerSpec,
    target_map: TargetMap,
    stamp: StampSpec | None = None,
) -> MetricsReport:
    """ASR / CA / BA over a clean test split; stamped inference when a stamp is given."""
    if len(test) == 0:
        raise UndefinedMetricError("cannot compute metrics over an empty test set")
    labels = test.labels()
    y_t = _targets(test, target_map)
    clean = test.images()
    poisoned = triggered_images(test, trigger)
    if stamp is not None:
        clean = stamped_images(clean, stamp)
        poisoned = stamped_images(poisoned, stamp)
    pred_clean = f.predict(clean)
    pred_poisoned = f.predict(poisoned)

    non_target = labels != y_t
    if not non_target.any():
        raise UndefinedMetricError("attack success rate undefined: every label equals its target")
    n = len(labels)
    asr = 100.0 * int(np.sum(pred_poisoned[non_target] == y_t[non_target])) / int(np.sum(non_target))
    ca = 100.0 * int(np.sum(pred_clean == labels)) / n
    ba = 100.0 * int(np.sum(pred_poisoned == labels)) / n
    return MetricsReport(mode="defended" if stamp is not None else "plain", asr=asr, ca=ca, ba=ba)


def filter_inference(f, x: np.ndarray, stamp: StampSpec):
    """Predict with the consistency filter: reject when stamping flips the prediction."""
    plain = int(f.predict(x[None])[0])
    stamped = int(f.predict(apply_stamp(x, stamp)[None])[0])
    return REJECT if plain != stamped else plain


def compute_filter_metrics(
    f,
    test: DatasetSplit,
    trigger: TriggerSpec,
    stamp: StampSpec,
) -> MetricsReport:
    """C-REJ / PSR / B-REJ / DSR over the full test split."""
    if len(test) == 0:
        raise UndefinedMetricError("cannot compute metrics over an empty test set")
    labels = test.labels()
    clean = test.images()
    poisoned = triggered_images(test, trigger)
    pred_x = f.predict(clean)
    pred_sx = f.predict(stamped_images(clean, stamp))
    pred_px = f.predict(poisoned)
    pred_spx = f.predict(stamped_images(poisoned, stamp))

    n = len(labels)
    c_rej = 100.0 * int(np.sum(pred_sx != pred_x)) / n
    psr = 100.0 * int(np.sum((pred_sx == labels) & (pred_sx == pred_x))) / n
    b_rej = 100.0 * int(np.sum(pred_spx != pred_px)) / n
    dsr = 100.0 * int(np.sum((pred_spx == labels) | (pred_spx != pred_px))) / n
    return MetricsReport(mode="filtered", c_rej=c_rej, psr=psr, b_rej=b_rej, dsr=dsr)
