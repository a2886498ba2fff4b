"""Defender-side dataset transform: stamp-and-relabel the detected subset.

For each detected example whose pseudo label disagrees with its current
label, the transform substitutes (stamped image, pseudo label); detected
examples with an agreeing pseudo label and all undetected examples pass
through unchanged. Inference keeps the planted association triggered by
stamping every input.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dataset import DatasetSplit, LabeledExample, Provenance
from .detection import DetectionReport
from .errors import ArgumentError
from .relabeling import PseudoLabelMap
from .stamping import StampSpec, apply_stamp, stamp_batch  # noqa: F401  (re-exported)


@dataclass
class NABDataset:
    """Defense-processed training split plus the set bookkeeping behind it."""

    split: DatasetSplit
    stamped_ids: frozenset[int]
    kept_detected_ids: frozenset[int]  # detected but pseudo label agreed

    def stamped_extras(self) -> dict:
        return {
            "stamped_ids": sorted(self.stamped_ids),
            "kept_detected_ids": sorted(self.kept_detected_ids),
        }


def nab_transform(
    dp: DatasetSplit,
    report: DetectionReport,
    labels: PseudoLabelMap,
    stamp: StampSpec = StampSpec(),
) -> NABDataset:
    """Rewrite the detected subset; size and id set are preserved."""
    missing = sorted(report.suspected_ids - labels.coverage)
    if missing:
        raise ArgumentError(
            f"pseudo-label map does not cover {len(missing)} detected ids: {missing[:10]}"
        )
    examples: list[LabeledExample] = []
    stamped: set[int] = set()
    kept: set[int] = set()
    for ex in dp.examples:
        if ex.id in report.suspected_ids:
            pseudo = labels.assignments[ex.id]
            if pseudo != ex.label:
                examples.append(
                    LabeledExample(
                        id=ex.id,
                        image=apply_stamp(ex.image, stamp),
                        label=pseudo,
                        provenance=Provenance.DEFENDER_STAMPED,
                    )
                )
                stamped.add(ex.id)
            else:
                examples.append(ex)
                kept.add(ex.id)
        else:
            examples.append(ex)
    split = DatasetSplit(name=dp.name, class_count=dp.class_count, examples=examples)
    return NABDataset(split=split, stamped_ids=frozenset(stamped), kept_detected_ids=frozenset(kept))


def stamp_rate(nab: NABDataset) -> float:
    """Fraction of the training split that ended up stamped."""
    return len(nab.stamped_ids) / len(nab.split)
