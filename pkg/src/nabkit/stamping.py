"""The defender's stamp: a small constant patch overwriting a fixed region."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArgumentError


@dataclass(frozen=True)
class StampSpec:
    """Upper-left 2x2 patch with value 0 by default; all fields overridable."""

    height: int = 2
    width: int = 2
    row: int = 0
    col: int = 0
    value: float = 0.0

    def to_json_dict(self) -> dict:
        return {"height": self.height, "width": self.width, "row": self.row,
                "col": self.col, "value": self.value}

    @classmethod
    def from_json_dict(cls, d: dict) -> "StampSpec":
        return cls(**d)


def apply_stamp(image: np.ndarray, stamp: StampSpec) -> np.ndarray:
    """Overwrite the stamp region; idempotent, touches nothing else."""
    h, w, _ = image.shape
    if stamp.row < 0 or stamp.col < 0 or stamp.row + stamp.height > h or stamp.col + stamp.width > w:
        raise ArgumentError(
            f"stamp {stamp.height}x{stamp.width} at ({stamp.row}, {stamp.col}) "
            f"exceeds {h}x{w} image bounds"
        )
    if not (0.0 <= stamp.value <= 1.0):
        raise ArgumentError(f"stamp value must be in [0, 1], got {stamp.value}")
    out = image.copy()
    out[stamp.row:stamp.row + stamp.height, stamp.col:stamp.col + stamp.width, :] = stamp.value
    return out


def stamp_batch(images: Sequence[np.ndarray], stamp: StampSpec) -> list[np.ndarray]:
    """Element-wise stamping, order preserved."""
    return [apply_stamp(img, stamp) for img in images]
