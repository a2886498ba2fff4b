"""Attacker-side poisoning: trigger functions, target maps, dataset poisoning.

Trigger recipes:
  patch        3x3 black/white checker overwriting the bottom-right corner
  blend        convex blend with a fixed pattern image (seeded noise by default)
  warp         elastic warp from a small control grid, optional noise mode
  clean_label  PGD perturbation on a surrogate, then the patch grid; labels kept
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .dataset import DatasetSplit, LabeledExample, PoisonManifest, Provenance
from .errors import ArgumentError, StateError
from .seeding import rng_for, round_count

_STREAM_BLEND_PATTERN = 21
_STREAM_WARP_GRID = 22
_STREAM_WARP_NOISE = 23
_STREAM_POISON_SELECT = 24
_STREAM_NOISE_SELECT = 25


class TriggerKind(str, Enum):
    PATCH = "patch"
    BLEND = "blend"
    WARP = "warp"
    CLEAN_LABEL = "clean_label"


@dataclass
class PatchParams:
    size: int = 3


@dataclass
class BlendParams:
    alpha: float = 0.2
    pattern_path: Optional[str] = None  # defaults to seeded noise when None


@dataclass
class WarpParams:
    grid_size: int = 4
    strength: float = 0.5
    noise_rate: float = 0.2


@dataclass
class CleanLabelParams:
    epsilon: float = 32.0 / 255.0
    steps: int = 20
    step_size: Optional[float] = None  # defaults to epsilon / 8
    patch: PatchParams = field(default_factory=PatchParams)
    surrogate: object = None  # trained classifier, supplied at runtime


@dataclass
class TriggerSpec:
    kind: TriggerKind
    params: PatchParams | BlendParams | WarpParams | CleanLabelParams
    seed: int = 0

    @property
    def name(self) -> str:
        return self.kind.value


def patch_trigger(size: int = 3, seed: int = 0) -> TriggerSpec:
    return TriggerSpec(TriggerKind.PATCH, PatchParams(size=size), seed=seed)


def blend_trigger(alpha: float = 0.2, pattern_path: str | None = None, seed: int = 0) -> TriggerSpec:
    return TriggerSpec(TriggerKind.BLEND, BlendParams(alpha=alpha, pattern_path=pattern_path), seed=seed)


def warp_trigger(grid_size: int = 4, strength: float = 0.5, noise_rate: float = 0.2, seed: int = 0) -> TriggerSpec:
    return TriggerSpec(TriggerKind.WARP, WarpParams(grid_size, strength, noise_rate), seed=seed)


def clean_label_trigger(
    surrogate=None,
    epsilon: float = 32.0 / 255.0,
    steps: int = 20,
    step_size: float | None = None,
    patch_size: int = 3,
    seed: int = 0,
) -> TriggerSpec:
    params = CleanLabelParams(epsilon=epsilon, steps=steps, step_size=step_size,
                              patch=PatchParams(size=patch_size), surrogate=surrogate)
    return TriggerSpec(TriggerKind.CLEAN_LABEL, params, seed=seed)


class TargetMode(str, Enum):
    ALL_TO_ONE = "all_to_one"
    ALL_TO_ALL = "all_to_all"


@dataclass
class TargetMap:
    """Attacker relabeling: a constant target class, or y -> y + 1 (mod K)."""

    mode: TargetMode = TargetMode.ALL_TO_ONE
    target_class: int = 0

    def target_for(self, label: int, class_count: int) -> int:
        if self.mode == TargetMode.ALL_TO_ONE:
            if not (0 <= self.target_class < class_count):
                raise ArgumentError(f"target class {self.target_class} outside [0, {class_count})")
            return self.target_class
        if class_count < 2:
            raise ArgumentError("all-to-all needs at least 2 classes")
        return (label + 1) % class_count

    @property
    def name(self) -> str:
        if self.mode == TargetMode.ALL_TO_ONE:
            return f"all_to_one:{self.target_class}"
        return "all_to_all:+1"


# ---------------------------------------------------------------------------
# trigger application
# ---------------------------------------------------------------------------


def _checker_pattern(size: int) -> np.ndarray:
    ii, jj = np.mgrid[0:size, 0:size]
    return ((ii + jj) % 2 == 0).astype(np.float32)


def _apply_patch(image: np.ndarray, size: int) -> np.ndarray:
    h, w, _ = image.shape
    if size > h or size > w:
        raise ArgumentError(f"{size}x{size} patch does not fit a {h}x{w} image")
    out = image.copy()
    out[h - size:, w - size:, :] = _checker_pattern(size)[:, :, None]
    return out


def _blend_pattern(trigger: TriggerSpec, shape: tuple[int, int, int]) -> np.ndarray:
    params: BlendParams = trigger.params
    if params.pattern_path is None:
        rng = rng_for(trigger.seed, _STREAM_BLEND_PATTERN)
        return rng.uniform(0.0, 1.0, size=shape).astype(np.float32)
    from PIL import Image

    with Image.open(params.pattern_path) as im:
        arr = np.asarray(im.convert("RGB" if shape[2] == 3 else "L"), dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape != shape:
        raise ArgumentError(f"blend pattern shape {arr.shape} does not match image shape {shape}")
    return arr


def _bilinear_upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Upsample a (k, k, 2) grid to (h, w, 2), align-corners style."""
    k = grid.shape[0]
    if k == 1:
        return np.broadcast_to(grid[0, 0], (h, w, 2)).astype(np.float64)
    ys = np.linspace(0.0, k - 1, h)
    xs = np.linspace(0.0, k - 1, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, k - 1)
    x1 = np.minimum(x0 + 1, k - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    g = grid.astype(np.float64)
    return (
        g[np.ix_(y0, x0)] * (1 - wy) * (1 - wx)
        + g[np.ix_(y0, x1)] * (1 - wy) * wx
        + g[np.ix_(y1, x0)] * wy * (1 - wx)
        + g[np.ix_(y1, x1)] * wy * wx
    )


def _warp_sample(image: np.ndarray, displacement: np.ndarray) -> np.ndarray:
    """Backward warp with bilinear interpolation and border clamping."""
    h, w, _ = image.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sy = np.clip(yy + displacement[..., 0], 0.0, h - 1)
    sx = np.clip(xx + displacement[..., 1], 0.0, w - 1)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[..., None]
    wx = (sx - x0)[..., None]
    img = image.astype(np.float64)
    out = (
        img[y0, x0] * (1 - wy) * (1 - wx)
        + img[y0, x1] * (1 - wy) * wx
        + img[y1, x0] * wy * (1 - wx)
        + img[y1, x1] * wy * wx
    )
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _control_grid(trigger: TriggerSpec) -> np.ndarray:
    params: WarpParams = trigger.params
    rng = rng_for(trigger.seed, _STREAM_WARP_GRID)
    grid = rng.uniform(-1.0, 1.0, size=(params.grid_size, params.grid_size, 2))
    return grid / np.mean(np.abs(grid))


def _warp_displacement(trigger: TriggerSpec, h: int, w: int, extra: np.ndarray | None = None) -> np.ndarray:
    params: WarpParams = trigger.params
    grid = _control_grid(trigger)
    if extra is not None:
        grid = grid + extra
    field_ = _bilinear_upsample(grid, h, w)
    # clamp the normalized field so displacement magnitude stays within strength
    return params.strength * np.clip(field_, -1.0, 1.0)


def apply_trigger(image: np.ndarray, trigger: TriggerSpec, per_sample_seed: int = 0) -> np.ndarray:
    """Apply the attacker's trigger; deterministic given (image, trigger, seed)."""
    h, w, c = image.shape
    if trigger.kind == TriggerKind.PATCH:
        return _apply_patch(image, trigger.params.size)
    if trigger.kind == TriggerKind.CLEAN_LABEL:
        # inference-time trigger is the patch grid alone
        return _apply_patch(image, trigger.params.patch.size)
    if trigger.kind == TriggerKind.BLEND:
        alpha = trigger.params.alpha
        if not (0.0 < alpha < 1.0):
            raise ArgumentError(f"blend ratio must be in (0, 1), got {alpha}")
        pattern = _blend_pattern(trigger, (h, w, c))
        out = (1.0 - alpha) * image + alpha * pattern
        return np.clip(out, 0.0, 1.0).astype(np.float32)
    if trigger.kind == TriggerKind.WARP:
        return _warp_sample(image, _warp_displacement(trigger, h, w))
    raise ArgumentError(f"unknown trigger kind {trigger.kind}")


def apply_warp_noise(image: np.ndarray, trigger: TriggerSpec, per_sample_seed: int) -> np.ndarray:
    """Noise-mode warp: the attack warp plus a per-sample random grid, label kept."""
    if trigger.kind != TriggerKind.WARP:
        raise ArgumentError("noise mode only applies to warp triggers")
    params: WarpParams = trigger.params
    rng = rng_for(trigger.seed, _STREAM_WARP_NOISE, per_sample_seed)
    extra = rng.uniform(-1.0, 1.0, size=(params.grid_size, params.grid_size, 2))
    h, w, _ = image.shape
    return _warp_sample(image, _warp_displacement(trigger, h, w, extra=extra))


# ---------------------------------------------------------------------------
# clean-label perturbation (PGD on a surrogate)
# ---------------------------------------------------------------------------


def craft_clean_label(
    surrogate,
    image: np.ndarray,
    label: int,
    epsilon: float,
    steps: int,
    step_size: float | None = None,
) -> np.ndarray:
    """Untargeted l-inf PGD ascent on the surrogate's loss for the true label.

    Returns an image within epsilon of the input, clipped to [0, 1]. The
    caller applies the patch grid afterwards.
    """
    if not getattr(surrogate, "is_trained", False):
        raise StateError("clean-label crafting requires a trained surrogate")
    if steps < 1:
        raise ArgumentError(f"PGD needs at least one step, got {steps}")
    if epsilon < 0.0 or epsilon > 1.0:
        raise ArgumentError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon == 0.0:
        return image.copy()
    if step_size is None:
        step_size = epsilon / 8.0
    x = image.astype(np.float64)
    adv = x.copy()
    labels = np.array([label], dtype=np.int64)
    # keep the perturbation strictly inside the budget so the float32 cast
    # at the end cannot push it past epsilon
    inner = max(epsilon - 1e-7, 0.0) * (1.0 - 1e-6)
    for _ in range(steps):
        grad = surrogate.input_gradient(adv[None].astype(np.float32), labels)[0]
        adv = adv + step_size * np.sign(grad)
        adv = x + np.clip(adv - x, -inner, inner)
        adv = np.clip(adv, 0.0, 1.0)
    return adv.astype(np.float32)


# ---------------------------------------------------------------------------
# dataset poisoning
# ---------------------------------------------------------------------------


def poison_dataset(
    clean: DatasetSplit,
    trigger: TriggerSpec,
    target_map: TargetMap,
    rate: float,
    seed: int,
) -> tuple[DatasetSplit, PoisonManifest]:
    """Poison round(rate * N) examples; everything else passes through untouched.

    Clean-label triggers keep labels and interpret ``rate`` as the fraction
    of target-class samples to perturb; all other triggers relabel with the
    target map. The returned manifest is ground truth for evaluation only.
    """
    if not (0.0 < rate < 1.0):
        raise ArgumentError(f"poisoning rate must be in (0, 1), got {rate}")
    n = len(clean)
    clean_label = trigger.kind == TriggerKind.CLEAN_LABEL
    if clean_label:
        params: CleanLabelParams = trigger.params
        if params.surrogate is None:
            raise ArgumentError("clean-label poisoning requires a surrogate classifier")
        target = target_map.target_for(0, clean.class_count)  # constant under all-to-one
        if target_map.mode != TargetMode.ALL_TO_ONE:
            raise ArgumentError("clean-label poisoning requires an all-to-one target map")
        pool = [ex.id for ex in clean.examples if ex.label == target]
        count = round_count(rate * len(pool))
    else:
        pool = [ex.id for ex in clean.examples]
        count = round_count(rate * n)

    rng = rng_for(seed, _STREAM_POISON_SELECT)
    pool = sorted(pool)
    selected = set(
        int(pool[i]) for i in rng.choice(len(pool), size=count, replace=False)
    ) if count > 0 else set()

    noise_ids: set[int] = set()
    if trigger.kind == TriggerKind.WARP and trigger.params.noise_rate > 0.0:
        remainder = sorted(set(ex.id for ex in clean.examples) - selected)
        noise_count = min(round_count(trigger.params.noise_rate * n), len(remainder))
        if noise_count > 0:
            noise_rng = rng_for(seed, _STREAM_NOISE_SELECT)
            noise_ids = set(
                int(remainder[i])
                for i in noise_rng.choice(len(remainder), size=noise_count, replace=False)
            )

    examples: list[LabeledExample] = []
    original_labels: dict[int, int] = {}
    for ex in clean.examples:
        if ex.id in selected:
            original_labels[ex.id] = ex.label
            if clean_label:
                adv = craft_clean_label(
                    trigger.params.surrogate, ex.image, ex.label,
                    trigger.params.epsilon, trigger.params.steps, trigger.params.step_size,
                )
                image = _apply_patch(adv, trigger.params.patch.size)
                label = ex.label
            else:
                image = apply_trigger(ex.image, trigger, per_sample_seed=ex.id)
                label = target_map.target_for(ex.label, clean.class_count)
            examples.append(
                LabeledExample(id=ex.id, image=image, label=label, provenance=Provenance.ATTACKER_POISONED)
            )
        elif ex.id in noise_ids:
            image = apply_warp_noise(ex.image, trigger, per_sample_seed=ex.id)
            examples.append(replace(ex, image=image))
        else:
            examples.append(ex)

    manifest = PoisonManifest(
        poisoned_ids=frozenset(selected),
        trigger_name=trigger.name,
        target_map_name=target_map.name,
        poison_rate=rate,
        seed=seed,
        original_labels=original_labels,
        noise_ids=frozenset(noise_ids),
    )
    poisoned = DatasetSplit(name=clean.name, class_count=clean.class_count, examples=examples)
    return poisoned, manifest
