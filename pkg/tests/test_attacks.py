import numpy as np
import pytest

from nabkit.attacks import (
    TargetMap,
    TargetMode,
    apply_trigger,
    apply_warp_noise,
    blend_trigger,
    clean_label_trigger,
    craft_clean_label,
    patch_trigger,
    poison_dataset,
    warp_trigger,
)
from nabkit.errors import ArgumentError, StateError
from nabkit.seeding import round_count

from conftest import make_split


def _flat_image(value=0.5, size=16):
    return np.full((size, size, 3), value, dtype=np.float32)


class TestPatch:
    def test_locality(self):
        img = _flat_image()
        out = apply_trigger(img, patch_trigger())
        changed = np.any(out != img, axis=-1)
        assert changed[-3:, -3:].all()
        changed[-3:, -3:] = False
        assert not changed.any()

    def test_checker_values(self):
        out = apply_trigger(_flat_image(), patch_trigger())
        corner = out[-3:, -3:, 0]
        assert np.array_equal(corner, np.array([[1, 0, 1], [0, 1, 0], [1, 0, 1]], dtype=np.float32))
        # identical across channels
        assert np.array_equal(out[-3:, -3:, 1], corner)

    def test_changes_exactly_nine_per_channel(self):
        img = _flat_image()
        out = apply_trigger(img, patch_trigger())
        assert int(np.sum(out != img)) == 9 * 3

    def test_too_large(self):
        img = np.zeros((2, 2, 3), np.float32)
        with pytest.raises(ArgumentError):
            apply_trigger(img, patch_trigger(size=3))


class TestBlend:
    def test_formula_on_zero_image(self):
        img = np.zeros((12, 12, 3), np.float32)
        trig = blend_trigger(alpha=0.2)
        out = apply_trigger(img, trig)
        pattern = out / 0.2
        assert pattern.min() >= 0.0 and pattern.max() <= 1.0 + 1e-6
        # same trigger, same pattern
        out2 = apply_trigger(np.full_like(img, 0.5), trig)
        assert np.allclose(out2, 0.8 * 0.5 + 0.2 * pattern, atol=1e-6)

    def test_output_range(self):
        img = np.ones((8, 8, 3), np.float32)
        out = apply_trigger(img, blend_trigger(alpha=0.2))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_bad_alpha(self):
        img = _flat_image()
        for alpha in (0.0, 1.0, -0.2):
            with pytest.raises(ArgumentError):
                apply_trigger(img, blend_trigger(alpha=alpha))

    def test_pattern_file(self, tmp_path):
        from PIL import Image

        pattern = (np.arange(8 * 8 * 3).reshape(8, 8, 3) % 256).astype(np.uint8)
        path = tmp_path / "pattern.png"
        Image.fromarray(pattern).save(path)
        img = np.zeros((8, 8, 3), np.float32)
        out = apply_trigger(img, blend_trigger(alpha=0.5, pattern_path=str(path)))
        assert np.allclose(out, 0.5 * pattern.astype(np.float32) / 255.0, atol=1e-6)

    def test_pattern_dimension_mismatch(self, tmp_path):
        from PIL import Image

        Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "small.png")
        img = np.zeros((8, 8, 3), np.float32)
        with pytest.raises(ArgumentError, match="shape"):
            apply_trigger(img, blend_trigger(pattern_path=str(tmp_path / "small.png")))


class TestWarp:
    def test_zero_strength_identity(self, tiny_pair):
        img = tiny_pair.train.examples[0].image
        out = apply_trigger(img, warp_trigger(strength=0.0))
        assert np.abs(out - img).max() <= 1e-6

    def test_deterministic(self, tiny_pair):
        img = tiny_pair.train.examples[1].image
        trig = warp_trigger(seed=3)
        assert np.array_equal(apply_trigger(img, trig, 9), apply_trigger(img, trig, 9))

    def test_output_range(self, tiny_pair):
        img = tiny_pair.train.examples[2].image
        out = apply_trigger(img, warp_trigger(strength=2.0))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_noise_mode_differs_and_is_seeded(self, tiny_pair):
        img = tiny_pair.train.examples[3].image
        trig = warp_trigger()
        plain = apply_trigger(img, trig, 5)
        n1 = apply_warp_noise(img, trig, 5)
        n2 = apply_warp_noise(img, trig, 5)
        n3 = apply_warp_noise(img, trig, 6)
        assert np.array_equal(n1, n2)
        assert not np.array_equal(n1, plain)
        assert not np.array_equal(n1, n3)

    def test_noise_mode_requires_warp(self, tiny_pair):
        with pytest.raises(ArgumentError):
            apply_warp_noise(tiny_pair.train.examples[0].image, patch_trigger(), 0)


class _LinearSurrogate:
    """2-class linear model: logits = W @ x.sum-ish; ascent is monotone."""

    is_trained = True

    def __init__(self, weight):
        self.weight = weight  # (H, W, C) for class-1 logit, class-0 logit is zero

    def _logits(self, images):
        z1 = (images * self.weight).sum(axis=(1, 2, 3))
        return np.stack([np.zeros_like(z1), z1], axis=1)

    def loss(self, image, label):
        logits = self._logits(image[None])[0]
        z = logits - logits.max()
        return float(-z[label] + np.log(np.exp(z).sum()))

    def input_gradient(self, images, labels):
        logits = self._logits(images)
        z = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        grads = np.zeros_like(images)
        for i, label in enumerate(labels):
            # dCE/dz1 = p1 - 1[label == 1]; dz1/dx = weight
            grads[i] = (probs[i, 1] - (1.0 if label == 1 else 0.0)) * self.weight
        return grads.astype(np.float32)


class _Untrained:
    is_trained = False


class TestCleanLabelCrafting:
    def test_zero_epsilon_exact(self):
        img = _flat_image()
        out = craft_clean_label(_LinearSurrogate(np.ones_like(img)), img, 0, 0.0, 5)
        assert np.array_equal(out, img)

    def test_epsilon_bound(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0.3, 0.7, size=(8, 8, 3)).astype(np.float32)
        weight = rng.normal(size=img.shape)
        eps = 32.0 / 255.0
        out = craft_clean_label(_LinearSurrogate(weight), img, 1, eps, 20)
        assert np.abs(out - img).max() <= eps + 1e-9
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_loss_monotone_on_linear_model(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0.3, 0.7, size=(6, 6, 3)).astype(np.float32)
        surrogate = _LinearSurrogate(rng.normal(size=img.shape))
        for label in (0, 1):
            out = craft_clean_label(surrogate, img, label, 16 / 255, 10)
            assert surrogate.loss(out, label) >= surrogate.loss(img, label)

    def test_untrained_surrogate(self):
        with pytest.raises(StateError):
            craft_clean_label(_Untrained(), _flat_image(), 0, 0.1, 5)

    def test_bad_steps(self):
        with pytest.raises(ArgumentError):
            craft_clean_label(_LinearSurrogate(np.ones((4, 4, 3))), _flat_image(4), 0, 0.1, 0)


class TestTargetMap:
    def test_all_to_one(self):
        tm = TargetMap(mode=TargetMode.ALL_TO_ONE, target_class=2)
        assert [tm.target_for(y, 4) for y in range(4)] == [2, 2, 2, 2]

    def test_all_to_all_no_fixed_point(self):
        tm = TargetMap(mode=TargetMode.ALL_TO_ALL)
        for k in (2, 4, 10):
            mapped = [tm.target_for(y, k) for y in range(k)]
            assert sorted(mapped) == list(range(k))  # permutation
            assert all(m != y for y, m in enumerate(mapped))

    def test_target_out_of_range(self):
        with pytest.raises(ArgumentError):
            TargetMap(target_class=7).target_for(0, 4)


class TestPoisonDataset:
    def test_counts_labels_provenance(self, small_split):
        poisoned, manifest = poison_dataset(small_split, patch_trigger(), TargetMap(), 0.25, seed=1)
        assert len(manifest.poisoned_ids) == round_count(0.25 * 40) == 10
        assert len(poisoned) == len(small_split)
        assert poisoned.ids == small_split.ids
        for ex_id in manifest.poisoned_ids:
            ex = poisoned.by_id(ex_id)
            assert ex.label == 0
            assert ex.provenance.name == "ATTACKER_POISONED"
            assert manifest.original_labels[ex_id] == small_split.by_id(ex_id).label

    def test_clean_untouched_byte_for_byte(self, small_split):
        poisoned, manifest = poison_dataset(small_split, patch_trigger(), TargetMap(), 0.1, seed=2)
        for ex in small_split:
            if ex.id not in manifest.poisoned_ids:
                got = poisoned.by_id(ex.id)
                assert got.label == ex.label
                assert np.array_equal(got.image, ex.image)

    def test_rounds_to_zero(self):
        split = make_split(5)
        poisoned, manifest = poison_dataset(split, patch_trigger(), TargetMap(), 0.05, seed=0)
        assert manifest.poisoned_ids == frozenset()
        for a, b in zip(split, poisoned):
            assert np.array_equal(a.image, b.image) and a.label == b.label

    def test_bad_rate(self, small_split):
        for rate in (0.0, 1.0, 1.5, -0.1):
            with pytest.raises(ArgumentError):
                poison_dataset(small_split, patch_trigger(), TargetMap(), rate, seed=0)

    def test_all_to_all_permutation(self, small_split):
        tm = TargetMap(mode=TargetMode.ALL_TO_ALL)
        poisoned, manifest = poison_dataset(small_split, patch_trigger(), tm, 0.5, seed=3)
        assert len(manifest.poisoned_ids) == 20
        for ex_id in manifest.poisoned_ids:
            original = small_split.by_id(ex_id).label
            assert poisoned.by_id(ex_id).label == (original + 1) % 4
            assert poisoned.by_id(ex_id).label != original

    def test_deterministic(self, small_split):
        p1, m1 = poison_dataset(small_split, patch_trigger(), TargetMap(), 0.2, seed=5)
        p2, m2 = poison_dataset(small_split, patch_trigger(), TargetMap(), 0.2, seed=5)
        assert m1.poisoned_ids == m2.poisoned_ids
        for a, b in zip(p1, p2):
            assert np.array_equal(a.image, b.image)

    def test_warp_noise_mode_bookkeeping(self, small_split):
        trig = warp_trigger(noise_rate=0.2)
        poisoned, manifest = poison_dataset(small_split, trig, TargetMap(), 0.25, seed=4)
        assert len(manifest.noise_ids) == round_count(0.2 * 40)
        assert not (manifest.noise_ids & manifest.poisoned_ids)
        for ex_id in manifest.noise_ids:
            ex = poisoned.by_id(ex_id)
            assert ex.label == small_split.by_id(ex_id).label
            assert ex.provenance.name == "CLEAN"
            assert not np.array_equal(ex.image, small_split.by_id(ex_id).image)

    def test_clean_label_mode(self, small_split):
        rng = np.random.default_rng(0)
        surrogate = _LinearSurrogate(rng.normal(size=(8, 8, 3)))
        trig = clean_label_trigger(surrogate=surrogate, epsilon=8 / 255, steps=3)
        poisoned, manifest = poison_dataset(small_split, trig, TargetMap(), 0.5, seed=6)
        target_count = sum(1 for ex in small_split if ex.label == 0)
        assert len(manifest.poisoned_ids) == round_count(0.5 * target_count)
        for ex_id in manifest.poisoned_ids:
            original = small_split.by_id(ex_id)
            got = poisoned.by_id(ex_id)
            assert original.label == 0 and got.label == 0  # labels kept, target class only
            assert got.provenance.name == "ATTACKER_POISONED"
            # patch applied after the bounded perturbation
            corner = got.image[-3:, -3:, 0]
            assert np.array_equal(corner, np.array([[1, 0, 1], [0, 1, 0], [1, 0, 1]], np.float32))
            inner = np.abs(got.image[:-3, :-3] - original.image[:-3, :-3]).max()
            assert inner <= 8 / 255 + 1e-9

    def test_clean_label_requires_surrogate(self, small_split):
        with pytest.raises(ArgumentError, match="surrogate"):
            poison_dataset(small_split, clean_label_trigger(), TargetMap(), 0.25, seed=0)
