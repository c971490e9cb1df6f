import numpy as np
import pytest

from curlearn.augment import (
    AugmentConfig,
    MixedBatch,
    apply_augmentation,
    bilinear_resize,
    cutmix,
    mixup,
    one_hot,
    random_flip,
    random_resized_crop,
    resizemix,
    write_provenance_csv,
)

from oracles import float_bilinear


class ScriptedRng:
    """Feeds predetermined draws so tests can pin exact mix geometry."""

    def __init__(self, permutation, betas=(), uniforms=(), integers=()):
        self._perm = np.asarray(permutation)
        self._betas = list(betas)
        self._uniforms = list(uniforms)
        self._integers = list(integers)

    def permutation(self, n):
        assert n == len(self._perm)
        return self._perm.copy()

    def beta(self, a, b, size=None):
        if size is None:
            return self._betas.pop(0)
        return np.array([self._betas.pop(0) for _ in range(size)])

    def uniform(self, lo, hi):
        return self._uniforms.pop(0)

    def integers(self, lo, hi):
        value = self._integers.pop(0)
        assert lo <= value < hi
        return value


def grid_images(rng, n, side=32):
    return np.round(rng.random((n, 3, side, side)) * 255) / 255


class TestMixup:
    def test_label_formula(self):
        rng = ScriptedRng([1, 0], betas=[0.3, 0.6])
        images = grid_images(np.random.default_rng(0), 2)
        mixed = mixup(images, [2, 0], 4, 0.2, rng)
        assert np.allclose(mixed.labels[0], [0.7, 0.0, 0.3, 0.0], atol=1e-12)
        assert np.allclose(mixed.images[0], 0.3 * images[0] + 0.7 * images[1])
        assert mixed.provenance[0] == (0, 1, 0.3)

    def test_permutation_fixed_point_is_identity(self):
        rng = ScriptedRng([0, 1], betas=[0.37, 0.81])
        images = grid_images(np.random.default_rng(1), 2)
        mixed = mixup(images, [1, 3], 4, 0.2, rng)
        assert np.allclose(mixed.images, images, atol=1e-12)
        assert np.allclose(mixed.labels, one_hot([1, 3], 4), atol=1e-12)

    def test_lambda_one_returns_target_exactly(self):
        rng = ScriptedRng([1, 0], betas=[1.0, 0.0])
        images = grid_images(np.random.default_rng(2), 2)
        mixed = mixup(images, [0, 1], 2, 0.2, rng)
        assert np.array_equal(mixed.images[0], images[0])
        assert np.array_equal(mixed.labels[0], [1.0, 0.0])
        # lambda 0 hands everything to the partner
        assert np.array_equal(mixed.images[1], images[0])
        assert np.array_equal(mixed.labels[1], [1.0, 0.0])

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            mixup(np.zeros((1, 3, 8, 8)), [0], 2, 0.2, np.random.default_rng(0))

    def test_nonpositive_alpha_rejected(self):
        with pytest.raises(ValueError, match="alpha"):
            mixup(np.zeros((2, 3, 8, 8)), [0, 1], 2, 0.0, np.random.default_rng(0))


class TestCutmix:
    def test_unclipped_square_cut(self):
        images = grid_images(np.random.default_rng(3), 2)
        rng = ScriptedRng([1, 0], betas=[0.75, 1.0], integers=[16, 16, 5, 5])
        mixed = cutmix(images, [0, 1], 2, 1.0, rng)
        lam = mixed.provenance[0][2]
        assert lam == 1.0 - 256 / 1024 == 0.75
        assert np.array_equal(mixed.images[0][:, 8:24, 8:24], images[1][:, 8:24, 8:24])
        outside = np.ones((32, 32), dtype=bool)
        outside[8:24, 8:24] = False
        assert np.array_equal(mixed.images[0][:, outside], images[0][:, outside])
        assert np.allclose(mixed.labels[0], [0.75, 0.25])

    def test_corner_cut_is_clipped(self):
        images = grid_images(np.random.default_rng(4), 2)
        rng = ScriptedRng([1, 0], betas=[0.75, 1.0], integers=[0, 0, 5, 5])
        mixed = cutmix(images, [0, 1], 2, 1.0, rng)
        assert mixed.provenance[0][2] == 1.0 - 64 / 1024 == 0.9375
        assert np.array_equal(mixed.images[0][:, :8, :8], images[1][:, :8, :8])
        outside = np.ones((32, 32), dtype=bool)
        outside[:8, :8] = False
        assert np.array_equal(mixed.images[0][:, outside], images[0][:, outside])

    def test_lambda_one_means_zero_area_cut(self):
        images = grid_images(np.random.default_rng(5), 2)
        rng = ScriptedRng([1, 0], betas=[1.0, 1.0], integers=[10, 10, 5, 5])
        mixed = cutmix(images, [0, 1], 2, 1.0, rng)
        assert np.array_equal(mixed.images[0], images[0])
        assert np.array_equal(mixed.labels[0], [1.0, 0.0])
        assert mixed.provenance[0][2] == 1.0

    def test_recomputed_lambda_matches_pixel_count(self):
        # Geometry draws ignore pixel values, so replaying the same rng stream
        # on per-item constant images reveals exactly which pixels were pasted.
        for seed in range(30):
            sentinels = np.zeros((4, 3, 16, 16)) + np.arange(4)[:, None, None, None] / 8.0
            labels = np.arange(4) % 3
            marked = cutmix(sentinels, labels, 3, 1.0, np.random.default_rng(seed))
            for i, src, lam in marked.provenance:
                if src == i:
                    continue  # self-paste: pasted pixels equal the target's
                count = int((marked.images[i, 0] == src / 8.0).sum())
                assert lam == 1.0 - count / 256.0


class TestResizemix:
    def test_pinned_half_scale_paste(self):
        images = grid_images(np.random.default_rng(6), 2)
        rng = ScriptedRng([1, 0], uniforms=[0.5, 0.5], integers=[4, 6, 0, 0])
        mixed = resizemix(images, [3, 1], 4, 0.1, 0.8, rng)
        lam_src = 256 / 1024
        assert mixed.provenance[0][2] == 1.0 - lam_src == 0.75
        expected_label = 0.75 * one_hot([3], 4)[0] + 0.25 * one_hot([1], 4)[0]
        assert np.allclose(mixed.labels[0], expected_label, atol=1e-12)
        patch = bilinear_resize(images[1], 16, 16)
        assert np.array_equal(mixed.images[0][:, 4:20, 6:22], patch)
        outside = np.ones((32, 32), dtype=bool)
        outside[4:20, 6:22] = False
        assert np.array_equal(mixed.images[0][:, outside], images[0][:, outside])

    def test_source_equal_target_leaves_label_unchanged(self):
        image = grid_images(np.random.default_rng(7), 1)[0]
        images = np.stack([image, image])
        mixed = resizemix(images, [2, 2], 4, 0.1, 0.8, np.random.default_rng(8))
        assert np.allclose(mixed.labels, one_hot([2, 2], 4), atol=1e-12)

    def test_tiny_patch_rejected(self):
        images = grid_images(np.random.default_rng(9), 2, side=16)
        with pytest.raises(ValueError, match="too small"):
            resizemix(images, [0, 1], 2, 0.02, 0.02, np.random.default_rng(0))

    def test_bad_scale_range_rejected(self):
        images = grid_images(np.random.default_rng(10), 2)
        for lo, hi in ((0.0, 0.5), (0.6, 0.5), (0.5, 1.0)):
            with pytest.raises(ValueError, match="scale"):
                resizemix(images, [0, 1], 2, lo, hi, np.random.default_rng(0))

    def test_region_variant_still_valid(self):
        images = grid_images(np.random.default_rng(11), 3)
        mixed = resizemix(images, [0, 1, 2], 3, 0.3, 0.7,
                          np.random.default_rng(12), resize_source_region=True)
        assert np.allclose(mixed.labels.sum(axis=1), 1.0, atol=1e-9)
        assert (mixed.labels >= 0).all()


class TestBilinear:
    def test_same_size_is_identity(self):
        img = grid_images(np.random.default_rng(13), 1, side=8)[0]
        assert np.array_equal(bilinear_resize(img, 8, 8), img)

    def test_2x2_to_1x1_is_half_up_mean(self):
        img = np.array([[[10, 20], [30, 41]]], dtype=np.float64) / 255.0
        img = np.repeat(img, 3, axis=0)
        out = bilinear_resize(img, 1, 1)
        assert np.allclose(out, 25 / 255.0)  # (10+20+30+41)/4 = 25.25 -> 25

    def test_matches_float_oracle_within_rounding(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            h, w = int(rng.integers(3, 12)), int(rng.integers(3, 12))
            oh, ow = int(rng.integers(1, 10)), int(rng.integers(1, 10))
            img = np.round(rng.random((3, h, w)) * 255) / 255
            ours = bilinear_resize(img, oh, ow)
            ref = float_bilinear(img * 255, oh, ow) / 255
            assert np.abs(ours - ref).max() <= 0.5 / 255 + 1e-9

    def test_constant_image_stays_constant(self):
        img = np.full((3, 7, 5), 123 / 255)
        out = bilinear_resize(img, 3, 9)
        assert np.array_equal(out, np.full((3, 3, 9), 123 / 255))


class TestInvariants:
    def test_soft_labels_on_simplex_and_two_hot(self):
        rng = np.random.default_rng(15)
        for kind in ("mixup", "cutmix", "resizemix"):
            cfg = AugmentConfig(kind)
            for trial in range(20):
                images = grid_images(rng, 6, side=16)
                labels = rng.integers(0, 4, size=6)
                _, soft = apply_augmentation(cfg, images, labels, 4, rng)
                assert np.allclose(soft.sum(axis=1), 1.0, atol=1e-9)
                assert (soft >= -1e-12).all()
                assert (np.abs(soft) > 1e-12).sum(axis=1).max() <= 2

    def test_adjacent_class_mixing_stays_adjacent(self):
        rng = np.random.default_rng(16)
        images = grid_images(rng, 8, side=16)
        labels = np.array([1, 2] * 4)
        for kind in ("mixup", "cutmix", "resizemix"):
            _, soft = apply_augmentation(AugmentConfig(kind), images, labels, 4, rng)
            assert np.abs(soft[:, [0, 3]]).max() == 0.0

    def test_config_defaults_by_kind(self):
        assert AugmentConfig("mixup").alpha == 0.2
        assert AugmentConfig("cutmix").alpha == 1.0
        assert AugmentConfig("resizemix").scale_lo == 0.1
        assert AugmentConfig("resizemix").scale_hi == 0.8
        with pytest.raises(ValueError, match="kind"):
            AugmentConfig("blend")

    def test_provenance_lambda_is_target_share(self):
        rng = np.random.default_rng(17)
        images = grid_images(rng, 4, side=16)
        labels = np.array([0, 1, 2, 3])
        mixed = mixup(images, labels, 4, 0.2, rng)
        for i, src, lam in mixed.provenance:
            expected = lam * one_hot([labels[i]], 4)[0] + (1 - lam) * one_hot([labels[src]], 4)[0]
            assert np.allclose(mixed.labels[i], expected, atol=1e-12)

    def test_provenance_csv_dump(self, tmp_path):
        mixed = MixedBatch(np.zeros((2, 3, 4, 4)), np.eye(2), ((0, 1, 0.75), (1, 0, 0.5)))
        path = tmp_path / "prov.csv"
        write_provenance_csv(mixed, path)
        assert path.read_text() == (
            "target_idx,source_idx,target_label_weight\n0,1,0.75\n1,0,0.5\n")


class TestBasicTransforms:
    def test_random_flip_only_mirrors(self):
        rng = np.random.default_rng(18)
        images = grid_images(rng, 12, side=8)
        out = random_flip(images, np.random.default_rng(3))
        flipped = mirrored = 0
        for before, after in zip(images, out):
            if np.array_equal(after, before):
                mirrored += 0
            else:
                assert np.array_equal(after, before[:, :, ::-1])
                flipped += 1
        assert 0 < flipped < 12

    def test_random_resized_crop_shape_and_range(self):
        rng = np.random.default_rng(19)
        images = grid_images(rng, 4, side=16)
        out = random_resized_crop(images, 0.5, 0.9, np.random.default_rng(4))
        assert out.shape == images.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert any(not np.array_equal(a, b) for a, b in zip(images, out))

    def test_random_resized_crop_full_scale_is_identity(self):
        rng = np.random.default_rng(20)
        images = grid_images(rng, 2, side=8)
        out = random_resized_crop(images, 1.0, 1.0, np.random.default_rng(5))
        assert np.array_equal(out, images)
