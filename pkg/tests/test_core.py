import numpy as np
import pytest

from curlearn.core import Dataset, Sample, round_half_up, split_train_val, validate_dataset


def tiny_image(value=0.5, side=4):
    return np.full((3, side, side), value)


def make_dataset(labels, num_classes=4, split="train", with_truth=False, prefix="s"):
    samples = []
    for i, label in enumerate(labels):
        samples.append(Sample(
            id=f"{prefix}{i:04d}",
            image=tiny_image(),
            label=int(label),
            true_quality=0.8 if with_truth else None,
            label_was_flipped=False if with_truth else None,
        ))
    return Dataset(samples=tuple(samples), num_classes=num_classes, split=split)


class TestValidate:
    def test_well_formed_dataset_has_no_violations(self):
        ds = make_dataset([0, 1, 2, 3, 0, 1, 2, 3, 0, 1])
        assert validate_dataset(ds) == []

    def test_label_equal_to_num_classes_is_flagged(self):
        ds = make_dataset([0, 4, 1])
        violations = validate_dataset(ds)
        assert len(violations) == 1
        assert violations[0].sample_id == "s0001"
        assert violations[0].rule == "label_range"

    def test_duplicate_id_is_flagged(self):
        a = Sample("dup", tiny_image(), 0)
        b = Sample("dup", tiny_image(), 1)
        ds = Dataset(samples=(a, b), num_classes=4, split="train")
        violations = [v for v in validate_dataset(ds) if v.rule == "duplicate_id"]
        assert len(violations) == 1
        assert violations[0].sample_id == "dup"

    def test_pixel_out_of_range_is_flagged(self):
        bad = Sample("p", tiny_image(1.5), 0)
        ds = Dataset(samples=(bad,), num_classes=4, split="train")
        assert any(v.rule == "image" for v in validate_dataset(ds))

    def test_non_finite_pixels_are_flagged(self):
        bad = Sample("n", tiny_image(np.nan), 0)
        ds = Dataset(samples=(bad,), num_classes=4, split="train")
        assert any(v.rule == "image" for v in validate_dataset(ds))

    def test_mixed_ground_truth_presence_is_flagged(self):
        a = Sample("a", tiny_image(), 0, true_quality=0.9, label_was_flipped=False)
        b = Sample("b", tiny_image(), 1)
        ds = Dataset(samples=(a, b), num_classes=4, split="train")
        assert any(v.rule == "ground_truth_fields" for v in validate_dataset(ds))

    def test_small_num_classes_is_flagged(self):
        ds = Dataset(samples=(Sample("a", tiny_image(), 0),), num_classes=1, split="train")
        assert any(v.rule == "num_classes" for v in validate_dataset(ds))


class TestRounding:
    def test_half_up(self):
        assert round_half_up(2.5) == 3
        assert round_half_up(2.4) == 2
        assert round_half_up(74.5) == 75
        assert round_half_up(0.0) == 0


class TestSplit:
    def test_balanced_classes_round_half_up(self):
        ds = make_dataset([c for c in range(4) for _ in range(25)])
        train, val = split_train_val(ds, 0.1, seed=1)
        assert len(val) == 12  # round(2.5) = 3 per class
        assert np.array_equal(val.class_counts(), [3, 3, 3, 3])
        assert len(train) == 88

    def test_table_counts_give_expected_val_sizes(self):
        counts = (5180, 2588, 1077, 745)
        ds = make_dataset([c for c, n in enumerate(counts) for _ in range(n)])
        _, val = split_train_val(ds, 0.1, seed=3)
        assert val.class_counts().tolist() == [518, 259, 108, 75]

    def test_partitions_exactly(self):
        rng = np.random.default_rng(0)
        ds = make_dataset(rng.integers(0, 4, size=200))
        train, val = split_train_val(ds, 0.25, seed=9)
        train_ids = [s.id for s in train.samples]
        val_ids = [s.id for s in val.samples]
        assert set(train_ids) | set(val_ids) == {s.id for s in ds.samples}
        assert set(train_ids) & set(val_ids) == set()
        assert train.split == "train" and val.split == "val"

    def test_stratification_bound(self):
        rng = np.random.default_rng(4)
        for trial in range(10):
            counts = rng.integers(3, 60, size=5)
            frac = float(rng.uniform(0.05, 0.5))
            ds = make_dataset([c for c, n in enumerate(counts) for _ in range(n)],
                              num_classes=5)
            _, val = split_train_val(ds, frac, seed=trial)
            for c in range(5):
                assert abs(val.class_counts()[c] - frac * counts[c]) < 1.0

    def test_preserves_manifest_order(self):
        ds = make_dataset([0, 1, 0, 1, 0, 1, 0, 1], num_classes=2)
        train, val = split_train_val(ds, 0.25, seed=2)
        order = {s.id: i for i, s in enumerate(ds.samples)}
        assert [order[s.id] for s in train.samples] == sorted(order[s.id] for s in train.samples)
        assert [order[s.id] for s in val.samples] == sorted(order[s.id] for s in val.samples)

    def test_same_seed_is_byte_identical(self):
        ds = make_dataset([0, 1, 2, 3] * 30)
        first = split_train_val(ds, 0.2, seed=7)
        second = split_train_val(ds, 0.2, seed=7)
        assert [s.id for s in first[1].samples] == [s.id for s in second[1].samples]
        third = split_train_val(ds, 0.2, seed=8)
        assert [s.id for s in third[1].samples] != [s.id for s in first[1].samples]

    def test_refuses_tiny_class(self):
        ds = make_dataset([0, 0, 1, 1, 2])
        with pytest.raises(ValueError, match="fewer than 2"):
            split_train_val(ds, 0.5, seed=0)

    def test_rejects_bad_frac_and_split(self):
        ds = make_dataset([0, 0, 1, 1])
        with pytest.raises(ValueError, match="frac"):
            split_train_val(ds, 1.0, seed=0)
        test_ds = make_dataset([0, 0, 1, 1], split="test")
        with pytest.raises(ValueError, match="train"):
            split_train_val(test_ds, 0.5, seed=0)
