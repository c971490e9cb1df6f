import math

import numpy as np
import pytest

from curlearn import nn, quality
from curlearn.core import Dataset, Sample
from curlearn.synthgen import SynthConfig, generate_dataset

from oracles import pairwise_auc


def synthetic_quality_samples(qualities, labels=None, num_classes=4):
    labels = labels or [0] * len(qualities)
    samples = tuple(
        Sample(f"q{i:03d}", np.full((3, 8, 8), 0.5), label, q, False)
        for i, (q, label) in enumerate(zip(qualities, labels))
    )
    return Dataset(samples=samples, num_classes=num_classes, split="train")


def zeroed_scorer(fc_bias):
    model = nn.init_model(8, 8, 2, seed=0)
    for name in nn.PARAM_NAMES:
        getattr(model, name)[:] = 0.0
    model.fc_b[:] = fc_bias
    return model


class TestQualityTrainingSet:
    def test_high_quality_maps_to_clean(self):
        ds = synthetic_quality_samples([0.9])
        out = quality.make_quality_training_set(ds)
        assert out.samples[0].label == quality.CLEAN

    def test_boundary_half_is_clean(self):
        ds = synthetic_quality_samples([0.5])
        out = quality.make_quality_training_set(ds)
        assert out.samples[0].label == quality.CLEAN
        low = quality.make_quality_training_set(synthetic_quality_samples([0.49999]))
        assert low.samples[0].label == quality.NOISY

    def test_generated_mix_fraction(self):
        cfg = SynthConfig(num_classes=2, class_counts=(500, 500), height=16, width=16,
                          quality_mix=(0.4, 0.4), noise_flip_prob=0.0, seed=3)
        out = quality.make_quality_training_set(generate_dataset(cfg))
        noisy_fraction = (out.labels() == quality.NOISY).mean()
        assert abs(noisy_fraction - 0.4) < 0.05

    def test_binary_dataset_passes_through(self):
        samples = tuple(Sample(f"b{i}", np.full((3, 8, 8), 0.1), i % 2) for i in range(4))
        ds = Dataset(samples=samples, num_classes=2, split="train")
        assert quality.make_quality_training_set(ds) is ds

    def test_missing_ground_truth_rejected(self):
        samples = tuple(Sample(f"b{i}", np.full((3, 8, 8), 0.1), i % 3) for i in range(6))
        ds = Dataset(samples=samples, num_classes=3, split="train")
        with pytest.raises(ValueError, match="quality"):
            quality.make_quality_training_set(ds)


class TestScore:
    def test_equal_logits_give_half(self):
        model = zeroed_scorer([0.0, 0.0])
        assert quality.score(model, np.full((3, 8, 8), 0.3)) == 0.5

    def test_log_three_gives_three_quarters(self):
        model = zeroed_scorer([0.0, math.log(3.0)])
        s = quality.score(model, np.full((3, 8, 8), 0.3))
        assert s == pytest.approx(0.75, abs=1e-12)

    def test_scores_stay_in_unit_interval(self):
        rng = np.random.default_rng(1)
        model = nn.init_model(8, 8, 2, seed=2)
        for _ in range(20):
            s = quality.score(model, rng.random((3, 8, 8)))
            assert 0.0 <= s <= 1.0

    def test_needs_two_class_model(self):
        model = nn.init_model(8, 8, 4, seed=0)
        with pytest.raises(ValueError, match="2-class"):
            quality.score(model, np.zeros((3, 8, 8)))

    def test_score_dataset_in_manifest_order(self):
        ds = synthetic_quality_samples([0.9, 0.2, 0.7])
        model = nn.init_model(8, 8, 2, seed=3)
        scores = quality.score_dataset(model, ds)
        assert list(scores) == [s.id for s in ds.samples]

    def test_threshold_decision_matches_argmax(self):
        rng = np.random.default_rng(4)
        model = nn.init_model(8, 8, 2, seed=5)
        for _ in range(20):
            img = rng.random((3, 8, 8))
            logits, _ = nn.forward(model, img[None])
            s = quality.score(model, img)
            argmax_clean = logits[0, quality.CLEAN] >= logits[0, quality.NOISY]
            assert (quality.pseudo_label(s, 0.5) == "clean") == argmax_clean


class TestPseudoLabel:
    def test_rule_cases(self):
        assert quality.pseudo_label(0.7, 0.5) == "clean"
        assert quality.pseudo_label(0.5, 0.5) == "clean"
        assert quality.pseudo_label(0.49, 0.5) == "noisy"

    def test_monotone_in_score_and_antitone_in_tau(self):
        grid = [i / 20 for i in range(21)]
        for tau in (0.0, 0.3, 0.5, 0.9):
            labels = [quality.pseudo_label(s, tau) for s in grid]
            # noisy* then clean* as s rises
            assert labels == sorted(labels, key=lambda v: v == "clean")
        for s in (0.0, 0.4, 0.8):
            labels = [quality.pseudo_label(s, tau) for tau in grid]
            # clean* then noisy* as tau rises
            assert labels == sorted(labels, key=lambda v: v == "noisy")

    def test_range_checks(self):
        with pytest.raises(ValueError):
            quality.pseudo_label(1.5, 0.5)
        with pytest.raises(ValueError):
            quality.pseudo_label(0.5, -0.1)


class TestDistribution:
    def test_all_clean_scores(self):
        ds = synthetic_quality_samples([0.9, 0.9, 0.9], labels=[0, 1, 1])
        scores = {s.id: 1.0 for s in ds.samples}
        counts = quality.quality_distribution_by_class(ds, scores, 0.5)
        assert counts[:, 1].sum() == 0
        assert counts[0, 0] == 1 and counts[1, 0] == 2

    def test_counts_conserve_totals(self):
        rng = np.random.default_rng(6)
        labels = rng.integers(0, 4, size=50).tolist()
        ds = synthetic_quality_samples(rng.random(50).tolist(), labels=labels)
        scores = {s.id: float(rng.random()) for s in ds.samples}
        counts = quality.quality_distribution_by_class(ds, scores, 0.5)
        assert counts.sum() == 50
        assert np.array_equal(counts.sum(axis=1), ds.class_counts())

    def test_missing_score_raises(self):
        ds = synthetic_quality_samples([0.9, 0.2])
        with pytest.raises(ValueError, match="q001"):
            quality.quality_distribution_by_class(ds, {"q000": 0.5}, 0.5)

    def test_oracle_scorer_recovers_quality_mix(self):
        mix = (0.5, 0.4, 0.2, 0.1)
        cfg = SynthConfig(num_classes=4, class_counts=(1500, 1500, 1500, 1500),
                          height=16, width=16, quality_mix=mix,
                          noise_flip_prob=0.0, seed=7)
        ds = generate_dataset(cfg)
        scores = {s.id: s.true_quality for s in ds.samples}
        counts = quality.quality_distribution_by_class(ds, scores, 0.5)
        fractions = counts[:, 1] / counts.sum(axis=1)
        assert np.abs(fractions - mix).max() < 0.05


class TestAuc:
    def test_perfect_and_reversed_separation(self):
        scores = [0.1, 0.2, 0.8, 0.9]
        assert quality.mann_whitney_auc(scores, [False, False, True, True]) == 1.0
        assert quality.mann_whitney_auc(scores, [True, True, False, False]) == 0.0

    def test_all_tied_scores_give_half(self):
        assert quality.mann_whitney_auc([0.5] * 6, [True, False] * 3) == 0.5

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            n = int(rng.integers(5, 40))
            scores = np.round(rng.random(n), 2)  # coarse grid forces ties
            labels = rng.random(n) < 0.5
            if labels.all() or not labels.any():
                continue
            assert quality.mann_whitney_auc(scores, labels) == pytest.approx(
                pairwise_auc(scores.tolist(), labels.tolist()), abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="AUC"):
            quality.mann_whitney_auc([0.1, 0.9], [True, True])


class TestScorerTraining:
    def quality_dataset(self, n_per_class=60, seed=9):
        cfg = SynthConfig(num_classes=2, class_counts=(n_per_class, n_per_class),
                          height=16, width=16, quality_mix=(0.5, 0.5),
                          noise_flip_prob=0.0, seed=seed)
        return quality.make_quality_training_set(generate_dataset(cfg))

    def test_zero_epoch_budget_returns_initialized_model(self):
        ds = self.quality_dataset()
        train, val = ds, self.quality_dataset(seed=10)
        hyper = quality.QualityTrainConfig(epochs=0, seed=4)
        model, summary = quality.train_quality_scorer(train, val, hyper)
        init = nn.init_model(16, 16, 2, seed=4)
        assert all(np.array_equal(getattr(model, n), getattr(init, n))
                   for n in nn.PARAM_NAMES)
        assert 0.2 <= summary.val_accuracy <= 0.8

    def test_same_seed_gives_identical_parameters(self):
        train = self.quality_dataset()
        val = self.quality_dataset(seed=10)
        hyper = quality.QualityTrainConfig(epochs=2, seed=5)
        a, _ = quality.train_quality_scorer(train, val, hyper)
        b, _ = quality.train_quality_scorer(train, val, hyper)
        assert all(np.array_equal(getattr(a, n), getattr(b, n)) for n in nn.PARAM_NAMES)

    def test_learns_quality_signal(self):
        model, summary = quality.fit_quality_scorer(
            generate_dataset(SynthConfig(num_classes=2, class_counts=(150, 150),
                                         height=16, width=16, quality_mix=(0.5, 0.5),
                                         noise_flip_prob=0.0, seed=11)),
            quality.QualityTrainConfig(epochs=6, seed=6))
        assert summary.val_auc > 0.7
        assert model.num_classes == 2

    def test_write_scores_csv(self, tmp_path):
        path = tmp_path / "scores.csv"
        quality.write_scores_csv({"a": 0.75, "b": 0.25}, 0.5, path)
        assert path.read_text() == "id,s,pseudo_label\na,0.75,clean\nb,0.25,noisy\n"
