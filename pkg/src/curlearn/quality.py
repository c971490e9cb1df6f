"""Binary image-quality scoring: train a small classifier, assign each sample
a cleanliness probability s in [0, 1], and threshold it into clean/noisy
pseudo-labels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace as dc_replace
from typing import Mapping

import numpy as np

from . import nn
from .core import Dataset, Sample, split_train_val

log = logging.getLogger(__name__)

NOISY, CLEAN = 0, 1
QUALITY_CLASS_NAMES = ("noisy", "clean")


def make_quality_training_set(ds: Dataset) -> Dataset:
    """Binary-labeled copy of a dataset: clean iff true_quality >= 0.5.

    Datasets that are already binary-labeled (an explicit quality corpus) pass
    through unchanged.
    """
    if ds.is_synthetic() and len(ds.samples) > 0:
        samples = tuple(
            Sample(s.id, s.image, CLEAN if s.true_quality >= 0.5 else NOISY,
                   s.true_quality, s.label_was_flipped)
            for s in ds.samples)
        out = Dataset(samples=samples, num_classes=2, split=ds.split)
    elif ds.num_classes == 2:
        out = ds
    else:
        raise ValueError(
            "quality training needs synthetic ground truth (true_quality) "
            "or an explicitly binary-labeled dataset")
    counts = out.class_counts()
    log.info("quality training set: %d clean, %d noisy", counts[CLEAN], counts[NOISY])
    return out


@dataclass(frozen=True)
class QualityTrainConfig:
    epochs: int = 12
    base_lr: float = 0.02
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class QualitySummary:
    val_accuracy: float
    val_auc: float
    epochs: int


def mann_whitney_auc(scores, positives) -> float:
    """Rank-statistic AUC; tied scores contribute 0.5 per pair."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = int((~positives).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    _, inverse, counts = np.unique(sorted_scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    avg_rank = (ends - counts + 1 + ends) / 2.0
    ranks = np.empty(len(scores))
    ranks[order] = avg_rank[inverse]
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def train_quality_scorer(train: Dataset, val: Dataset,
                         hyper: QualityTrainConfig) -> tuple[nn.TinyCNN, QualitySummary]:
    """Fit the binary scorer with the shared training loop; report val acc/AUC."""
    if train.num_classes != 2 or val.num_classes != 2:
        raise ValueError("quality scorer needs binary-labeled datasets")
    _, h, w = train.samples[0].image.shape
    model = nn.init_model(h, w, 2, seed=hyper.seed)
    optim = nn.OptimState(base_lr=hyper.base_lr, momentum=hyper.momentum,
                          weight_decay=hyper.weight_decay)
    schedule = nn.LrSchedule("cosine", t_max=max(hyper.epochs, 1))
    ids = [s.id for s in train.samples]
    for epoch in range(hyper.epochs):
        nn.train_epoch(model, optim, schedule, ids, train, None,
                       hyper.batch_size, hyper.seed, epoch)
    probs, _ = nn.evaluate(model, val)
    labels = val.labels()
    acc = nn.accuracy(probs, labels)
    auc = mann_whitney_auc(probs[:, CLEAN], labels == CLEAN)
    return model, QualitySummary(val_accuracy=acc, val_auc=auc, epochs=hyper.epochs)


def fit_quality_scorer(ds: Dataset, hyper: QualityTrainConfig,
                       val_fraction: float = 0.1):
    """Convenience wrapper: derive binary labels, split, train, summarize."""
    quality_set = make_quality_training_set(ds)
    quality_set = dc_replace(quality_set, split="train")
    q_train, q_val = split_train_val(quality_set, val_fraction, hyper.seed)
    return train_quality_scorer(q_train, q_val, hyper)


def score(model: nn.TinyCNN, image: np.ndarray) -> float:
    """Cleanliness probability of one image: softmax(logits)[clean]."""
    if model.num_classes != 2:
        raise ValueError("scoring needs a 2-class model")
    logits, _ = nn.forward(model, image[None])
    return float(nn.softmax(logits)[0, CLEAN])


def score_dataset(model: nn.TinyCNN, ds: Dataset, batch_size: int = 256) -> dict[str, float]:
    """Cleanliness scores for every sample, keyed by id in manifest order."""
    if model.num_classes != 2:
        raise ValueError("scoring needs a 2-class model")
    probs, _ = nn.evaluate(model, ds, batch_size=batch_size)
    return {s.id: float(p) for s, p in zip(ds.samples, probs[:, CLEAN])}


def pseudo_label(s: float, tau: float) -> str:
    """"clean" iff s >= tau (the boundary counts as clean)."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"score must lie in [0, 1], got {s}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return "clean" if s >= tau else "noisy"


def quality_distribution_by_class(ds: Dataset, scores: Mapping[str, float],
                                  tau: float) -> np.ndarray:
    """Per ordinal class, the (clean, noisy) pseudo-label counts."""
    counts = np.zeros((ds.num_classes, 2), dtype=np.int64)
    for s in ds.samples:
        if s.id not in scores:
            raise ValueError(f"no cleanliness score for sample {s.id!r}")
        col = 0 if scores[s.id] >= tau else 1
        counts[s.label, col] += 1
    return counts


def write_scores_csv(scores: Mapping[str, float], tau: float, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id,s,pseudo_label\n")
        for sid, s in scores.items():
            fh.write(f"{sid},{s!r},{pseudo_label(s, tau)}\n")
