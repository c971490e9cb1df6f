"""Shared domain types: samples, datasets, validation and stratified splitting.

Images are plain numpy arrays of shape (channels, height, width) with float64
values in [0, 1]; on-disk files hold 8-bit channels, so pixel values produced
by the loaders always sit on the k/255 grid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

SPLITS = ("train", "val", "test")


def round_half_up(x: float) -> int:
    """Round a non-negative real to the nearest integer, halves up."""
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class Sample:
    """One image with its ordinal label.

    ``true_quality`` and ``label_was_flipped`` are generator ground truth and
    are present only on synthetic data.
    """

    id: str
    image: np.ndarray
    label: int
    true_quality: Optional[float] = None
    label_was_flipped: Optional[bool] = None


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    num_classes: int
    split: str

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels(), minlength=self.num_classes)

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}

    def is_synthetic(self) -> bool:
        return all(s.true_quality is not None for s in self.samples)


@dataclass(frozen=True)
class Violation:
    sample_id: Optional[str]
    rule: str
    message: str


def _image_ok(img: np.ndarray) -> Optional[str]:
    if not isinstance(img, np.ndarray) or img.ndim != 3:
        return "image must be a (channels, height, width) array"
    if img.shape[0] < 1 or img.shape[1] < 1 or img.shape[2] < 1:
        return f"degenerate image shape {img.shape}"
    if not np.isfinite(img).all():
        return "image contains non-finite pixels"
    lo, hi = float(img.min()), float(img.max())
    if lo < 0.0 or hi > 1.0:
        return f"pixel values outside [0, 1]: min={lo}, max={hi}"
    return None


def validate_dataset(ds: Dataset) -> list[Violation]:
    """Check every type invariant; violations are data, not exceptions."""
    out: list[Violation] = []
    if ds.num_classes < 2:
        out.append(Violation(None, "num_classes", f"num_classes must be >= 2, got {ds.num_classes}"))
    if ds.split not in SPLITS:
        out.append(Violation(None, "split", f"split must be one of {SPLITS}, got {ds.split!r}"))

    seen: set[str] = set()
    n_quality = 0
    for s in ds.samples:
        if s.id in seen:
            out.append(Violation(s.id, "duplicate_id", f"sample id {s.id!r} occurs more than once"))
        seen.add(s.id)
        if not (0 <= s.label < ds.num_classes):
            out.append(Violation(s.id, "label_range",
                                 f"label {s.label} outside [0, {ds.num_classes - 1}]"))
        problem = _image_ok(s.image)
        if problem is not None:
            out.append(Violation(s.id, "image", problem))
        has_q = s.true_quality is not None
        has_flip = s.label_was_flipped is not None
        if has_q != has_flip:
            out.append(Violation(s.id, "ground_truth_fields",
                                 "true_quality and label_was_flipped must be set together"))
        if has_q:
            n_quality += 1
            if not (0.0 <= s.true_quality <= 1.0):
                out.append(Violation(s.id, "true_quality",
                                     f"true_quality {s.true_quality} outside [0, 1]"))
    if 0 < n_quality < len(ds.samples):
        out.append(Violation(None, "ground_truth_fields",
                             "ground-truth fields must be present on all samples or none"))
    return out


def split_train_val(ds: Dataset, frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Per-class stratified split of a training dataset.

    Every class contributes round-half-up(frac * class_count) samples to the
    validation set; the remainder stays in train. Both outputs preserve the
    input (manifest) ordering and together partition the input exactly.
    """
    if not (0.0 < frac < 1.0):
        raise ValueError(f"frac must be in (0, 1), got {frac}")
    if ds.split != "train":
        raise ValueError(f"can only split a train dataset, got split={ds.split!r}")

    labels = ds.labels()
    counts = np.bincount(labels, minlength=ds.num_classes)
    tiny = [int(c) for c in range(ds.num_classes) if counts[c] < 2]
    if tiny:
        raise ValueError(f"classes {tiny} have fewer than 2 samples; refusing to split")

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    val_mask = np.zeros(len(ds.samples), dtype=bool)
    for c in range(ds.num_classes):
        idx = np.flatnonzero(labels == c)
        n_val = round_half_up(frac * len(idx))
        chosen = rng.permutation(idx)[:n_val]
        val_mask[chosen] = True

    train_samples = tuple(s for s, v in zip(ds.samples, val_mask) if not v)
    val_samples = tuple(s for s, v in zip(ds.samples, val_mask) if v)
    train = replace(ds, samples=train_samples, split="train")
    val = replace(ds, samples=val_samples, split="val")
    return train, val
