"""Batch-level mixing augmentations producing probability-vector labels.

Each operation pairs every batch item with a partner drawn by one random
permutation and records per-item provenance (target index, source index, and
the weight of the target's label). Geometry draws never depend on pixel
values, so replaying an operation with the same rng stream reproduces the
same paste rectangles on any batch.

Bilinear resizing works on the 8-bit integer grid with half-pixel centers and
a common-denominator integer formulation: the only rounding is the final
half-up division per pixel, which keeps results identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import round_half_up


@dataclass(frozen=True)
class AugmentConfig:
    kind: str  # "mixup" | "cutmix" | "resizemix"
    alpha: float | None = None
    scale_lo: float = 0.1
    scale_hi: float = 0.8
    resize_source_region: bool = False

    def __post_init__(self):
        if self.kind not in ("mixup", "cutmix", "resizemix"):
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 1.0 if self.kind == "cutmix" else 0.2)
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 < self.scale_lo <= self.scale_hi < 1.0:
            raise ValueError("need 0 < scale_lo <= scale_hi < 1")


@dataclass(frozen=True)
class MixedBatch:
    images: np.ndarray  # (n, c, h, w)
    labels: np.ndarray  # (n, num_classes) rows on the simplex
    provenance: tuple[tuple[int, int, float], ...]  # (target, source, target label weight)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _check_batch(images: np.ndarray, labels: np.ndarray):
    if images.ndim != 4:
        raise ValueError(f"expected (n, c, h, w) images, got shape {images.shape}")
    if images.shape[0] < 2:
        raise ValueError("mixing needs a batch of at least 2 items")
    if labels.shape[0] != images.shape[0]:
        raise ValueError("image/label count mismatch")


def mixup(images, labels, num_classes: int, alpha: float, rng: np.random.Generator) -> MixedBatch:
    """Convex pixel and label blend with per-pair lambda ~ Beta(alpha, alpha)."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_batch(images, labels)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n = images.shape[0]
    perm = rng.permutation(n)
    lam = rng.beta(alpha, alpha, size=n)
    mixed = lam[:, None, None, None] * images + (1.0 - lam)[:, None, None, None] * images[perm]
    oh = one_hot(labels, num_classes)
    soft = lam[:, None] * oh + (1.0 - lam)[:, None] * oh[perm]
    prov = tuple((i, int(perm[i]), float(lam[i])) for i in range(n))
    return MixedBatch(mixed, soft, prov)


def cutmix(images, labels, num_classes: int, alpha: float, rng: np.random.Generator) -> MixedBatch:
    """Paste a source rectangle over the target; labels mix by surviving area.

    The cut has side factors sqrt(1 - lambda) and is centered on a uniform
    pixel, clipped to bounds; the reported weight is recomputed from the
    clipped area, so it is exact by construction.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_batch(images, labels)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n, _, h, w = images.shape
    perm = rng.permutation(n)
    oh = one_hot(labels, num_classes)
    out = images.copy()
    soft = np.empty_like(oh)
    prov = []
    for i in range(n):
        lam = float(rng.beta(alpha, alpha))
        side = np.sqrt(1.0 - lam)
        rh = round_half_up(h * side)
        rw = round_half_up(w * side)
        cy = int(rng.integers(0, h))
        cx = int(rng.integers(0, w))
        y1 = max(cy - rh // 2, 0)
        y2 = min(cy - rh // 2 + rh, h)
        x1 = max(cx - rw // 2, 0)
        x2 = min(cx - rw // 2 + rw, w)
        area = max(y2 - y1, 0) * max(x2 - x1, 0)
        if area:
            out[i, :, y1:y2, x1:x2] = images[perm[i], :, y1:y2, x1:x2]
        lam_adj = 1.0 - area / (h * w)
        soft[i] = lam_adj * oh[i] + (1.0 - lam_adj) * oh[perm[i]]
        prov.append((i, int(perm[i]), lam_adj))
    return MixedBatch(out, soft, tuple(prov))


def _axis_coords(src: int, dst: int):
    # Half-pixel centers: source coord of output i is ((2i+1)*src - dst) / (2*dst).
    i = np.arange(dst, dtype=np.int64)
    num = (2 * i + 1) * src - dst
    den = 2 * dst
    lo = np.maximum(num, 0) // den
    frac = np.where(num < 0, 0, num - lo * den)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, frac, den


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a [0, 1] image on the 8-bit grid; integer-exact, rounded half-up."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target {out_h}x{out_w} is smaller than 1x1")
    u8 = np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5).astype(np.int64)
    _, h, w = u8.shape
    y0, y1, fy, dy = _axis_coords(h, out_h)
    x0, x1, fx, dx = _axis_coords(w, out_w)
    p00 = u8[:, y0][:, :, x0]
    p01 = u8[:, y0][:, :, x1]
    p10 = u8[:, y1][:, :, x0]
    p11 = u8[:, y1][:, :, x1]
    wy0 = (dy - fy)[None, :, None]
    wy1 = fy[None, :, None]
    wx0 = (dx - fx)[None, None, :]
    wx1 = fx[None, None, :]
    total = wy0 * (wx0 * p00 + wx1 * p01) + wy1 * (wx0 * p10 + wx1 * p11)
    denom = dy * dx
    return ((2 * total + denom) // (2 * denom)).astype(np.float64) / 255.0


def resizemix(images, labels, num_classes: int, scale_lo: float, scale_hi: float,
              rng: np.random.Generator, resize_source_region: bool = False) -> MixedBatch:
    """Shrink the source image and paste it fully inside the target.

    Labels mix by paste-area fraction. With resize_source_region=True a random
    sub-region of the source (same scale range) is resized instead of the
    whole image.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_batch(images, labels)
    if not 0.0 < scale_lo <= scale_hi < 1.0:
        raise ValueError("need 0 < scale_lo <= scale_hi < 1")
    n, _, h, w = images.shape
    perm = rng.permutation(n)
    oh = one_hot(labels, num_classes)
    out = images.copy()
    soft = np.empty_like(oh)
    prov = []
    for i in range(n):
        scale = float(rng.uniform(scale_lo, scale_hi))
        ph = round_half_up(scale * h)
        pw = round_half_up(scale * w)
        if ph < 1 or pw < 1:
            raise ValueError(
                f"scale {scale:.4f} rounds to a {ph}x{pw} patch; too small to paste")
        source = images[perm[i]]
        if resize_source_region:
            crop_scale = float(rng.uniform(scale_lo, scale_hi))
            ch = max(round_half_up(crop_scale * h), 1)
            cw = max(round_half_up(crop_scale * w), 1)
            cy = int(rng.integers(0, h - ch + 1))
            cx = int(rng.integers(0, w - cw + 1))
            source = source[:, cy:cy + ch, cx:cx + cw]
        patch = bilinear_resize(source, ph, pw)
        top = int(rng.integers(0, h - ph + 1))
        left = int(rng.integers(0, w - pw + 1))
        out[i, :, top:top + ph, left:left + pw] = patch
        lam_src = (ph * pw) / (h * w)
        soft[i] = (1.0 - lam_src) * oh[i] + lam_src * oh[perm[i]]
        prov.append((i, int(perm[i]), 1.0 - lam_src))
    return MixedBatch(out, soft, tuple(prov))


def random_flip(images, rng: np.random.Generator) -> np.ndarray:
    """Horizontal flip, each image independently with probability 1/2."""
    images = np.asarray(images, dtype=np.float64)
    flip = rng.random(images.shape[0]) < 0.5
    out = images.copy()
    out[flip] = out[flip, :, :, ::-1]
    return out


def random_resized_crop(images, scale_lo: float, scale_hi: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Crop a random square-ish region and resize it back to full size."""
    images = np.asarray(images, dtype=np.float64)
    if not 0.0 < scale_lo <= scale_hi <= 1.0:
        raise ValueError("need 0 < scale_lo <= scale_hi <= 1")
    n, _, h, w = images.shape
    out = np.empty_like(images)
    for i in range(n):
        scale = float(rng.uniform(scale_lo, scale_hi))
        ch = max(round_half_up(scale * h), 1)
        cw = max(round_half_up(scale * w), 1)
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        out[i] = bilinear_resize(images[i][:, top:top + ch, left:left + cw], h, w)
    return out


def write_provenance_csv(mixed: MixedBatch, path) -> None:
    """Audit dump: which source was mixed into each item, at what weight."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("target_idx,source_idx,target_label_weight\n")
        for target, source, lam in mixed.provenance:
            fh.write(f"{target},{source},{lam!r}\n")


def apply_augmentation(cfg: AugmentConfig, images, labels, num_classes: int,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if cfg.kind == "mixup":
        mixed = mixup(images, labels, num_classes, cfg.alpha, rng)
    elif cfg.kind == "cutmix":
        mixed = cutmix(images, labels, num_classes, cfg.alpha, rng)
    else:
        mixed = resizemix(images, labels, num_classes, cfg.scale_lo, cfg.scale_hi,
                          rng, resize_source_region=cfg.resize_source_region)
    return mixed.images, mixed.labels
