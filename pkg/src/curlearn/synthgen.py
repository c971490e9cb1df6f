"""Synthetic ordinal-image benchmark with quality-correlated label noise.

Each class k is rendered as a fixed background gradient plus (k + 1) bright
elliptical blobs of contrast 0.3 + 0.2k. A per-sample quality draw q decides
degradation: q >= 0.5 leaves the image clean, q < 0.5 applies a box blur and
dark occluder rectangles whose strength grows as q falls. Label noise is
applied only to degraded samples, flipping to an adjacent class.

All rendering happens in 8-bit integer space (blur sums in exact integer
arithmetic, rounded half-up once), so generation is bit-identical across
platforms for a fixed seed.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .core import Dataset, Sample, round_half_up

OCCLUDER_VALUE = 13  # round(0.05 * 255)
OCCLUDER_SIZE = 6
MIN_IMAGE_SIDE = 16

MANIFEST_COLUMNS = ("id", "path", "label", "split")
GROUND_TRUTH_COLUMNS = ("true_quality", "label_was_flipped")


class PpmError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int
    class_counts: tuple[int, ...]
    height: int = 32
    width: int = 32
    quality_mix: tuple[float, ...] = ()
    noise_flip_prob: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if len(self.class_counts) != self.num_classes:
            raise ValueError("class_counts must have one entry per class")
        if any(c < 1 for c in self.class_counts):
            raise ValueError("class_counts entries must all be >= 1")
        if len(self.quality_mix) != self.num_classes:
            raise ValueError("quality_mix must have one entry per class")
        if any(not 0.0 <= m <= 1.0 for m in self.quality_mix):
            raise ValueError("quality_mix entries must lie in [0, 1]")
        if not 0.0 <= self.noise_flip_prob <= 1.0:
            raise ValueError("noise_flip_prob must lie in [0, 1]")
        if self.height < MIN_IMAGE_SIDE or self.width < MIN_IMAGE_SIDE:
            raise ValueError(
                f"image too small to place blobs: need at least "
                f"{MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {self.height}x{self.width}")


@dataclass(frozen=True)
class QualityProfile:
    """Degradation recipe derived deterministically from a quality score."""

    blur_radius: int
    occluder_count: int
    occluder_size: int

    @classmethod
    def from_quality(cls, q: float) -> "QualityProfile":
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"quality must lie in [0, 1], got {q}")
        if q >= 0.5:
            return cls(0, 0, 0)
        severity = 0.5 - q
        blur = round_half_up(8.0 * severity)
        occluders = 1 + int(np.floor(6.0 * severity))
        return cls(blur, occluders, OCCLUDER_SIZE)


def box_blur_u8(img: np.ndarray, radius: int) -> np.ndarray:
    """Mean filter over a clipped (2r+1)^2 window, integer-exact, half-up."""
    if radius <= 0:
        return img
    c, h, w = img.shape
    integral = np.zeros((c, h + 1, w + 1), dtype=np.int64)
    integral[:, 1:, 1:] = img.cumsum(axis=1).cumsum(axis=2)
    y0 = np.clip(np.arange(h) - radius, 0, None)
    y1 = np.clip(np.arange(h) + radius + 1, None, h)
    x0 = np.clip(np.arange(w) - radius, 0, None)
    x1 = np.clip(np.arange(w) + radius + 1, None, w)
    total = (integral[:, y1[:, None], x1[None, :]]
             - integral[:, y0[:, None], x1[None, :]]
             - integral[:, y1[:, None], x0[None, :]]
             + integral[:, y0[:, None], x0[None, :]])
    count = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return (2 * total + count) // (2 * count)


def _degrade_u8(img: np.ndarray, q: float, rng: np.random.Generator) -> np.ndarray:
    profile = QualityProfile.from_quality(q)
    if profile.blur_radius == 0 and profile.occluder_count == 0:
        return img
    out = box_blur_u8(img, profile.blur_radius)
    if out is img:
        out = img.copy()
    _, h, w = img.shape
    size = min(profile.occluder_size, h, w)
    for _ in range(profile.occluder_count):
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        out[:, top:top + size, left:left + size] = OCCLUDER_VALUE
    return out


def degrade_image(img: np.ndarray, q: float, rng: np.random.Generator) -> np.ndarray:
    """Blur-then-occlude an image according to its quality score.

    q >= 0.5 returns the input unchanged. Inputs are quantized to the 8-bit
    grid before blurring, so outputs always sit on that grid.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quality must lie in [0, 1], got {q}")
    if q >= 0.5:
        return img
    u8 = np.floor(img * 255.0 + 0.5).astype(np.int64)
    return _degrade_u8(u8, q, rng).astype(np.float64) / 255.0


# Background gradient: per-channel base plus integer ramps. Values stay well
# below 255 so the brightest blob still adds visible contrast.
_CHANNEL_BASE = (40, 50, 60)
_V_RAMP = 60
_H_RAMP = 40


def _background_u8(height: int, width: int) -> np.ndarray:
    rows = (np.arange(height, dtype=np.int64) * _V_RAMP) // max(height - 1, 1)
    cols = (np.arange(width, dtype=np.int64) * _H_RAMP) // max(width - 1, 1)
    grid = rows[:, None] + cols[None, :]
    base = np.array(_CHANNEL_BASE, dtype=np.int64)[:, None, None]
    return base + grid[None, :, :]


def _clean_image_u8(class_idx: int, height: int, width: int,
                    rng: np.random.Generator) -> np.ndarray:
    img = _background_u8(height, width)
    contrast = 0.3 + 0.2 * class_idx
    add = min(255, round_half_up(255.0 * contrast))
    margin = max(2, min(height, width) // 8)
    ax_lo = max(2, min(height, width) // 8)
    ax_hi = max(ax_lo + 1, min(height, width) // 4)
    ys = np.arange(height, dtype=np.int64)[:, None]
    xs = np.arange(width, dtype=np.int64)[None, :]
    for _ in range(class_idx + 1):
        cy = int(rng.integers(margin, height - margin))
        cx = int(rng.integers(margin, width - margin))
        ay = int(rng.integers(ax_lo, ax_hi + 1))
        ax = int(rng.integers(ax_lo, ax_hi + 1))
        mask = ((ys - cy) ** 2) * ax * ax + ((xs - cx) ** 2) * ay * ay <= ay * ay * ax * ax
        img = img + add * mask[None, :, :]
    return np.minimum(img, 255)


def _flip_label(label: int, num_classes: int, rng: np.random.Generator) -> int:
    # Adjacent-class flip; at the boundary the only neighbour is inward.
    direction = 1 if rng.random() < 0.5 else -1
    candidate = label + direction
    if not 0 <= candidate < num_classes:
        candidate = label - direction
    return candidate


def generate_dataset(cfg: SynthConfig, split: str = "train") -> Dataset:
    """Render a full synthetic dataset; bit-identical for a fixed seed."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    samples = []
    serial = 0
    for k in range(cfg.num_classes):
        for _ in range(cfg.class_counts[k]):
            img = _clean_image_u8(k, cfg.height, cfg.width, rng)
            if rng.random() < cfg.quality_mix[k]:
                q = rng.random() * 0.5
            else:
                q = 1.0 - rng.random() * 0.5
            img = _degrade_u8(img, q, rng)
            label = k
            flipped = False
            if q < 0.5 and rng.random() < cfg.noise_flip_prob:
                label = _flip_label(k, cfg.num_classes, rng)
                flipped = True
            samples.append(Sample(
                id=f"{split}-{serial:05d}",
                image=img.astype(np.float64) / 255.0,
                label=label,
                true_quality=q,
                label_was_flipped=flipped,
            ))
            serial += 1
    return Dataset(samples=tuple(samples), num_classes=cfg.num_classes, split=split)


def write_ppm(img: np.ndarray) -> bytes:
    """Encode a (3, H, W) image in [0, 1] as binary PPM (P6, maxval 255)."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"PPM needs a (3, H, W) image, got shape {img.shape}")
    _, h, w = img.shape
    u8 = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + np.moveaxis(u8, 0, -1).tobytes()


def _skip_ppm_whitespace(data: bytes, pos: int) -> int:
    n = len(data)
    while pos < n:
        b = data[pos]
        if b in b" \t\r\n":
            pos += 1
        elif b == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    return pos


def _read_ppm_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    pos = _skip_ppm_whitespace(data, pos)
    start = pos
    while pos < len(data) and data[pos : pos + 1].isdigit():
        pos += 1
    if pos == start:
        raise PpmError(f"expected {what} in PPM header", start)
    return int(data[start:pos]), pos


def read_ppm(data: bytes) -> np.ndarray:
    """Decode a binary PPM (P6) byte stream into a (3, H, W) image in [0, 1]."""
    if data[:2] != b"P6":
        raise PpmError("not a P6 PPM stream", 0)
    width, pos = _read_ppm_int(data, 2, "width")
    height, pos = _read_ppm_int(data, pos, "height")
    maxval, pos = _read_ppm_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise PpmError(f"bad dimensions {width}x{height}", pos)
    if maxval != 255:
        raise PpmError(f"unsupported maxval {maxval} (only 255)", pos)
    if pos >= len(data) or data[pos] not in b" \t\r\n":
        raise PpmError("missing whitespace after maxval", pos)
    pos += 1
    need = 3 * width * height
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise PpmError(
            f"truncated payload: expected {need} bytes, got {len(payload)}", pos)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return np.moveaxis(pixels, -1, 0).astype(np.float64) / 255.0


def _format_bool(value: bool) -> str:
    return "true" if value else "false"


def _parse_bool(text: str, line: int) -> bool:
    t = text.strip().lower()
    if t in ("true", "1"):
        return True
    if t in ("false", "0"):
        return False
    raise ManifestError(f"line {line}: cannot parse boolean {text!r}")


def write_manifest(datasets, out_dir) -> str:
    """Write PPM images plus a manifest.csv describing one or more datasets.

    Ground-truth columns are appended when every sample carries them; a mix of
    annotated and bare samples is refused.
    """
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    all_samples = [(ds, s) for ds in datasets for s in ds.samples]
    if not all_samples:
        raise ManifestError("nothing to write: no samples")
    with_truth = [s.true_quality is not None for _, s in all_samples]
    if any(with_truth) and not all(with_truth):
        raise ManifestError("ground-truth fields present on some samples but not all")
    include_truth = all(with_truth)

    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.csv")
    header = MANIFEST_COLUMNS + (GROUND_TRUTH_COLUMNS if include_truth else ())
    with open(manifest_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for ds, s in all_samples:
            rel_path = f"images/{s.id}.ppm"
            with open(os.path.join(out_dir, "images", f"{s.id}.ppm"), "wb") as img_fh:
                img_fh.write(write_ppm(s.image))
            row = [s.id, rel_path, str(s.label), ds.split]
            if include_truth:
                row.append(repr(float(s.true_quality)))
                row.append(_format_bool(bool(s.label_was_flipped)))
            fh.write(",".join(row) + "\n")
    return manifest_path


def read_manifest(path, split: str | None = None, num_classes: int | None = None) -> Dataset:
    """Load a manifest.csv back into a Dataset.

    With split=None the file must contain a single split; otherwise only rows
    of the requested split are kept. num_classes defaults to max label + 1.
    """
    base_dir = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError("empty manifest file") from None
        header = tuple(h.strip() for h in header)
        if header == MANIFEST_COLUMNS:
            has_truth = False
        elif header == MANIFEST_COLUMNS + GROUND_TRUTH_COLUMNS:
            has_truth = True
        else:
            raise ManifestError(
                f"line 1: bad header {header!r}; expected {MANIFEST_COLUMNS} "
                f"optionally followed by {GROUND_TRUTH_COLUMNS}")

        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ManifestError(
                    f"line {line_no}: expected {len(header)} fields, got {len(row)}")
            sid, rel_path, label_text, row_split = row[:4]
            try:
                label = int(label_text)
            except ValueError:
                raise ManifestError(
                    f"line {line_no}: cannot parse label {label_text!r}") from None
            true_quality = None
            flipped = None
            if has_truth:
                try:
                    true_quality = float(row[4])
                except ValueError:
                    raise ManifestError(
                        f"line {line_no}: cannot parse true_quality {row[4]!r}") from None
                flipped = _parse_bool(row[5], line_no)
            rows.append((line_no, sid, rel_path, label, row_split, true_quality, flipped))

    if split is None:
        splits = {r[4] for r in rows}
        if len(splits) > 1:
            raise ManifestError(
                f"manifest contains multiple splits {sorted(splits)}; pass split=...")
    else:
        rows = [r for r in rows if r[4] == split]

    samples = []
    max_label = -1
    for line_no, sid, rel_path, label, row_split, true_quality, flipped in rows:
        img_path = os.path.join(base_dir, rel_path)
        try:
            with open(img_path, "rb") as img_fh:
                image = read_ppm(img_fh.read())
        except FileNotFoundError:
            raise ManifestError(f"line {line_no}: image file not found: {rel_path}") from None
        except PpmError as exc:
            raise ManifestError(f"line {line_no}: bad image {rel_path}: {exc}") from None
        samples.append(Sample(sid, image, label, true_quality, flipped))
        max_label = max(max_label, label)

    if num_classes is None:
        num_classes = max_label + 1
    effective_split = split if split is not None else (rows[0][4] if rows else "train")
    return Dataset(samples=tuple(samples), num_classes=num_classes, split=effective_split)
