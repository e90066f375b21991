"""Synthetic segmentation data and train-time augmentation.

The generator draws 1-3 soft-edged ellipses ("polyps") over a textured
background. The mask is the exact ellipse interior; only the image gets
the soft edge. A contrast parameter controls how far polyp appearance
departs from the background: at 0 the image carries no trace of the
mask (camouflage limit).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .interp import resize_bilinear_hw, resize_nearest_hw


@dataclass
class SegmentationSample:
    """One image/mask pair. Image is (3, H, W) in [0,1]; mask is (H, W) in {0,1}."""

    id: str
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=np.float32)
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DimensionError("channels", f"image must be (3, H, W), got {self.image.shape}")
        if self.mask.shape != self.image.shape[1:]:
            raise DimensionError(
                "height", f"mask {self.mask.shape} does not match image {self.image.shape[1:]}"
            )
        vals = np.unique(self.mask)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise ValueError(f"mask must contain only 0 and 1, found values {vals[:8]}")


def _ellipse_field(size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Return (exact interior mask, soft edge weight) for one random ellipse."""
    cy, cx = rng.uniform(0.25 * size, 0.75 * size, size=2)
    a = rng.uniform(0.08 * size, 0.20 * size)
    b = rng.uniform(0.08 * size, 0.20 * size)
    theta = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = (dx * np.cos(theta) + dy * np.sin(theta)) / a
    v = (-dx * np.sin(theta) + dy * np.cos(theta)) / b
    m = u * u + v * v
    interior = (m <= 1.0).astype(np.float32)
    soft = np.clip((1.15 - m) / 0.30, 0.0, 1.0).astype(np.float32)
    return interior, soft


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    """Textured 3-channel background: smooth low-res field plus fine grain."""
    coarse = rng.uniform(-1.0, 1.0, size=(max(2, size // 8), max(2, size // 8)))
    field = resize_bilinear_hw(coarse, size, size)
    base = rng.uniform(0.40, 0.55, size=3)
    chans = []
    for c in range(3):
        fine = rng.uniform(-1.0, 1.0, size=(size, size))
        chans.append(base[c] + 0.08 * field + 0.02 * fine)
    return np.clip(np.stack(chans), 0.0, 1.0).astype(np.float32)


def make_synthetic_dataset(
    n: int, size: int, seed: int, contrast: float = 0.35
) -> list[SegmentationSample]:
    """Deterministic list of n size x size polyp samples."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if size < 16:
        raise DimensionError("height", f"size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        # rejection keeps the generator contract: nonempty, < 50% cover
        while True:
            image = _background(size, rng)
            mask = np.zeros((size, size), dtype=np.float32)
            for _ in range(int(rng.integers(1, 4))):
                interior, soft = _ellipse_field(size, rng)
                tint = rng.uniform(0.15, 0.35, size=3)
                sign = -1.0 if rng.uniform() < 0.7 else 1.0
                shift = sign * contrast * tint[:, None, None] * soft[None, :, :]
                image = np.clip(image + shift, 0.0, 1.0)
                mask = np.maximum(mask, interior)
            cover = mask.mean()
            if 0.0 < cover < 0.5:
                break
        samples.append(SegmentationSample(id=f"synth_{i:04d}", image=image, mask=mask))
    return samples


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    scales: tuple[float, ...] = (0.75, 1.0, 1.25)


def augment(sample: SegmentationSample, config: AugmentConfig, rng: np.random.Generator) -> SegmentationSample:
    """Random flips plus one multi-scale resize, crop/pad back to size.

    Image and mask transform identically; image resizes bilinearly, the
    mask by nearest neighbor so it stays strictly binary. Draw order is
    fixed (hflip, vflip, scale) for reproducibility.
    """
    image, mask = sample.image, sample.mask
    if rng.uniform() < config.flip_prob:
        image, mask = image[:, :, ::-1], mask[:, ::-1]
    if rng.uniform() < config.flip_prob:
        image, mask = image[:, ::-1, :], mask[::-1, :]
    scale = config.scales[int(rng.integers(0, len(config.scales)))] if config.scales else 1.0
    if scale != 1.0:
        h, w = mask.shape
        nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
        image = np.stack([resize_bilinear_hw(ch, nh, nw) for ch in image]).astype(np.float32)
        mask = resize_nearest_hw(mask, nh, nw)
        image = _fit_hw(image, h, w)
        mask = _fit_hw(mask[None], h, w)[0]
    return SegmentationSample(id=sample.id, image=np.ascontiguousarray(image), mask=np.ascontiguousarray(mask))


def _fit_hw(stack: np.ndarray, h: int, w: int) -> np.ndarray:
    """Center-crop or zero-pad a (C, h', w') stack back to (C, h, w)."""
    _, ch, cw = stack.shape
    if ch > h:
        top = (ch - h) // 2
        stack = stack[:, top : top + h, :]
    if cw > w:
        left = (cw - w) // 2
        stack = stack[:, :, left : left + w]
    _, ch, cw = stack.shape
    if ch < h or cw < w:
        pt, pl = (h - ch) // 2, (w - cw) // 2
        stack = np.pad(stack, ((0, 0), (pt, h - ch - pt), (pl, w - cw - pl)))
    return stack


def batch_images(samples: list[SegmentationSample]) -> np.ndarray:
    """Stack sample images into a (B, 3, H, W) float32 batch."""
    return np.stack([s.image for s in samples]).astype(np.float32)


def batch_masks(samples: list[SegmentationSample]) -> np.ndarray:
    """Stack sample masks into a (B, 1, H, W) float32 batch."""
    return np.stack([s.mask[None] for s in samples]).astype(np.float32)
