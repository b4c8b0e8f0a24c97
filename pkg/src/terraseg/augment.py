"""Seedable image/mask augmentation: flip, resized crop, normalisation, copy-paste.

Every random operation takes an explicit 64-bit seed and is a pure function of
(inputs, seed); parallel pipelines are expected to supply distinct seeds.
Copy-paste moves connected components of rare classes from a donor sample into
a recipient, copying image pixels and mask labels together so the pair stays
aligned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateWindow, DimensionMismatch, ValidationFailure, ZeroStd
from .resample import resize_image_bilinear, resize_nearest
from .schema import ClassSchema

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# 3x3 all-ones structuring element: 8-connectivity keeps thin diagonal
# structures (logs, stems) as single instances.
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)

RARE_CLASS_NAMES = ("Dry Bushes", "Flowers", "Logs")


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image, dtype=np.uint8)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DimensionMismatch(f"image must be (H, W, 3), got {self.image.shape}")
        if self.mask.shape != self.image.shape[:2]:
            raise DimensionMismatch(
                f"image is {self.image.shape[:2]}, mask is {self.mask.shape}")

    def copy(self) -> "Sample":
        return Sample(self.image.copy(), self.mask.copy())


@dataclass
class CopyPasteConfig:
    rare_classes: tuple[int, ...]
    probability: float = 0.5
    max_instances: int = 3
    min_instance_pixels: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        self.rare_classes = tuple(sorted(set(int(c) for c in self.rare_classes)))
        if not (0.0 <= self.probability <= 1.0):
            raise ValidationFailure(f"probability {self.probability} outside [0, 1]")
        if self.max_instances < 1:
            raise ValidationFailure("max_instances must be >= 1")
        if self.min_instance_pixels < 1:
            raise ValidationFailure("min_instance_pixels must be >= 1")


def default_rare_classes(schema: ClassSchema) -> tuple[int, ...]:
    return tuple(schema.indices_named(RARE_CLASS_NAMES))


@dataclass
class PastedInstance:
    class_index: int
    donor_bbox: tuple[int, int, int, int]  # top, left, height, width
    offset: tuple[int, int]                # row, col shift applied to donor coords
    pixels_pasted: int


@dataclass
class CopyPasteResult:
    sample: Sample
    pasted: bool
    no_rare_instances: bool = False
    instances: list[PastedInstance] = field(default_factory=list)


def hflip(s: Sample) -> Sample:
    """Mirror image and mask about the vertical axis."""
    return Sample(s.image[:, ::-1].copy(), s.mask[:, ::-1].copy())


def crop_window(src_hw: tuple[int, int], scale_range: tuple[float, float],
                seed: int) -> tuple[int, int, int, int]:
    """Deterministic (top, left, height, width) for a random resized crop.

    Window area is scale * source area with the source aspect ratio, clamped
    to the source bounds; the position is uniform over valid placements.
    """
    lo, hi = scale_range
    if lo > hi or lo <= 0:
        raise ValidationFailure(f"bad scale range [{lo}, {hi}]")
    h, w = src_hw
    rng = np.random.default_rng(seed)
    scale = rng.uniform(lo, hi)
    win_h = int(round(h * math.sqrt(scale)))
    win_w = int(round(w * math.sqrt(scale)))
    if win_h < 1 or win_w < 1:
        raise DegenerateWindow(
            f"scale {scale:.4f} yields a window smaller than one pixel")
    win_h = min(win_h, h)
    win_w = min(win_w, w)
    top = int(rng.integers(0, h - win_h + 1))
    left = int(rng.integers(0, w - win_w + 1))
    return top, left, win_h, win_w


def random_resized_crop(s: Sample, scale_range: tuple[float, float],
                        out_size: tuple[int, int], seed: int) -> Sample:
    """Crop a scale-sampled window and resample to ``out_size``.

    The same window is applied to image (bilinear) and mask (nearest), so the
    mask never gains values the window did not contain.
    """
    out_h, out_w = out_size
    if out_h < 1 or out_w < 1:
        raise ValidationFailure(f"out_size must be positive, got {out_size}")
    top, left, win_h, win_w = crop_window(s.mask.shape, scale_range, seed)
    image = s.image[top:top + win_h, left:left + win_w]
    mask = s.mask[top:top + win_h, left:left + win_w]
    return Sample(
        resize_image_bilinear(image, (out_h, out_w)),
        resize_nearest(mask, (out_h, out_w)),
    )


def normalize(image: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) float32: (pixel/255 - mean) / std per channel."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionMismatch(f"image must be (H, W, 3), got {image.shape}")
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != (3,) or std.shape != (3,):
        raise ValidationFailure("mean and std must each have three components")
    if (std == 0).any():
        raise ZeroStd("std components must be nonzero")
    out = (image.astype(np.float64) / 255.0 - mean) / std
    return np.moveaxis(out, 2, 0).astype(np.float32)


def _rare_components(mask: np.ndarray, cfg: CopyPasteConfig):
    """Connected components (8-connectivity) of rare classes, smallest first dropped."""
    components = []
    for cls in cfg.rare_classes:
        labels, count = ndimage.label(mask == cls, structure=_EIGHT_CONNECTED)
        for slc_idx, slc in enumerate(ndimage.find_objects(labels), start=1):
            if slc is None:
                continue
            footprint = labels[slc] == slc_idx
            size = int(footprint.sum())
            if size < cfg.min_instance_pixels:
                continue
            components.append((cls, slc, footprint, size))
    return components


def copy_paste(donor: Sample, recipient: Sample, cfg: CopyPasteConfig) -> CopyPasteResult:
    """Paste up to ``max_instances`` rare-class components from donor into recipient.

    Runs with probability ``cfg.probability`` (one uniform draw from the seeded
    generator); otherwise the recipient is returned unchanged. Paste offsets
    are uniform over positions that keep the component's bounding-box centre
    inside the recipient; anything hanging over the border is clipped. A donor
    without usable rare instances is flagged, not an error.
    """
    rng = np.random.default_rng(cfg.seed)
    if rng.random() >= cfg.probability:
        return CopyPasteResult(recipient, pasted=False)

    components = _rare_components(donor.mask, cfg)
    if not components:
        return CopyPasteResult(recipient, pasted=False, no_rare_instances=True)

    take = min(cfg.max_instances, len(components))
    chosen = rng.choice(len(components), size=take, replace=False)

    out = recipient.copy()
    rec_h, rec_w = out.mask.shape
    instances = []
    for comp_i in chosen:
        cls, slc, footprint, _size = components[int(comp_i)]
        top, left = slc[0].start, slc[1].start
        box_h, box_w = footprint.shape
        centre_r = top + (box_h - 1) // 2
        centre_c = left + (box_w - 1) // 2
        target_r = int(rng.integers(0, rec_h))
        target_c = int(rng.integers(0, rec_w))
        dy, dx = target_r - centre_r, target_c - centre_c

        rows, cols = np.nonzero(footprint)
        src_r = rows + top
        src_c = cols + left
        dst_r = src_r + dy
        dst_c = src_c + dx
        inb = (dst_r >= 0) & (dst_r < rec_h) & (dst_c >= 0) & (dst_c < rec_w)
        out.image[dst_r[inb], dst_c[inb]] = donor.image[src_r[inb], src_c[inb]]
        out.mask[dst_r[inb], dst_c[inb]] = cls
        instances.append(PastedInstance(
            class_index=int(cls),
            donor_bbox=(top, left, box_h, box_w),
            offset=(dy, dx),
            pixels_pasted=int(inb.sum()),
        ))
    return CopyPasteResult(out, pasted=True, instances=instances)
