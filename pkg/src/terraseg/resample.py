"""Deterministic image resampling with half-pixel centre alignment.

Hand-rolled so that mask (nearest) and image (bilinear) resampling share one
coordinate convention and outputs are bit-identical across platforms:
source coordinate of output pixel o is (o + 0.5) * src/out - 0.5.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationFailure


def _axis_coords(out_len: int, src_len: int) -> np.ndarray:
    if out_len < 1 or src_len < 1:
        raise ValidationFailure(f"resample sizes must be positive, got {src_len}->{out_len}")
    coords = (np.arange(out_len, dtype=np.float64) + 0.5) * (src_len / out_len) - 0.5
    return np.clip(coords, 0.0, src_len - 1.0)


def resize_bilinear(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an (H, W) or (H, W, K) float array; returns float64."""
    arr = np.asarray(arr, dtype=np.float64)
    src_h, src_w = arr.shape[:2]
    out_h, out_w = out_hw
    ys = _axis_coords(out_h, src_h)
    xs = _axis_coords(out_w, src_w)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    wy = (ys - y0).reshape(-1, 1)
    wx = (xs - x0).reshape(1, -1)
    if arr.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = arr[np.ix_(y0, x0)] * (1 - wx) + arr[np.ix_(y0, x1)] * wx
    bot = arr[np.ix_(y1, x0)] * (1 - wx) + arr[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def resize_nearest(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize; preserves dtype and never invents values.

    Halfway coordinates round up, matching the bilinear convention above.
    """
    arr = np.asarray(arr)
    src_h, src_w = arr.shape[:2]
    ys = np.floor(_axis_coords(out_hw[0], src_h) + 0.5).astype(np.int64)
    xs = np.floor(_axis_coords(out_hw[1], src_w) + 0.5).astype(np.int64)
    return arr[np.ix_(ys, xs)]


def resize_image_bilinear(image: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """uint8 (H, W, 3) bilinear resize with round-half-away-from-zero."""
    out = resize_bilinear(image.astype(np.float64), out_hw)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
