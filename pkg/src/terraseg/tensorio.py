"""Bit-exact codecs for label masks, probability tensors, and RGB images.

Label masks travel as 8-bit grayscale PNGs of raw annotation values (or RGB
palette PNGs for display). Probability/logit tensors use the little-endian
"TST1" container so any exporter can comply without an array-library
dependency:

    magic "TST1" | u8 version=1 | u8 kind (0=logits, 1=probabilities) |
    u16 reserved=0 | u32 C | u32 H | u32 W |
    C*H*W float32, class-major, row-major within each class plane
"""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    BadMagic,
    CorruptPng,
    DimensionMismatch,
    IndexOutOfRange,
    NonFiniteValue,
    NormalizationViolation,
    NotGrayscale,
    ShapeOverflow,
    TruncatedPayload,
    UnknownRawValue,
    ValidationFailure,
    VersionUnsupported,
)
from .schema import IGNORE_INDEX, ClassSchema

TENSOR_MAGIC = b"TST1"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sBBHIII")
# Refuse tensors over 2**28 elements (1 GiB of float32) outright.
MAX_TENSOR_ELEMENTS = 2 ** 28
PROB_SUM_TOLERANCE = 1e-4


class TensorKind(enum.Enum):
    LOGITS = 0
    PROBABILITIES = 1


class MaskMode(enum.Enum):
    RAW_VALUES = "raw"
    PALETTE_COLOR = "palette"


@dataclass
class ProbTensor:
    """C-major (C, H, W) grid of logits or normalised probabilities.

    The wire format is float32; in memory, float64 data produced by numeric
    operations is kept as-is and only cast down when written.
    """

    kind: TensorKind
    data: np.ndarray

    def __post_init__(self) -> None:
        dtype = self.data.dtype if isinstance(self.data, np.ndarray) else None
        keep = np.float64 if dtype == np.float64 else np.float32
        self.data = np.ascontiguousarray(self.data, dtype=keep)
        if self.data.ndim != 3:
            raise ShapeOverflow(f"tensor must be (C, H, W), got shape {self.data.shape}")

    @property
    def num_classes(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def validate(self) -> "ProbTensor":
        if not np.isfinite(self.data).all():
            raise NonFiniteValue("tensor contains NaN or infinite values")
        if self.kind is TensorKind.PROBABILITIES:
            if self.data.min() < 0.0 or self.data.max() > 1.0:
                raise NormalizationViolation("probabilities must lie in [0, 1]")
            sums = self.data.sum(axis=0, dtype=np.float64)
            off = np.abs(sums - 1.0).max() if sums.size else 0.0
            if off > PROB_SUM_TOLERANCE:
                raise NormalizationViolation(
                    f"per-pixel channel sums deviate from 1 by up to {off:.3g} "
                    f"(tolerance {PROB_SUM_TOLERANCE})")
        return self


def read_tensor(data: bytes) -> ProbTensor:
    """Decode a TST1 byte buffer; bit-exact inverse of ``write_tensor``."""
    if len(data) < _HEADER.size:
        raise TruncatedPayload(f"need {_HEADER.size} header bytes, got {len(data)}")
    magic, version, kind_byte, _reserved, c, h, w = _HEADER.unpack_from(data)
    if magic != TENSOR_MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != TENSOR_VERSION:
        raise VersionUnsupported(f"tensor format version {version} unsupported")
    try:
        kind = TensorKind(kind_byte)
    except ValueError:
        raise VersionUnsupported(f"unknown tensor kind byte {kind_byte}") from None
    if min(c, h, w) == 0 or c * h * w > MAX_TENSOR_ELEMENTS:
        raise ShapeOverflow(f"invalid tensor shape C={c} H={h} W={w}")
    want = _HEADER.size + 4 * c * h * w
    if len(data) != want:
        raise TruncatedPayload(f"payload is {len(data)} bytes, expected {want}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(c, h, w)
    return ProbTensor(kind, values.copy()).validate()


def write_tensor(t: ProbTensor) -> bytes:
    """Encode to TST1 bytes; identical input yields identical bytes on any platform."""
    t.validate()
    c, h, w = t.data.shape
    if c * h * w > MAX_TENSOR_ELEMENTS:
        raise ShapeOverflow(f"invalid tensor shape C={c} H={h} W={w}")
    header = _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, t.kind.value, 0, c, h, w)
    return header + np.ascontiguousarray(t.data, dtype="<f4").tobytes()


def _open_png(data: bytes) -> Image.Image:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
        return img
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise CorruptPng(f"cannot decode image: {exc}") from exc


def decode_mask(data: bytes, schema: ClassSchema) -> np.ndarray:
    """8-bit grayscale PNG of raw annotation values -> (H, W) uint8 class indices."""
    img = _open_png(data)
    if img.mode != "L":
        raise NotGrayscale(f"mask PNG must be single-channel 8-bit, got mode {img.mode!r}")
    raw = np.asarray(img, dtype=np.uint8)
    mapped = schema.raw_to_index[raw]
    unknown = mapped == 0xFFFF
    if unknown.any():
        flat = int(np.flatnonzero(unknown)[0])
        coord = (flat // raw.shape[1], flat % raw.shape[1])
        raise UnknownRawValue(int(raw[coord]), coord)
    return mapped.astype(np.uint8)


def encode_mask(label_map: np.ndarray, schema: ClassSchema,
                mode: MaskMode = MaskMode.RAW_VALUES) -> bytes:
    """(H, W) class indices -> PNG bytes. RAW_VALUES inverts decode_mask exactly."""
    label_map = _as_label_map(label_map)
    _check_indices(label_map, schema)
    if mode is MaskMode.RAW_VALUES:
        lut = np.zeros(256, dtype=np.uint8)
        lut[: schema.num_classes] = schema.index_to_raw
        if schema.ignore_value is not None:
            lut[IGNORE_INDEX] = schema.ignore_value
        out = Image.fromarray(lut[label_map], mode="L")
    else:
        palette = np.zeros((256, 3), dtype=np.uint8)
        palette[: schema.num_classes] = schema.palette
        out = Image.fromarray(palette[label_map], mode="RGB")
    buf = io.BytesIO()
    out.save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> np.ndarray:
    """Decode an RGB image (PNG or JPEG) to an (H, W, 3) uint8 array."""
    img = _open_png(data)
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.uint8)


def encode_image(image: np.ndarray) -> bytes:
    """(H, W, 3) uint8 -> PNG bytes."""
    image = _as_rgb_image(image)
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def encode_gray8(values: np.ndarray) -> bytes:
    """(H, W) uint8 -> 8-bit grayscale PNG bytes."""
    arr = np.ascontiguousarray(values, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def encode_gray16(values: np.ndarray) -> bytes:
    """(H, W) uint16 -> 16-bit grayscale PNG bytes."""
    arr = np.ascontiguousarray(values, dtype=np.uint16)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def decode_gray16(data: bytes) -> np.ndarray:
    """16-bit grayscale PNG bytes -> (H, W) uint16."""
    img = _open_png(data)
    if img.mode not in ("I;16", "I"):
        raise NotGrayscale(f"expected 16-bit grayscale PNG, got mode {img.mode!r}")
    return np.asarray(img, dtype=np.uint16)


def render_overlay(image: np.ndarray, label_map: np.ndarray, schema: ClassSchema,
                   alpha: float) -> np.ndarray:
    """Alpha-blend palette colours over an RGB image.

    out = round((1 - alpha) * image + alpha * palette(map)), rounding half away
    from zero, identical on every platform.
    """
    image = _as_rgb_image(image)
    label_map = _as_label_map(label_map)
    if image.shape[:2] != label_map.shape:
        raise DimensionMismatch(
            f"image is {image.shape[:2]}, mask is {label_map.shape}")
    if not (0.0 <= alpha <= 1.0):
        raise ValidationFailure(f"alpha {alpha} outside [0, 1]")
    _check_indices(label_map, schema)
    palette = np.zeros((256, 3), dtype=np.uint8)
    palette[: schema.num_classes] = schema.palette
    colored = palette[label_map].astype(np.float64)
    blended = (1.0 - alpha) * image.astype(np.float64) + alpha * colored
    # blended >= 0, so floor(x + 0.5) rounds half away from zero
    return np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8)


def _as_label_map(label_map: np.ndarray) -> np.ndarray:
    arr = np.asarray(label_map)
    if arr.ndim != 2:
        raise DimensionMismatch(f"label map must be 2-D, got shape {arr.shape}")
    return arr.astype(np.uint8, copy=False)


def _as_rgb_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionMismatch(f"RGB image must be (H, W, 3), got shape {arr.shape}")
    return arr.astype(np.uint8, copy=False)


def _check_indices(label_map: np.ndarray, schema: ClassSchema) -> None:
    values = label_map[label_map != IGNORE_INDEX] if label_map.size else label_map
    if values.size and int(values.max()) >= schema.num_classes:
        raise IndexOutOfRange(
            f"label map holds index {int(values.max())} but schema has "
            f"{schema.num_classes} classes")
