"""Probability-space post-processing.

Softmax bridging, test-time-augmentation merging, fully-connected CRF
mean-field refinement, per-pixel entropy/uncertainty statistics, Monte-Carlo
sample aggregation, and per-image difficulty ranking.

The CRF couples every pixel pair through two Gaussian kernels (spatial
smoothness and joint position/colour appearance) with Potts compatibility.
Small inputs run exact dense message passing; larger inputs switch to a
separable spatial convolution plus a 5-D bilateral-grid approximation of the
appearance kernel. Exactness is only claimed for the dense path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    DimensionMismatch,
    EmptyInput,
    EmptySampleList,
    EmptyViewList,
    InvalidProbabilities,
    NonFiniteInput,
    NormalizationViolation,
    NonFiniteValue,
    ShapeMismatch,
    ValidationFailure,
)
from .resample import resize_bilinear
from .tensorio import ProbTensor, TensorKind

UNARY_CLAMP = 1e-8
# Exact dense message passing up to this many pixels (64x64); the kernel
# matrix is N x N float64, so 4096 pixels costs ~134 MB transiently.
EXACT_PIXEL_LIMIT = 4096
_GRID_BLUR_RADIUS = 3


@dataclass
class CrfParams:
    iterations: int = 5
    w_smooth: float = 3.0
    theta_gamma: float = 3.0
    w_bilateral: float = 10.0
    theta_alpha: float = 80.0
    theta_beta: float = 13.0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValidationFailure("iterations must be >= 1")
        if min(self.theta_gamma, self.theta_alpha, self.theta_beta) <= 0:
            raise ValidationFailure("kernel widths (theta_*) must be > 0")
        if min(self.w_smooth, self.w_bilateral) < 0:
            raise ValidationFailure("kernel weights must be >= 0")


@dataclass
class UncertaintyReport:
    mean_confidence: float
    uncertain_fraction: float
    entropy_map: np.ndarray
    difficulty: float
    threshold: float
    entropy_ceiling: float

    def to_json_obj(self) -> dict:
        return {
            "mean_confidence": self.mean_confidence,
            "uncertain_fraction": self.uncertain_fraction,
            "difficulty": self.difficulty,
            "threshold": self.threshold,
            "entropy_mean": float(self.entropy_map.mean()),
            "entropy_max": float(self.entropy_map.max()),
            "entropy_ceiling": self.entropy_ceiling,
        }


def softmax(logits: ProbTensor) -> ProbTensor:
    """Per-pixel softmax over channels, with max subtraction for stability."""
    if not np.isfinite(logits.data).all():
        raise NonFiniteInput("logits contain NaN or infinite values")
    z = logits.data.astype(np.float64)
    z -= z.max(axis=0, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=0, keepdims=True)
    return ProbTensor(TensorKind.PROBABILITIES, z)


def _require_probabilities(t: ProbTensor, what: str = "tensor") -> np.ndarray:
    if t.kind is not TensorKind.PROBABILITIES:
        raise InvalidProbabilities(f"{what} must hold probabilities, not logits")
    try:
        t.validate()
    except (NormalizationViolation, NonFiniteValue) as exc:
        raise InvalidProbabilities(str(exc)) from exc
    return t.data.astype(np.float64)


# -- test-time augmentation --------------------------------------------------

VIEW_TRANSFORMS = ("identity", "hflip", "scale")


@dataclass
class TtaView:
    """One augmented prediction plus the transform that produced it."""

    tensor: ProbTensor
    transform: str = "identity"
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.transform not in VIEW_TRANSFORMS:
            raise ValidationFailure(
                f"transform must be one of {VIEW_TRANSFORMS}, got {self.transform!r}")
        if self.transform == "scale" and self.scale <= 0:
            raise ValidationFailure(f"scale must be > 0, got {self.scale}")


def tta_merge(views: list[TtaView], base_hw: tuple[int, int] | None = None) -> ProbTensor:
    """Average per-view probabilities after mapping each back to base geometry.

    The horizontal-flip view is flipped back; scaled views are resized per
    channel plane with bilinear interpolation. The mean is renormalised per
    pixel to absorb resampling drift.
    """
    if not views:
        raise EmptyViewList("need at least one view")
    if base_hw is None:
        for v in views:
            if v.transform != "scale":
                base_hw = (v.tensor.height, v.tensor.width)
                break
        else:
            raise ValidationFailure("base_hw required when every view is scaled")
    num_classes = views[0].tensor.num_classes
    total = np.zeros((num_classes, base_hw[0], base_hw[1]))
    for v in views:
        t = v.tensor if v.tensor.kind is TensorKind.PROBABILITIES else softmax(v.tensor)
        if t.num_classes != num_classes:
            raise DimensionMismatch(
                f"view has {t.num_classes} classes, expected {num_classes}")
        p = t.data.astype(np.float64)
        if v.transform == "hflip":
            p = p[:, :, ::-1]
        elif v.transform == "scale":
            p = np.stack([resize_bilinear(plane, base_hw) for plane in p])
            np.clip(p, 0.0, None, out=p)
        if p.shape[1:] != base_hw:
            raise DimensionMismatch(
                f"view maps to {p.shape[1:]}, base geometry is {base_hw}")
        total += p
    total /= len(views)
    total /= total.sum(axis=0, keepdims=True)
    return ProbTensor(TensorKind.PROBABILITIES, total)


# -- dense CRF ----------------------------------------------------------------

def _dense_kernel_matrix(image: np.ndarray, params: CrfParams) -> np.ndarray:
    """Combined (N, N) kernel: w_s * spatial + w_b * appearance, built row-chunked."""
    h, w, _ = image.shape
    n = h * w
    ys, xs = np.divmod(np.arange(n), w)
    pos = np.stack([ys, xs], axis=1).astype(np.float64)
    rgb = image.reshape(n, 3).astype(np.float64)
    pos_sq = (pos ** 2).sum(axis=1)
    rgb_sq = (rgb ** 2).sum(axis=1)
    kernel = np.empty((n, n))
    chunk = max(1, (2 ** 22) // max(n, 1))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d2 = pos_sq[lo:hi, None] + pos_sq[None, :] - 2.0 * (pos[lo:hi] @ pos.T)
        np.maximum(d2, 0.0, out=d2)
        block = params.w_smooth * np.exp(-d2 / (2.0 * params.theta_gamma ** 2))
        c2 = rgb_sq[lo:hi, None] + rgb_sq[None, :] - 2.0 * (rgb[lo:hi] @ rgb.T)
        np.maximum(c2, 0.0, out=c2)
        block += params.w_bilateral * np.exp(
            -d2 / (2.0 * params.theta_alpha ** 2) - c2 / (2.0 * params.theta_beta ** 2))
        kernel[lo:hi] = block
    return kernel


def _gauss_taps(theta: float, radius: int | None = None) -> np.ndarray:
    if radius is None:
        radius = max(1, int(np.ceil(4.0 * theta)))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-(k ** 2) / (2.0 * theta ** 2))


def _smooth_filter(planes: np.ndarray, theta: float) -> np.ndarray:
    """Truncated separable spatial Gaussian over (C, H, W), zero beyond edges."""
    taps = _gauss_taps(theta)
    out = ndimage.correlate1d(planes, taps, axis=1, mode="constant", cval=0.0)
    return ndimage.correlate1d(out, taps, axis=2, mode="constant", cval=0.0)


def _mean_field(unary: np.ndarray, message_fn, iterations: int) -> np.ndarray:
    """Run mean-field updates Q <- softmax(-unary + messages(Q))."""
    q = _softmax_cols(-unary)
    for _ in range(iterations):
        q = _softmax_cols(-unary + message_fn(q))
    return q


def _softmax_cols(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=0, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=0, keepdims=True)
    return z


def crf_refine(probs: ProbTensor, image: np.ndarray, params: CrfParams,
               exact_pixel_limit: int = EXACT_PIXEL_LIMIT) -> ProbTensor:
    """Fully-connected CRF mean-field refinement of per-pixel probabilities.

    Unary potentials are -log of the input probabilities (clamped at 1e-8);
    each iteration adds Potts-weighted Gaussian messages and renormalises via
    softmax, so per-pixel sums stay exactly 1.
    """
    p = _require_probabilities(probs, "crf input")
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionMismatch(f"image must be (H, W, 3), got {image.shape}")
    c, h, w = probs.data.shape
    if image.shape[:2] != (h, w):
        raise DimensionMismatch(f"tensor is {h}x{w}, image is {image.shape[:2]}")
    n = h * w
    unary = -np.log(np.clip(p.reshape(c, n), UNARY_CLAMP, None))

    if params.w_smooth == 0.0 and params.w_bilateral == 0.0:
        q = _softmax_cols(-unary)
        return ProbTensor(TensorKind.PROBABILITIES, q.reshape(c, h, w))

    if n <= exact_pixel_limit:
        kernel = _dense_kernel_matrix(image, params)
        self_weight = params.w_smooth + params.w_bilateral

        def messages(q: np.ndarray) -> np.ndarray:
            return q @ kernel - self_weight * q

    else:
        # Large-image path: kernels are symmetrically normalised by their
        # filtered all-ones response (the convention of reference CRF
        # implementations). This cancels the grid's multiplicative bias but
        # makes the path approximate; exactness is only claimed below the
        # dense limit.
        grid = _BilateralGridFilter(image, params.theta_alpha, params.theta_beta)
        ones = np.ones(n)
        inv_sqrt_b = 1.0 / np.sqrt(np.maximum(grid.filter(ones), 1e-12))
        smooth_norm = _smooth_filter(ones.reshape(1, h, w), params.theta_gamma)
        inv_sqrt_s = 1.0 / np.sqrt(np.maximum(smooth_norm.reshape(n), 1e-12))

        def messages(q: np.ndarray) -> np.ndarray:
            scaled = (q * inv_sqrt_s[None, :]).reshape(c, h, w)
            smooth = _smooth_filter(scaled, params.theta_gamma).reshape(c, n)
            smooth *= inv_sqrt_s[None, :]
            smooth -= q * (inv_sqrt_s ** 2)[None, :]
            bilateral = np.stack([
                grid.filter(q[i] * inv_sqrt_b) for i in range(c)
            ]) * inv_sqrt_b[None, :]
            bilateral -= q * (inv_sqrt_b ** 2)[None, :]
            return params.w_smooth * smooth + params.w_bilateral * bilateral

    q = _mean_field(unary, messages, params.iterations)
    return ProbTensor(TensorKind.PROBABILITIES, q.reshape(c, h, w))


class _BilateralGridFilter:
    """5-D grid approximation of the joint position/colour Gaussian kernel.

    Pixels splat multilinearly into a (y, x, r, g, b) lattice sampled at one
    kernel sigma per axis, the lattice is blurred with a unit-sigma Gaussian,
    and values are sliced back. Geometry is computed once and reused across
    classes and mean-field iterations.
    """

    def __init__(self, image: np.ndarray, theta_alpha: float, theta_beta: float):
        h, w, _ = image.shape
        n = h * w
        ys, xs = np.divmod(np.arange(n), w)
        rgb = image.reshape(n, 3).astype(np.float64)
        feats = np.stack([
            ys / theta_alpha,
            xs / theta_alpha,
            rgb[:, 0] / theta_beta,
            rgb[:, 1] / theta_beta,
            rgb[:, 2] / theta_beta,
        ], axis=1)
        base = np.floor(feats).astype(np.int64)
        frac = feats - base
        mins = base.min(axis=0)
        pad = _GRID_BLUR_RADIUS
        offset = pad - mins
        shape = base.max(axis=0) - mins + 2 * pad + 2
        self.shape = tuple(int(s) for s in shape)
        self.size = int(np.prod(shape))
        strides = np.ones(5, dtype=np.int64)
        for d in range(3, -1, -1):
            strides[d] = strides[d + 1] * shape[d + 1]
        anchored = base + offset
        corners = []
        weights = []
        for bits in itertools.product((0, 1), repeat=5):
            bits_arr = np.asarray(bits, dtype=np.int64)
            idx = ((anchored + bits_arr) * strides).sum(axis=1)
            wgt = np.prod(np.where(bits_arr, frac, 1.0 - frac), axis=1)
            corners.append(idx)
            weights.append(wgt)
        self.corner_idx = np.stack(corners)
        self.corner_w = np.stack(weights)
        self.blur_taps = _gauss_taps(1.0, radius=_GRID_BLUR_RADIUS)

    def filter(self, values: np.ndarray) -> np.ndarray:
        """Approximate sum_j exp(-|f_i - f_j|^2 / 2) * values[j] for every pixel i."""
        splat = (values[None, :] * self.corner_w).ravel()
        grid = np.bincount(self.corner_idx.ravel(), weights=splat, minlength=self.size)
        grid = grid.reshape(self.shape)
        for axis in range(5):
            grid = ndimage.correlate1d(grid, self.blur_taps, axis=axis,
                                       mode="constant", cval=0.0)
        flat = grid.ravel()
        return (flat[self.corner_idx] * self.corner_w).sum(axis=0)


# -- uncertainty --------------------------------------------------------------

def uncertainty(probs: ProbTensor, threshold: float = 0.5) -> UncertaintyReport:
    """Entropy and confidence statistics for one probability tensor.

    Per pixel: entropy H = -sum_c p ln p (nats, 0 ln 0 = 0), normalised by
    ln C; a pixel is uncertain when its normalised entropy exceeds
    ``threshold``. difficulty = 0.5 * uncertain_fraction +
    0.5 * (1 - mean_confidence).
    """
    if not (0.0 <= threshold <= 1.0):
        raise ValidationFailure(f"threshold {threshold} outside [0, 1]")
    p = _require_probabilities(probs, "uncertainty input")
    entropy = -np.where(p > 0.0, p * np.log(np.clip(p, 1e-300, None)), 0.0).sum(axis=0)
    ceiling = float(np.log(probs.num_classes)) if probs.num_classes > 1 else 0.0
    normalised = entropy / ceiling if ceiling > 0 else np.zeros_like(entropy)
    mean_confidence = float(p.max(axis=0).mean())
    uncertain_fraction = float((normalised > threshold).mean())
    return UncertaintyReport(
        mean_confidence=mean_confidence,
        uncertain_fraction=uncertain_fraction,
        entropy_map=entropy,
        difficulty=0.5 * uncertain_fraction + 0.5 * (1.0 - mean_confidence),
        threshold=threshold,
        entropy_ceiling=ceiling,
    )


def entropy_heatmap(report: UncertaintyReport) -> np.ndarray:
    """(H, W) uint8 heatmap: entropy 0 maps to black, ln C to white."""
    if report.entropy_ceiling <= 0:
        return np.zeros_like(report.entropy_map, dtype=np.uint8)
    scaled = report.entropy_map / report.entropy_ceiling
    return np.clip(np.floor(scaled * 255.0 + 0.5), 0, 255).astype(np.uint8)


def mc_aggregate(samples: list[ProbTensor], threshold: float = 0.5):
    """Aggregate Monte-Carlo forward passes.

    Returns (mean probability tensor, predictive UncertaintyReport computed on
    the mean, per-pixel variance map). The variance is the across-sample
    population variance of each class probability, averaged over classes.
    """
    if not samples:
        raise EmptySampleList("need at least one sample tensor")
    shape = samples[0].data.shape
    total = np.zeros(shape)
    total_sq = np.zeros(shape)
    for s in samples:
        if s.data.shape != shape:
            raise ShapeMismatch(f"sample shape {s.data.shape} != {shape}")
        p = _require_probabilities(s, "sample")
        total += p
        total_sq += p * p
    t = len(samples)
    mean = total / t
    variance = (total_sq / t - mean ** 2).mean(axis=0)
    np.maximum(variance, 0.0, out=variance)
    mean_tensor = ProbTensor(TensorKind.PROBABILITIES, mean)
    return mean_tensor, uncertainty(mean_tensor, threshold), variance


# -- difficulty ranking -------------------------------------------------------

BAND_WELL = "well_predicted"
BAND_MIDDLE = "middle"
BAND_HIGH = "high_uncertainty"

DEFAULT_LOW_BAND = 0.15
DEFAULT_HIGH_BAND = 0.30


@dataclass
class RankedImage:
    image_id: str
    difficulty: float
    band: str


@dataclass
class DifficultyRanking:
    entries: list[RankedImage]
    counts: dict[str, int] = field(default_factory=dict)
    low_band: float = DEFAULT_LOW_BAND
    high_band: float = DEFAULT_HIGH_BAND

    def to_json_obj(self) -> dict:
        total = len(self.entries)
        return {
            "total_images": total,
            "thresholds": {"low": self.low_band, "high": self.high_band},
            "bands": {
                band: {
                    "count": self.counts[band],
                    "percent": 100.0 * self.counts[band] / total,
                }
                for band in (BAND_WELL, BAND_MIDDLE, BAND_HIGH)
            },
            "ranking": [
                {"image_id": e.image_id, "difficulty": e.difficulty, "band": e.band}
                for e in self.entries
            ],
        }


def rank_difficulty(reports: list[tuple[str, UncertaintyReport]],
                    low_band: float = DEFAULT_LOW_BAND,
                    high_band: float = DEFAULT_HIGH_BAND) -> DifficultyRanking:
    """Sort images hardest-first and bucket them into difficulty bands.

    Band rule: difficulty < low_band is well-predicted, >= high_band is
    high-uncertainty, the rest sit in the middle. Ties order by image id.
    """
    if not reports:
        raise EmptyInput("no reports to rank")
    if low_band > high_band:
        raise ValidationFailure("low_band must not exceed high_band")

    def band_of(d: float) -> str:
        if d < low_band:
            return BAND_WELL
        if d >= high_band:
            return BAND_HIGH
        return BAND_MIDDLE

    entries = [RankedImage(image_id, r.difficulty, band_of(r.difficulty))
               for image_id, r in reports]
    entries.sort(key=lambda e: (-e.difficulty, e.image_id))
    counts = {BAND_WELL: 0, BAND_MIDDLE: 0, BAND_HIGH: 0}
    for e in entries:
        counts[e.band] += 1
    return DifficultyRanking(entries, counts, low_band, high_band)
