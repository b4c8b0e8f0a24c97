"""Streaming segmentation metrics over class-index masks.

A ``ConfusionAccumulator`` ingests (ground truth, prediction) mask pairs one
image at a time; accumulators from parallel shards merge by element-wise
addition, so sharded evaluation is exact. ``finalize`` turns counts into
per-class IoU, mean IoU (with named exclusion sets), pixel accuracy, class
frequencies, and the row-normalised confusion matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyAccumulator, IndexOutOfRange, ValidationFailure
from .schema import IGNORE_INDEX, ClassSchema

# Mean IoU excluding the two dominant classes is reported alongside the
# all-class mean by default.
DEFAULT_EXCLUSIONS: tuple[tuple[str, ...], ...] = (("Sky", "Landscape"),)


class ConfusionAccumulator:
    """C x C uint64 pixel counts; rows are ground truth, columns predictions."""

    def __init__(self, num_classes: int, ignore_index: int = IGNORE_INDEX):
        if num_classes < 1:
            raise ValidationFailure(f"need at least one class, got {num_classes}")
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.counts = np.zeros((num_classes, num_classes), dtype=np.uint64)
        self.pixels_seen = 0

    def add(self, gt: np.ndarray, pred: np.ndarray) -> "ConfusionAccumulator":
        gt = np.asarray(gt)
        pred = np.asarray(pred)
        if gt.shape != pred.shape:
            raise DimensionMismatch(f"gt is {gt.shape}, pred is {pred.shape}")
        gt = gt.ravel()
        pred = pred.ravel()
        keep = gt != self.ignore_index
        if not keep.all():
            gt = gt[keep]
            pred = pred[keep]
        if gt.size == 0:
            return self
        c = self.num_classes
        if int(gt.max()) >= c or int(pred.max()) >= c:
            raise IndexOutOfRange(
                f"mask index out of range for {c} classes "
                f"(gt max {int(gt.max())}, pred max {int(pred.max())})")
        flat = gt.astype(np.int64) * c + pred.astype(np.int64)
        self.counts += np.bincount(flat, minlength=c * c).reshape(c, c).astype(np.uint64)
        self.pixels_seen += gt.size
        return self

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        if other.num_classes != self.num_classes:
            raise DimensionMismatch(
                f"cannot merge accumulators with {self.num_classes} and "
                f"{other.num_classes} classes")
        merged = ConfusionAccumulator(self.num_classes, self.ignore_index)
        merged.counts = self.counts + other.counts
        merged.pixels_seen = self.pixels_seen + other.pixels_seen
        return merged

    def transposed(self) -> "ConfusionAccumulator":
        out = ConfusionAccumulator(self.num_classes, self.ignore_index)
        out.counts = self.counts.T.copy()
        out.pixels_seen = self.pixels_seen
        return out


def accumulate(acc: ConfusionAccumulator, gt: np.ndarray,
               pred: np.ndarray) -> ConfusionAccumulator:
    """Fold one mask pair into ``acc`` (single pass; ignore-index pixels skipped)."""
    return acc.add(gt, pred)


def merge(a: ConfusionAccumulator, b: ConfusionAccumulator) -> ConfusionAccumulator:
    return a.merge(b)


@dataclass
class MetricsReport:
    class_names: tuple[str, ...]
    per_class_iou: list[float | None]
    miou_all: float
    miou_excluding: dict[str, float | None]
    pixel_accuracy: float
    class_frequency: list[float]
    confusion_row_normalised: list[list[float]]
    top_confusions: list[tuple[int, int, int]] = field(default_factory=list)


def exclusion_key(names) -> str:
    return "+".join(sorted(names))


def finalize(acc: ConfusionAccumulator, schema: ClassSchema,
             exclusions=DEFAULT_EXCLUSIONS) -> MetricsReport:
    """Reduce counts to ratios.

    IoU_c = diag / (row + col - diag); classes with empty union are marked
    absent (None) and excluded from every mean. Exclusion sets are given as
    class-name collections and reported under a sorted joined key.
    """
    if acc.pixels_seen == 0:
        raise EmptyAccumulator("no pixels accumulated")
    if acc.num_classes != schema.num_classes:
        raise DimensionMismatch(
            f"accumulator has {acc.num_classes} classes, schema {schema.num_classes}")
    counts = acc.counts.astype(np.float64)
    row = counts.sum(axis=1)
    col = counts.sum(axis=0)
    diag = np.diag(counts)
    union = row + col - diag
    present = union > 0
    iou = np.zeros(acc.num_classes)
    np.divide(diag, union, out=iou, where=present)

    per_class = [float(iou[c]) if present[c] else None for c in range(acc.num_classes)]
    miou_all = float(iou[present].mean())

    miou_excluding: dict[str, float | None] = {}
    for names in exclusions:
        excluded = np.zeros(acc.num_classes, dtype=bool)
        excluded[schema.indices_named(names)] = True
        keep = present & ~excluded
        miou_excluding[exclusion_key(names)] = float(iou[keep].mean()) if keep.any() else None

    row_norm = np.zeros_like(counts)
    np.divide(counts, row[:, None], out=row_norm, where=row[:, None] > 0)

    return MetricsReport(
        class_names=schema.names,
        per_class_iou=per_class,
        miou_all=miou_all,
        miou_excluding=miou_excluding,
        pixel_accuracy=float(diag.sum() / acc.pixels_seen),
        class_frequency=(row / acc.pixels_seen).tolist(),
        confusion_row_normalised=row_norm.tolist(),
    )


def top_confusions(acc: ConfusionAccumulator, k: int) -> list[tuple[int, int, int]]:
    """Rank unordered class pairs by symmetric confused-pixel count.

    score{a,b} = counts[a][b] + counts[b][a]; descending, ties broken by
    (min index, max index) ascending.
    """
    if k < 1:
        raise ValidationFailure(f"k must be >= 1, got {k}")
    c = acc.num_classes
    pairs = []
    for a in range(c):
        for b in range(a + 1, c):
            score = int(acc.counts[a, b]) + int(acc.counts[b, a])
            pairs.append((a, b, score))
    pairs.sort(key=lambda p: (-p[2], p[0], p[1]))
    return pairs[:k]


def build_report(acc: ConfusionAccumulator, schema: ClassSchema,
                 exclusions=DEFAULT_EXCLUSIONS, top_k: int = 5) -> MetricsReport:
    report = finalize(acc, schema, exclusions)
    report.top_confusions = top_confusions(acc, top_k)
    return report


def report_to_json_obj(report: MetricsReport) -> dict:
    return {
        "per_class_iou": report.per_class_iou,
        "miou_all": report.miou_all,
        "miou_excluding": report.miou_excluding,
        "pixel_accuracy": report.pixel_accuracy,
        "class_frequency": report.class_frequency,
        "confusion_row_normalised": report.confusion_row_normalised,
        "top_confusions": [
            {
                "class_a": report.class_names[a],
                "class_b": report.class_names[b],
                "pixels": pixels,
            }
            for a, b, pixels in report.top_confusions
        ],
    }


def report_to_csv(report: MetricsReport) -> str:
    lines = ["index,name,iou,frequency"]
    for i, name in enumerate(report.class_names):
        iou = report.per_class_iou[i]
        iou_text = "" if iou is None else f"{iou:.6f}"
        lines.append(f"{i},{name},{iou_text},{report.class_frequency[i]:.6f}")
    return "\n".join(lines) + "\n"
