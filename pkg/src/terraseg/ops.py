"""Byte-level operations shared by the CLI and the HTTP service.

Each function consumes raw file bytes and returns canonical output bytes, so
both front ends run literally the same code path and their outputs can be
compared byte for byte.
"""

from __future__ import annotations

import json
from typing import Iterable

import numpy as np

from . import costmap, loss, metrics, postprocess, tensorio
from .errors import ValidationFailure
from .jsonio import canonical_json_bytes
from .schema import ClassSchema


def metrics_report_bytes(schema: ClassSchema,
                         pairs: Iterable[tuple[bytes, bytes]],
                         exclusions=metrics.DEFAULT_EXCLUSIONS,
                         top_k: int = 5) -> bytes:
    """Accumulate (gt PNG, pred PNG) pairs and render the canonical report."""
    acc = metrics.ConfusionAccumulator(schema.num_classes)
    for gt_png, pred_png in pairs:
        gt = tensorio.decode_mask(gt_png, schema)
        pred = tensorio.decode_mask(pred_png, schema)
        acc.add(gt, pred)
    report = metrics.build_report(acc, schema, exclusions, top_k)
    return canonical_json_bytes(metrics.report_to_json_obj(report))


def metrics_report_csv(schema: ClassSchema,
                       pairs: Iterable[tuple[bytes, bytes]],
                       exclusions=metrics.DEFAULT_EXCLUSIONS,
                       top_k: int = 5) -> bytes:
    acc = metrics.ConfusionAccumulator(schema.num_classes)
    for gt_png, pred_png in pairs:
        acc.add(tensorio.decode_mask(gt_png, schema), tensorio.decode_mask(pred_png, schema))
    report = metrics.build_report(acc, schema, exclusions, top_k)
    return metrics.report_to_csv(report).encode("utf-8")


def confusions_bytes(schema: ClassSchema, pairs: Iterable[tuple[bytes, bytes]],
                     k: int) -> bytes:
    acc = metrics.ConfusionAccumulator(schema.num_classes)
    for gt_png, pred_png in pairs:
        acc.add(tensorio.decode_mask(gt_png, schema), tensorio.decode_mask(pred_png, schema))
    ranked = metrics.top_confusions(acc, k)
    return canonical_json_bytes({
        "top_confusions": [
            {"class_a": schema.names[a], "class_b": schema.names[b], "pixels": n}
            for a, b, n in ranked
        ]
    })


def loss_report_bytes(schema: ClassSchema, logits_tst1: bytes, mask_png: bytes,
                      lambda_ce: float = loss.DEFAULT_LAMBDA_CE,
                      lambda_dice: float = loss.DEFAULT_LAMBDA_DICE,
                      epsilon: float = loss.DEFAULT_EPSILON,
                      ce_normalisation: str = "weighted_mean",
                      dice_class_mode: str = "present") -> bytes:
    logits = tensorio.read_tensor(logits_tst1)
    gt = tensorio.decode_mask(mask_png, schema)
    breakdown = loss.combined_loss(logits, gt, schema, lambda_ce, lambda_dice,
                                   epsilon, ce_normalisation, dice_class_mode)
    return canonical_json_bytes(breakdown.to_json_obj())


def grad_check_bytes(schema: ClassSchema, logits_tst1: bytes, mask_png: bytes,
                     step: float = 1e-3, tolerance: float = 1e-4) -> tuple[bytes, bool]:
    logits = tensorio.read_tensor(logits_tst1)
    gt = tensorio.decode_mask(mask_png, schema)
    analytic = loss.combined_loss_grad(logits, gt, schema)
    fd = loss.finite_difference_grad(logits, gt, schema, step=step)
    denom = np.maximum(np.abs(fd), 1e-6)
    max_rel = float((np.abs(analytic - fd) / denom).max())
    ok = max_rel < tolerance
    body = canonical_json_bytes({
        "max_relative_error": max_rel,
        "max_abs_error": float(np.abs(analytic - fd).max()),
        "step": step,
        "tolerance": tolerance,
        "ok": ok,
    })
    return body, ok


def softmax_tst1(logits_tst1: bytes) -> bytes:
    return tensorio.write_tensor(postprocess.softmax(tensorio.read_tensor(logits_tst1)))


def crf_tst1(probs_tst1: bytes, image_png: bytes, params: postprocess.CrfParams,
             exact_pixel_limit: int = postprocess.EXACT_PIXEL_LIMIT) -> bytes:
    probs = tensorio.read_tensor(probs_tst1)
    image = tensorio.decode_image(image_png)
    refined = postprocess.crf_refine(probs, image, params, exact_pixel_limit)
    return tensorio.write_tensor(refined)


def tta_tst1(view_specs: list[tuple[str, float, bytes]],
             base_hw: tuple[int, int] | None = None) -> bytes:
    views = [
        postprocess.TtaView(tensorio.read_tensor(data), transform, scale)
        for transform, scale, data in view_specs
    ]
    return tensorio.write_tensor(postprocess.tta_merge(views, base_hw))


def uncertainty_outputs(probs_tst1: bytes, threshold: float = 0.5) -> tuple[bytes, bytes]:
    """(canonical report JSON, entropy heatmap PNG)."""
    report = postprocess.uncertainty(tensorio.read_tensor(probs_tst1), threshold)
    heatmap = tensorio.encode_gray8(postprocess.entropy_heatmap(report))
    return canonical_json_bytes(report.to_json_obj()), heatmap


def mc_aggregate_outputs(sample_tst1s: list[bytes],
                         threshold: float = 0.5) -> tuple[bytes, bytes, bytes]:
    """(canonical predictive report JSON, mean TST1, variance TST1)."""
    samples = [tensorio.read_tensor(b) for b in sample_tst1s]
    mean, report, variance = postprocess.mc_aggregate(samples, threshold)
    obj = report.to_json_obj()
    obj["samples"] = len(samples)
    obj["variance_mean"] = float(variance.mean())
    obj["variance_max"] = float(variance.max())
    var_tensor = tensorio.ProbTensor(tensorio.TensorKind.LOGITS,
                                     variance[None, :, :].astype(np.float32))
    return (canonical_json_bytes(obj), tensorio.write_tensor(mean),
            tensorio.write_tensor(var_tensor))


def rank_bytes(named_probs: list[tuple[str, bytes]], threshold: float = 0.5,
               low_band: float = postprocess.DEFAULT_LOW_BAND,
               high_band: float = postprocess.DEFAULT_HIGH_BAND) -> bytes:
    reports = [
        (name, postprocess.uncertainty(tensorio.read_tensor(data), threshold))
        for name, data in named_probs
    ]
    ranking = postprocess.rank_difficulty(reports, low_band, high_band)
    return canonical_json_bytes(ranking.to_json_obj())


def costmap_outputs(schema: ClassSchema, mask_png: bytes, safe_cost: float = 1.0,
                    caution_cost: float = 10.0) -> tuple[bytes, bytes]:
    """(canonical sidecar JSON, 16-bit costmap PNG)."""
    mask = tensorio.decode_mask(mask_png, schema)
    cmap = costmap.to_costmap(mask, schema, safe_cost, caution_cost)
    png, sidecar = costmap.costmap_to_png16(cmap)
    return canonical_json_bytes(sidecar), png


def plan_bytes(costmap_png: bytes, sidecar_json: bytes | dict,
               start: tuple[int, int], goal: tuple[int, int],
               clearance: int = 0) -> bytes:
    if isinstance(sidecar_json, (bytes, str)):
        try:
            sidecar = json.loads(sidecar_json)
        except json.JSONDecodeError as exc:
            raise ValidationFailure(f"sidecar is not valid JSON: {exc}") from exc
    else:
        sidecar = sidecar_json
    cmap = costmap.costmap_from_png16(costmap_png, sidecar)
    plan = costmap.plan_path(cmap, start, goal)
    if clearance > 0:
        plan = costmap.suggest_waypoints(plan, cmap, clearance)
    return canonical_json_bytes(plan.to_json_obj())


def overlay_png(schema: ClassSchema, image_png: bytes, mask_png: bytes,
                alpha: float = 0.5) -> bytes:
    image = tensorio.decode_image(image_png)
    mask = tensorio.decode_mask(mask_png, schema)
    return tensorio.encode_image(tensorio.render_overlay(image, mask, schema, alpha))
