"""Reference class-weighted cross-entropy, soft Dice, and their 0.7/0.3 blend.

Pure-numpy, 64-bit implementations with analytic gradients, intended for
validating external training pipelines rather than for training itself.
Conventions the combined loss depends on (both exposed as toggles):

* cross-entropy divides by the sum of applied class weights (weighted mean),
* Dice averages over classes present in the ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AllPixelsIgnored,
    DimensionMismatch,
    IndexOutOfRange,
    NoPresentClasses,
    ValidationFailure,
)
from .schema import IGNORE_INDEX, ClassSchema
from .tensorio import ProbTensor, TensorKind

DEFAULT_LAMBDA_CE = 0.7
DEFAULT_LAMBDA_DICE = 0.3
DEFAULT_EPSILON = 1e-6

CE_NORMALISATIONS = ("weighted_mean", "mean", "sum")
DICE_CLASS_MODES = ("present", "all")


@dataclass
class LossBreakdown:
    ce: float
    dice: float
    combined: float
    lambda_ce: float
    lambda_dice: float
    epsilon: float

    def to_json_obj(self) -> dict:
        return {
            "ce": self.ce,
            "dice": self.dice,
            "combined": self.combined,
            "lambda_ce": self.lambda_ce,
            "lambda_dice": self.lambda_dice,
            "epsilon": self.epsilon,
        }


def _prep(tensor: ProbTensor, gt: np.ndarray):
    """Common validation; returns float64 values (C, N) and flat int gt (N,)."""
    gt = np.asarray(gt)
    if gt.ndim != 2:
        raise DimensionMismatch(f"ground truth must be 2-D, got shape {gt.shape}")
    c, h, w = tensor.data.shape
    if gt.shape != (h, w):
        raise DimensionMismatch(f"tensor is {h}x{w}, ground truth is {gt.shape}")
    flat_gt = gt.astype(np.int64).ravel()
    valid = flat_gt != IGNORE_INDEX
    if valid.any() and int(flat_gt[valid].max()) >= c:
        raise IndexOutOfRange(
            f"ground truth index {int(flat_gt[valid].max())} >= {c} classes")
    z = tensor.data.reshape(c, -1).astype(np.float64)
    return z, flat_gt, valid


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = np.exp(z - z.max(axis=0, keepdims=True))
    return shifted / shifted.sum(axis=0, keepdims=True)


def _ce_value(z: np.ndarray, flat_gt: np.ndarray, valid: np.ndarray,
              weights: np.ndarray, normalisation: str) -> float:
    if not valid.any():
        raise AllPixelsIgnored("every pixel carries the ignore index")
    logp = _log_softmax(z)
    idx = np.flatnonzero(valid)
    y = flat_gt[idx]
    nll = -logp[y, idx]
    w = weights[y]
    total = float((w * nll).sum())
    if normalisation == "weighted_mean":
        return total / float(w.sum())
    if normalisation == "mean":
        return total / y.size
    return total


def _dice_coefficients(p: np.ndarray, flat_gt: np.ndarray, valid: np.ndarray,
                       epsilon: float, class_mode: str, num_classes: int):
    if not valid.any():
        raise NoPresentClasses("no labelled pixels to take Dice over")
    if class_mode == "present":
        classes = np.unique(flat_gt[valid])
    else:
        classes = np.arange(num_classes)
    pv = p[:, valid]
    gv = flat_gt[valid]
    onehot = (gv[None, :] == classes[:, None]).astype(np.float64)
    p_sel = pv[classes]
    inter = (p_sel * onehot).sum(axis=1)
    denom = p_sel.sum(axis=1) + onehot.sum(axis=1)
    return (2.0 * inter + epsilon) / (denom + epsilon), classes


def _dice_value(p: np.ndarray, flat_gt: np.ndarray, valid: np.ndarray,
                epsilon: float, class_mode: str, num_classes: int) -> float:
    dice, _ = _dice_coefficients(p, flat_gt, valid, epsilon, class_mode, num_classes)
    return 1.0 - float(dice.mean())


def _combined_from_array(z: np.ndarray, flat_gt: np.ndarray, valid: np.ndarray,
                         schema: ClassSchema, lambda_ce: float, lambda_dice: float,
                         epsilon: float, ce_normalisation: str,
                         dice_class_mode: str) -> tuple[float, float]:
    ce = _ce_value(z, flat_gt, valid, schema.weights, ce_normalisation)
    dice = _dice_value(_softmax(z), flat_gt, valid, epsilon, dice_class_mode, z.shape[0])
    return ce, dice


def weighted_ce(logits: ProbTensor, gt: np.ndarray, schema: ClassSchema,
                normalisation: str = "weighted_mean") -> float:
    """Class-weighted cross-entropy from logits.

    Per pixel: w[y] * (-log softmax(z)[y]); reduced by the weighted mean
    (divide by the sum of applied weights) unless ``normalisation`` says
    otherwise ("mean" divides by pixel count, "sum" does not divide).
    Ignore-index pixels are skipped.
    """
    if normalisation not in CE_NORMALISATIONS:
        raise ValidationFailure(f"normalisation must be one of {CE_NORMALISATIONS}")
    z, flat_gt, valid = _prep(logits, gt)
    return _ce_value(z, flat_gt, valid, schema.weights, normalisation)


def soft_dice(tensor: ProbTensor, gt: np.ndarray, epsilon: float = DEFAULT_EPSILON,
              class_mode: str = "present") -> float:
    """Soft Dice loss: 1 - mean_c (2*sum(p_c*g_c)+eps) / (sum(p_c)+sum(g_c)+eps).

    Logit input is softmaxed first; g is the one-hot ground truth. The mean
    runs over classes present in the ground truth ("present") or all classes
    ("all"); ignore-index pixels are excluded from every sum.
    """
    if class_mode not in DICE_CLASS_MODES:
        raise ValidationFailure(f"class_mode must be one of {DICE_CLASS_MODES}")
    z, flat_gt, valid = _prep(tensor, gt)
    p = _softmax(z) if tensor.kind is TensorKind.LOGITS else z
    return _dice_value(p, flat_gt, valid, epsilon, class_mode, tensor.num_classes)


def combined_loss(logits: ProbTensor, gt: np.ndarray, schema: ClassSchema,
                  lambda_ce: float = DEFAULT_LAMBDA_CE,
                  lambda_dice: float = DEFAULT_LAMBDA_DICE,
                  epsilon: float = DEFAULT_EPSILON,
                  ce_normalisation: str = "weighted_mean",
                  dice_class_mode: str = "present") -> LossBreakdown:
    """lambda_ce * weighted CE + lambda_dice * soft Dice, from one logit tensor."""
    if ce_normalisation not in CE_NORMALISATIONS:
        raise ValidationFailure(f"normalisation must be one of {CE_NORMALISATIONS}")
    if dice_class_mode not in DICE_CLASS_MODES:
        raise ValidationFailure(f"class_mode must be one of {DICE_CLASS_MODES}")
    z, flat_gt, valid = _prep(logits, gt)
    ce, dice = _combined_from_array(z, flat_gt, valid, schema, lambda_ce, lambda_dice,
                                    epsilon, ce_normalisation, dice_class_mode)
    return LossBreakdown(
        ce=ce,
        dice=dice,
        combined=lambda_ce * ce + lambda_dice * dice,
        lambda_ce=lambda_ce,
        lambda_dice=lambda_dice,
        epsilon=epsilon,
    )


def combined_loss_grad(logits: ProbTensor, gt: np.ndarray, schema: ClassSchema,
                       lambda_ce: float = DEFAULT_LAMBDA_CE,
                       lambda_dice: float = DEFAULT_LAMBDA_DICE,
                       epsilon: float = DEFAULT_EPSILON,
                       ce_normalisation: str = "weighted_mean",
                       dice_class_mode: str = "present") -> np.ndarray:
    """Analytic d(combined)/d(logit), shape (C, H, W), float64.

    Ignored pixels get zero gradient. Matches central finite differences of
    ``combined_loss`` to high accuracy in 64-bit arithmetic.
    """
    if ce_normalisation not in CE_NORMALISATIONS:
        raise ValidationFailure(f"normalisation must be one of {CE_NORMALISATIONS}")
    if dice_class_mode not in DICE_CLASS_MODES:
        raise ValidationFailure(f"class_mode must be one of {DICE_CLASS_MODES}")
    z, flat_gt, valid = _prep(logits, gt)
    if not valid.any():
        raise AllPixelsIgnored("every pixel carries the ignore index")
    c, n = z.shape
    p = _softmax(z)
    idx = np.flatnonzero(valid)
    y = flat_gt[idx]

    # cross-entropy: dL/dz[k,i] = scale_i * (p[k,i] - [k == y_i])
    w = schema.weights[y]
    if ce_normalisation == "weighted_mean":
        scale = w / w.sum()
    elif ce_normalisation == "mean":
        scale = w / y.size
    else:
        scale = w
    grad_ce = np.zeros((c, n))
    grad_ce[:, idx] = p[:, idx] * scale[None, :]
    grad_ce[y, idx] -= scale

    # Dice: dL/dp, then the softmax Jacobian-vector product per pixel
    _, classes = _dice_coefficients(p, flat_gt, valid, epsilon, dice_class_mode, c)
    pv = p[:, idx]
    onehot = (y[None, :] == classes[:, None]).astype(np.float64)
    a = 2.0 * (pv[classes] * onehot).sum(axis=1) + epsilon
    b = pv[classes].sum(axis=1) + onehot.sum(axis=1) + epsilon
    dldp = np.zeros((c, n))
    dldp[np.ix_(classes, idx)] = -(2.0 * onehot * b[:, None] - a[:, None]) / (
        b[:, None] ** 2) / classes.size
    inner = (dldp[:, idx] * pv).sum(axis=0)
    grad_dice = np.zeros((c, n))
    grad_dice[:, idx] = pv * (dldp[:, idx] - inner[None, :])

    total = lambda_ce * grad_ce + lambda_dice * grad_dice
    return total.reshape(logits.data.shape)


def finite_difference_grad(logits: ProbTensor, gt: np.ndarray, schema: ClassSchema,
                           step: float = 1e-3,
                           lambda_ce: float = DEFAULT_LAMBDA_CE,
                           lambda_dice: float = DEFAULT_LAMBDA_DICE,
                           epsilon: float = DEFAULT_EPSILON,
                           ce_normalisation: str = "weighted_mean",
                           dice_class_mode: str = "present") -> np.ndarray:
    """Central-difference gradient of the combined loss, computed in float64.

    Perturbations happen on a 64-bit copy of the logits so the step is exact.
    Slow by design (two loss evaluations per logit entry); use on small crops.
    """
    z, flat_gt, valid = _prep(logits, gt)

    def value(arr: np.ndarray) -> float:
        ce, dice = _combined_from_array(arr, flat_gt, valid, schema, lambda_ce,
                                        lambda_dice, epsilon, ce_normalisation,
                                        dice_class_mode)
        return lambda_ce * ce + lambda_dice * dice

    grad = np.zeros_like(z)
    for k in range(z.shape[0]):
        for i in range(z.shape[1]):
            plus = z.copy()
            plus[k, i] += step
            minus = z.copy()
            minus[k, i] -= step
            grad[k, i] = (value(plus) - value(minus)) / (2.0 * step)
    return grad.reshape(logits.data.shape)
