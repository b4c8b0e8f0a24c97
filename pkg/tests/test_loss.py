from __future__ import annotations

import math

import numpy as np
import pytest

from oracles import oracle_fd_grad, reference_combined_loss
from terraseg.errors import (
    AllPixelsIgnored,
    DimensionMismatch,
    NoPresentClasses,
)
from terraseg.loss import (
    combined_loss,
    combined_loss_grad,
    finite_difference_grad,
    soft_dice,
    weighted_ce,
)
from terraseg.schema import IGNORE_INDEX
from terraseg.tensorio import ProbTensor, TensorKind


def logits(arr) -> ProbTensor:
    return ProbTensor(TensorKind.LOGITS, np.asarray(arr, dtype=np.float64))


def probs(arr) -> ProbTensor:
    return ProbTensor(TensorKind.PROBABILITIES, np.asarray(arr, dtype=np.float64))


# -- weighted cross-entropy -----------------------------------------------

def test_uniform_logits_give_ln10(schema):
    t = logits(np.zeros((10, 4, 4)))
    gt = np.full((4, 4), 3, np.uint8)
    assert weighted_ce(t, gt, schema) == pytest.approx(math.log(10), abs=1e-12)


def test_weighted_mean_two_pixel_example(schema):
    # pixel 1: Trees (w=1.0) at probability ~1 -> loss ~0
    # pixel 2: Logs (w=5.0) at probability exp(-1) -> loss exactly 1
    z = np.zeros((10, 1, 2))
    z[0, 0, 0] = 40.0
    z[6, 0, 1] = math.log(9.0 / (math.e - 1.0))
    gt = np.array([[0, 6]], np.uint8)
    value = weighted_ce(logits(z), gt, schema)
    assert value == pytest.approx(5.0 / 6.0, abs=1e-9)


def test_ignore_skip_leaves_remaining_pixel(schema):
    z = np.zeros((10, 1, 2))
    gt = np.array([[IGNORE_INDEX, 4]], np.uint8)
    assert weighted_ce(logits(z), gt, schema) == pytest.approx(math.log(10), abs=1e-12)


def test_all_pixels_ignored(schema):
    gt = np.full((2, 2), IGNORE_INDEX, np.uint8)
    with pytest.raises(AllPixelsIgnored):
        weighted_ce(logits(np.zeros((10, 2, 2))), gt, schema)


def test_dimension_mismatch(schema):
    with pytest.raises(DimensionMismatch):
        weighted_ce(logits(np.zeros((10, 2, 2))), np.zeros((3, 3), np.uint8), schema)


# -- soft Dice --------------------------------------------------------------

def test_perfect_one_hot_dice_is_zero():
    gt = np.indices((16, 16)).sum(axis=0).astype(np.uint8) % 10
    onehot = np.zeros((10, 16, 16))
    for c in range(10):
        onehot[c][gt == c] = 1.0
    assert soft_dice(probs(onehot), gt) < 1e-5


def test_uniform_prediction_closed_form():
    n = 256
    gt = np.zeros((16, 16), np.uint8)
    value = soft_dice(logits(np.zeros((10, 16, 16))), gt)
    expected = 1.0 - (2 * 0.1 * n + 1e-6) / (0.1 * n + n + 1e-6)
    assert value == pytest.approx(expected, abs=1e-12)


def test_epsilon_only_disjoint_support():
    p = np.zeros((10, 1, 1))
    p[1, 0, 0] = 1.0
    gt = np.zeros((1, 1), np.uint8)  # class 0, but p assigns it zero mass
    value = soft_dice(probs(p), gt, epsilon=1e-6)
    assert value == pytest.approx(1.0 - 1e-6 / (1.0 + 1e-6), abs=1e-12)
    assert value > 0.999


def test_no_present_classes():
    with pytest.raises(NoPresentClasses):
        soft_dice(probs(np.full((2, 1, 1), 0.5)),
                  np.full((1, 1), IGNORE_INDEX, np.uint8))


def test_dice_class_mode_all_includes_absent():
    gt = np.zeros((4, 4), np.uint8)
    present = soft_dice(logits(np.zeros((10, 4, 4))), gt, class_mode="present")
    everything = soft_dice(logits(np.zeros((10, 4, 4))), gt, class_mode="all")
    assert everything > present  # absent classes are epsilon-dominated


# -- combined ----------------------------------------------------------------

def test_composition_identity_random(schema, rng):
    for _ in range(25):
        z = rng.normal(0, 3, (10, 4, 4))
        gt = rng.integers(0, 10, (4, 4)).astype(np.uint8)
        b = combined_loss(logits(z), gt, schema)
        assert b.combined == 0.7 * b.ce + 0.3 * b.dice


def test_all_trees_uniform_value(schema):
    gt = np.zeros((16, 16), np.uint8)
    b = combined_loss(logits(np.zeros((10, 16, 16))), gt, schema)
    expected_dice = 1.0 - (2 * 0.1 * 256 + 1e-6) / (0.1 * 256 + 256 + 1e-6)
    assert b.combined == pytest.approx(0.7 * math.log(10) + 0.3 * expected_dice,
                                       abs=1e-9)


def test_degenerate_lambdas_reduce_to_ce(schema, rng):
    z = rng.normal(0, 2, (10, 3, 3))
    gt = rng.integers(0, 10, (3, 3)).astype(np.uint8)
    b = combined_loss(logits(z), gt, schema, lambda_ce=1.0, lambda_dice=0.0)
    assert b.combined == weighted_ce(logits(z), gt, schema)


def test_perfect_prediction_combined_tiny(schema):
    gt = np.indices((8, 8)).sum(axis=0).astype(np.uint8) % 10
    z = np.full((10, 8, 8), -30.0)
    for c in range(10):
        z[c][gt == c] = 30.0
    assert combined_loss(logits(z), gt, schema).combined < 1e-4


def test_matches_reference_transcription(schema, rng):
    for _ in range(10):
        z = rng.normal(0, 2, (10, 4, 4))
        gt = rng.integers(0, 10, (4, 4)).astype(np.uint8)
        mine = combined_loss(logits(z), gt, schema).combined
        ref = reference_combined_loss(z, gt, schema.weights)
        assert mine == pytest.approx(ref, abs=1e-12)


def test_shift_invariance(schema, rng):
    z = rng.normal(0, 2, (10, 5, 5))
    gt = rng.integers(0, 10, (5, 5)).astype(np.uint8)
    shifted = z + rng.normal(0, 10, (1, 5, 5))
    a = combined_loss(logits(z), gt, schema).combined
    b = combined_loss(logits(shifted), gt, schema).combined
    assert abs(a - b) < 1e-6


def test_permutation_equivariance(schema, rng):
    from terraseg.schema import ClassDef, ClassSchema

    z = rng.normal(0, 2, (10, 4, 4))
    gt = rng.integers(0, 10, (4, 4)).astype(np.uint8)
    perm = rng.permutation(10)
    inv = np.argsort(perm)
    permuted_schema = ClassSchema([
        ClassDef(index=int(inv[cd.index]), name=cd.name, raw_value=cd.raw_value,
                 color=cd.color, weight=cd.weight, tier=cd.tier)
        for cd in schema.classes
    ])
    a = combined_loss(logits(z), gt, schema).combined
    b = combined_loss(logits(z[perm]), inv[gt].astype(np.uint8), permuted_schema).combined
    assert a == pytest.approx(b, abs=1e-12)


# -- gradients ----------------------------------------------------------------

def test_gradient_matches_independent_fd_oracle(schema, rng):
    worst = 0.0
    for _ in range(10):
        z = rng.normal(0, 2, (10, 4, 4))
        gt = rng.integers(0, 10, (4, 4)).astype(np.uint8)
        analytic = combined_loss_grad(logits(z), gt, schema)
        fd = oracle_fd_grad(z, gt, schema.weights, step=1e-3)
        rel = (np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-6)).max()
        worst = max(worst, rel)
    assert worst < 1e-4


def test_gradient_matches_shipped_fd_helper(schema, rng):
    z = rng.normal(0, 2, (10, 4, 4))
    gt = rng.integers(0, 10, (4, 4)).astype(np.uint8)
    analytic = combined_loss_grad(logits(z), gt, schema)
    fd = finite_difference_grad(logits(z), gt, schema, step=1e-3)
    assert (np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-6)).max() < 1e-4


def test_fd_halving_step_does_not_worsen(schema, rng):
    z = rng.normal(0, 2, (10, 3, 3))
    gt = rng.integers(0, 10, (3, 3)).astype(np.uint8)
    analytic = combined_loss_grad(logits(z), gt, schema)
    err = [
        np.abs(analytic - oracle_fd_grad(z, gt, schema.weights, step=s)).max()
        for s in (2e-3, 1e-3)
    ]
    assert err[1] <= err[0] * 1.5  # convergence direction, with slack for noise


def test_saturated_optimum_gradient_vanishes(schema):
    gt = np.indices((4, 4)).sum(axis=0).astype(np.uint8) % 10
    z = np.full((10, 4, 4), -30.0)
    for c in range(10):
        z[c][gt == c] = 30.0
    grad = combined_loss_grad(logits(z), gt, schema)
    assert np.abs(grad).max() < 1e-6


def test_ignored_pixels_zero_gradient(schema, rng):
    z = rng.normal(0, 2, (10, 2, 2))
    gt = np.array([[0, IGNORE_INDEX], [IGNORE_INDEX, 4]], np.uint8)
    grad = combined_loss_grad(logits(z), gt, schema)
    assert np.all(grad[:, 0, 1] == 0.0)
    assert np.all(grad[:, 1, 0] == 0.0)
