from __future__ import annotations

import numpy as np
import pytest

from conftest import random_probs
from oracles import oracle_crf
from terraseg.errors import DimensionMismatch, InvalidProbabilities, ValidationFailure
from terraseg.postprocess import CrfParams, crf_refine
from terraseg.tensorio import ProbTensor, TensorKind


def probs(arr) -> ProbTensor:
    return ProbTensor(TensorKind.PROBABILITIES, np.asarray(arr, np.float64))


def centre_flip_fixture():
    image = np.full((3, 3, 3), 128, np.uint8)
    p_a = np.full((3, 3), 0.9)
    p_a[1, 1] = 0.4
    p = np.stack([p_a, 1.0 - p_a])
    params = CrfParams(iterations=5, w_smooth=5.0, theta_gamma=2.0,
                       w_bilateral=0.0, theta_alpha=80.0, theta_beta=13.0)
    return p, image, params


def test_zero_pairwise_is_identity(rng):
    p = random_probs(rng, 6, 8, 8).astype(np.float32)
    image = rng.integers(0, 256, (8, 8, 3)).astype(np.uint8)
    out = crf_refine(probs(p.astype(np.float64)), image,
                     CrfParams(w_smooth=0.0, w_bilateral=0.0))
    assert np.abs(out.data - p).max() <= 1e-6


def test_centre_flip():
    p, image, params = centre_flip_fixture()
    refined = crf_refine(probs(p), image, params)
    assert p[0, 1, 1] < 0.5
    assert refined.data[0, 1, 1] > 0.5  # strong smoothing flips the centre to A
    reference = oracle_crf(p, image, params.iterations, params.w_smooth,
                           params.theta_gamma, params.w_bilateral,
                           params.theta_alpha, params.theta_beta)
    assert reference[0, 1, 1] > 0.5
    assert np.abs(refined.data - reference).max() <= 1e-5


def test_matches_oracle_on_random_inputs(rng):
    for _ in range(8):
        h = int(rng.integers(3, 17))
        w = int(rng.integers(3, 17))
        c = int(rng.integers(2, 6))
        p = random_probs(rng, c, h, w)
        image = rng.integers(0, 256, (h, w, 3)).astype(np.uint8)
        params = CrfParams(
            iterations=int(rng.integers(1, 4)),
            w_smooth=float(rng.uniform(0.0, 4.0)),
            theta_gamma=float(rng.uniform(1.0, 4.0)),
            w_bilateral=float(rng.uniform(0.0, 8.0)),
            theta_alpha=float(rng.uniform(5.0, 60.0)),
            theta_beta=float(rng.uniform(5.0, 30.0)),
        )
        refined = crf_refine(probs(p), image, params)
        reference = oracle_crf(p, image, params.iterations, params.w_smooth,
                               params.theta_gamma, params.w_bilateral,
                               params.theta_alpha, params.theta_beta)
        assert np.abs(refined.data - reference).max() <= 1e-5


def test_normalisation_preserved(rng):
    p = random_probs(rng, 5, 10, 10)
    image = rng.integers(0, 256, (10, 10, 3)).astype(np.uint8)
    out = crf_refine(probs(p), image, CrfParams(iterations=4))
    assert np.abs(out.data.sum(axis=0) - 1.0).max() <= 1e-6
    assert out.data.min() >= 0.0


def test_grid_path_tracks_its_reference(rng):
    """The large-image path uses symmetrically normalised kernels; compare it
    against a brute-force implementation of that same semantics."""
    h, w, c = 16, 16, 4
    p = random_probs(rng, c, h, w)
    image = np.zeros((h, w, 3), np.uint8)
    image[:8] = rng.integers(0, 256, 3)
    image[8:] = rng.integers(0, 256, 3)
    image = np.clip(image.astype(int) + rng.integers(-15, 15, image.shape),
                    0, 255).astype(np.uint8)
    params = CrfParams(iterations=3, w_smooth=2.0, theta_gamma=2.0,
                       w_bilateral=6.0, theta_alpha=20.0, theta_beta=13.0)
    approx = crf_refine(probs(p), image, params, exact_pixel_limit=0)

    n = h * w
    unary = -np.log(np.clip(p.reshape(c, n), 1e-8, None))
    ys, xs = np.divmod(np.arange(n), w)
    pos = np.stack([ys, xs], 1).astype(float)
    rgb = image.reshape(n, 3).astype(float)
    d2 = ((pos[:, None] - pos[None]) ** 2).sum(-1)
    c2 = ((rgb[:, None] - rgb[None]) ** 2).sum(-1)
    ks = np.exp(-d2 / (2 * params.theta_gamma ** 2))
    kb = np.exp(-d2 / (2 * params.theta_alpha ** 2) - c2 / (2 * params.theta_beta ** 2))
    for k in (ks, kb):
        mass = k @ np.ones(n)
        k /= np.sqrt(mass[:, None] * mass[None, :])
    np.fill_diagonal(ks, 0.0)
    np.fill_diagonal(kb, 0.0)
    q = np.exp(-unary)
    q /= q.sum(0)
    for _ in range(params.iterations):
        msg = params.w_smooth * (q @ ks) + params.w_bilateral * (q @ kb)
        e = -unary + msg
        e -= e.max(0, keepdims=True)
        q = np.exp(e)
        q /= q.sum(0)
    assert np.abs(approx.data - q.reshape(c, h, w)).max() <= 0.15
    assert np.abs(approx.data.sum(axis=0) - 1.0).max() <= 1e-6


def test_grid_path_runs_on_larger_input(rng):
    p = random_probs(rng, 3, 40, 40)
    image = rng.integers(0, 256, (40, 40, 3)).astype(np.uint8)
    out = crf_refine(probs(p), image, CrfParams(iterations=2), exact_pixel_limit=256)
    assert out.data.shape == (3, 40, 40)
    assert np.abs(out.data.sum(axis=0) - 1.0).max() <= 1e-6


def test_requires_probabilities(rng):
    z = ProbTensor(TensorKind.LOGITS, rng.normal(0, 1, (3, 4, 4)))
    image = np.zeros((4, 4, 3), np.uint8)
    with pytest.raises(InvalidProbabilities):
        crf_refine(z, image, CrfParams())


def test_dimension_mismatch(rng):
    p = probs(random_probs(rng, 3, 4, 4))
    with pytest.raises(DimensionMismatch):
        crf_refine(p, np.zeros((5, 5, 3), np.uint8), CrfParams())


def test_param_validation():
    with pytest.raises(ValidationFailure):
        CrfParams(iterations=0)
    with pytest.raises(ValidationFailure):
        CrfParams(theta_gamma=0.0)
    with pytest.raises(ValidationFailure):
        CrfParams(w_smooth=-1.0)
