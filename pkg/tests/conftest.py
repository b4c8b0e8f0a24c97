from __future__ import annotations

import numpy as np
import pytest

from terraseg.schema import default_schema


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def random_mask(rng, h=16, w=16, num_classes=10):
    return rng.integers(0, num_classes, size=(h, w)).astype(np.uint8)


def random_probs(rng, c=10, h=8, w=8):
    raw = rng.random((c, h, w)) + 1e-3
    return (raw / raw.sum(axis=0)).astype(np.float64)
