import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from invfilt.presets import get_preset  # noqa: E402


@pytest.fixture
def dense3():
    return get_preset("eq38")


@pytest.fixture
def cycle5():
    return get_preset("eq37")


def random_hmm(rng, X, Y, low=0.05):
    """Strictly positive random HMM (entries bounded away from zero)."""
    P = rng.random((X, X)) + low
    B = rng.random((X, Y)) + low
    return P / P.sum(1, keepdims=True), B / B.sum(1, keepdims=True)


def random_simplex(rng, X, size=None, low=0.0):
    v = rng.random((X,) if size is None else (size, X)) + low
    return v / v.sum(axis=-1, keepdims=True)
