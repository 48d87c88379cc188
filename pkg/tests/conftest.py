"""Shared test fixtures for the rigidlab test suite."""
from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from rigidlab.grid import make_domain
from rigidlab.types import GridDomain, MatrixField, MeasureDensity, Segment


# ---- Helpers ----


def random_rotation(n: int, seed: int = 0) -> np.ndarray:
    """Haar-random element of SO(n)."""
    if n == 1:
        return np.eye(1)
    return special_ortho_group.rvs(n, random_state=seed)


def axis_segment(domain: GridDomain, weight: float, half: float = 0.5) -> MeasureDensity:
    """Zero density plus one x_n-axis segment of length 2*half carrying |weight| in row n, plane (0, 1)."""
    n = domain.n
    w = np.zeros((n, n * (n - 1) // 2))
    w[n - 1, 0] = weight
    start = tuple([0.0] * (n - 1) + [-half])
    end = tuple([0.0] * (n - 1) + [half])
    return MeasureDensity.zeros(domain).with_segments((Segment(start, end, w),))


def two_rotation_field(domain: GridDomain, r1: np.ndarray, r2: np.ndarray, cut: float) -> MatrixField:
    """R1 for x_1 < cut, R2 elsewhere."""
    left = domain.coords[..., 0] < cut
    values = np.where(left[..., None, None], r1, r2)
    return MatrixField(domain, np.ascontiguousarray(values, dtype=float))


# ---- Fixtures ----


@pytest.fixture
def plane9() -> GridDomain:
    return make_domain(2, 9)


@pytest.fixture
def plane17() -> GridDomain:
    return make_domain(2, 17)


@pytest.fixture
def ball9() -> GridDomain:
    return make_domain(3, 9)


@pytest.fixture
def ball17() -> GridDomain:
    return make_domain(3, 17)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
