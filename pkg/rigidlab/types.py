"""Core data structures -- the foundation of rigidlab."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Any

import numpy as np

SUPPORTED_DIMENSIONS = (2, 3, 4)
ROTATION_TOL = 1e-10


class InvariantError(RuntimeError):
    """A mathematical invariant was found violated on computed data."""


def critical_exponent(n: int) -> float:
    """1* = n/(n-1)."""
    return n / (n - 1)


def multi_indices(n: int, r: int) -> list[tuple[int, ...]]:
    """Increasing multi-indices of length r, lexicographic."""
    return list(combinations(range(n), r))


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Uniform Cartesian grid on [-radius, radius]^n clipped to the ball B(0, radius)."""

    n: int
    res: int
    radius: float = 1.0

    def __post_init__(self) -> None:
        if self.n not in SUPPORTED_DIMENSIONS:
            raise ValueError(f"n must be one of {SUPPORTED_DIMENSIONS}, got {self.n}")
        if self.res < 3 or self.res % 2 == 0:
            raise ValueError(f"res must be an odd integer >= 3, got {self.res}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    @property
    def h(self) -> float:
        return 2.0 * self.radius / (self.res - 1)

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.res,) * self.n

    @cached_property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.radius, self.radius, self.res)

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape (*grid, n)."""
        mesh = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.coords**2, axis=-1))

    @cached_property
    def mask(self) -> np.ndarray:
        return self.norm <= self.radius * (1.0 + 1e-12)

    @cached_property
    def halo_mask(self) -> np.ndarray:
        """Masked nodes plus their axis neighbours; operator outputs live here."""
        return self.norm <= (self.radius + self.h) * (1.0 + 1e-12)

    @property
    def node_count(self) -> int:
        return int(self.mask.sum())

    @property
    def mask_volume(self) -> float:
        return self.node_count * self.cell_volume

    @property
    def equivalent_radius(self) -> float:
        """Radius of the ball whose volume equals the masked node measure."""
        return (self.mask_volume / unit_ball_volume(self.n)) ** (1.0 / self.n)

    @property
    def cell_radius(self) -> float:
        """Radius of the ball of volume cell_volume."""
        return (self.cell_volume / unit_ball_volume(self.n)) ** (1.0 / self.n)

    def points(self, which: np.ndarray | None = None) -> np.ndarray:
        """Coordinates of the selected nodes, shape (P, n)."""
        sel = self.mask if which is None else which
        return self.coords[sel]

    def describe(self) -> dict[str, Any]:
        return {"n": self.n, "res": self.res, "radius": self.radius}


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def unit_sphere_area(n: int) -> float:
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


@dataclass(frozen=True, eq=False)
class FormField:
    """Degree-r differential form, node-collocated; coeffs shape (*grid, binom(n, r))."""

    domain: GridDomain
    degree: int
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        n = self.domain.n
        if not 0 <= self.degree <= n:
            raise ValueError(f"degree must lie in [0, {n}], got {self.degree}")
        expected = (*self.domain.shape, math.comb(n, self.degree))
        if self.coeffs.shape != expected:
            raise ValueError(f"coeffs shape {self.coeffs.shape} != {expected}")

    @property
    def indices(self) -> list[tuple[int, ...]]:
        return multi_indices(self.domain.n, self.degree)

    @classmethod
    def zeros(cls, domain: GridDomain, degree: int) -> FormField:
        m = math.comb(domain.n, degree)
        return cls(domain, degree, np.zeros((*domain.shape, m)))

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.coeffs**2, axis=-1))

    def scaled(self, c: float) -> FormField:
        return FormField(self.domain, self.degree, c * self.coeffs)

    def __add__(self, other: FormField) -> FormField:
        if other.degree != self.degree:
            raise ValueError("cannot add forms of different degree")
        return FormField(self.domain, self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other: FormField) -> FormField:
        return self + other.scaled(-1.0)


@dataclass(frozen=True, eq=False)
class MatrixField:
    """n x n matrix per node; values shape (*grid, n, n). Row i is the 1-form A^i_j dx^j."""

    domain: GridDomain
    values: np.ndarray

    def __post_init__(self) -> None:
        n = self.domain.n
        expected = (*self.domain.shape, n, n)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected}")

    def row_form(self, i: int) -> FormField:
        return FormField(self.domain, 1, self.values[..., i, :].copy())

    def row_forms(self) -> list[FormField]:
        return [self.row_form(i) for i in range(self.domain.n)]

    @classmethod
    def from_row_forms(cls, forms: list[FormField]) -> MatrixField:
        if not forms or any(f.degree != 1 for f in forms):
            raise ValueError("need n forms of degree 1")
        domain = forms[0].domain
        if len(forms) != domain.n:
            raise ValueError(f"need {domain.n} row forms, got {len(forms)}")
        return cls(domain, np.stack([f.coeffs for f in forms], axis=-2))

    @classmethod
    def constant(cls, domain: GridDomain, m: np.ndarray) -> MatrixField:
        values = np.broadcast_to(np.asarray(m, dtype=float), (*domain.shape, domain.n, domain.n))
        return cls(domain, values.copy())

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=(-2, -1)))

    def minus(self, m: np.ndarray) -> MatrixField:
        return MatrixField(self.domain, self.values - np.asarray(m, dtype=float))

    def left_multiply(self, q: np.ndarray) -> MatrixField:
        return MatrixField(self.domain, np.einsum("ij,...jk->...ik", q, self.values))


@dataclass(frozen=True)
class Segment:
    """Straight line piece of a singular measure; weight is a 2-form per unit length per row."""

    start: tuple[float, ...]
    end: tuple[float, ...]
    weight: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.end, self.start)))

    @property
    def weight_norm(self) -> float:
        return float(np.sqrt(np.sum(np.asarray(self.weight) ** 2)))


@dataclass(frozen=True, eq=False)
class MeasureDensity:
    """Vector measure: one absolutely continuous 2-form per row plus weighted segments."""

    domain: GridDomain
    ac_part: tuple[FormField, ...]
    singular_part: tuple[Segment, ...] = ()

    def __post_init__(self) -> None:
        if any(f.degree != 2 for f in self.ac_part):
            raise ValueError("ac_part must consist of 2-forms")

    @property
    def rows(self) -> int:
        return len(self.ac_part)

    def density_magnitude(self) -> np.ndarray:
        total = np.zeros(self.domain.shape)
        for f in self.ac_part:
            total += np.sum(f.coeffs**2, axis=-1)
        return np.sqrt(total)

    def scaled(self, c: float) -> MeasureDensity:
        segs = tuple(Segment(s.start, s.end, c * np.asarray(s.weight)) for s in self.singular_part)
        return MeasureDensity(self.domain, tuple(f.scaled(c) for f in self.ac_part), segs)

    def with_segments(self, segments: tuple[Segment, ...]) -> MeasureDensity:
        return MeasureDensity(self.domain, self.ac_part, segments)

    def left_multiply(self, q: np.ndarray) -> MeasureDensity:
        """Row mixing by q: the curl of Q A when self is the curl of A."""
        q = np.asarray(q, dtype=float)
        stacked = np.stack([f.coeffs for f in self.ac_part])
        mixed = np.einsum("ij,j...->i...", q, stacked)
        rows = tuple(FormField(self.domain, 2, c) for c in mixed)
        segs = tuple(Segment(s.start, s.end, q @ np.asarray(s.weight)) for s in self.singular_part)
        return MeasureDensity(self.domain, rows, segs)

    @classmethod
    def zeros(cls, domain: GridDomain, rows: int | None = None) -> MeasureDensity:
        k = domain.n if rows is None else rows
        return cls(domain, tuple(FormField.zeros(domain, 2) for _ in range(k)))


@dataclass(frozen=True, eq=False)
class Rotation:
    """Element of SO(n)."""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("rotation must be a square matrix")
        n = m.shape[0]
        if np.max(np.abs(m.T @ m - np.eye(n))) > ROTATION_TOL or np.linalg.det(m) <= 0:
            raise ValueError("matrix is not in SO(n)")
        object.__setattr__(self, "m", m)

    @property
    def n(self) -> int:
        return self.m.shape[0]

    @classmethod
    def identity(cls, n: int) -> Rotation:
        return cls(np.eye(n))

    def to_list(self) -> list[list[float]]:
        return self.m.tolist()


@dataclass
class RigidityReport:
    """Both sides of a rigidity inequality evaluated on one field."""

    rotation: Rotation
    lhs: float
    rhs_terms: dict[str, float]
    p: float
    norm_kind: str
    rotation_source: str = "polar"
    comparison: dict[str, Any] = field(default_factory=dict)
    label: str = ""

    @property
    def rhs(self) -> float:
        t = self.rhs_terms
        return t.get("dist_term", 0.0) + t.get("curl_term", 0.0) * t.get("log_factor", 1.0)

    @property
    def degenerate(self) -> bool:
        return self.rhs <= 1e-14

    @property
    def ratio(self) -> float | None:
        if self.degenerate:
            return None
        return self.lhs / self.rhs

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "p": self.p,
            "norm_kind": self.norm_kind,
            "lhs": self.lhs,
            "rhs_terms": dict(self.rhs_terms),
            "rhs": self.rhs,
            "ratio": self.ratio,
            "degenerate": self.degenerate,
            "rotation": self.rotation.to_list(),
            "rotation_source": self.rotation_source,
            "comparison": self.comparison,
        }

    def csv_row(self) -> list[str]:
        t = self.rhs_terms
        ratio = "degenerate" if self.ratio is None else f"{self.ratio:.12e}"
        return [
            f"{self.p:.12e}",
            self.norm_kind,
            f"{self.lhs:.12e}",
            f"{t.get('dist_term', 0.0):.12e}",
            f"{t.get('curl_term', 0.0):.12e}",
            f"{t.get('log_factor', 1.0):.12e}",
            ratio,
        ]


@dataclass
class ScalingSweepResult:
    """Reports along a one-parameter family and the fitted log-log slope of the ratio."""

    parameter: str
    values: list[float]
    reports: list[RigidityReport]
    slope: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "parameter": self.parameter,
            "values": list(self.values),
            "slope": self.slope,
            "reports": [r.to_dict() for r in self.reports],
        }


@dataclass(frozen=True)
class DyadicCube:
    """Index-space cube: corner (node indices), side in nodes (power of two), level."""

    corner: tuple[int, ...]
    side: int
    level: int
    mean: float = 0.0

    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(c, c + self.side) for c in self.corner)


@dataclass
class CZDecomposition:
    """Calderon-Zygmund splitting F = g + b at level lam."""

    good: np.ndarray
    cubes: list[DyadicCube]
    level: float
    p: float
    threshold: float
    union_measure: float
    total_integral: float
    checks: dict[str, bool] = field(default_factory=dict)

    def summary(self) -> dict[str, Any]:
        return {
            "level": self.level,
            "p": self.p,
            "threshold": self.threshold,
            "cube_count": len(self.cubes),
            "union_measure": self.union_measure,
            "total_integral": self.total_integral,
            "checks": dict(self.checks),
        }


@dataclass
class Tessellation:
    """Axis-aligned cubes of side rho meeting the mask; adjacency by shared faces."""

    domain: GridDomain
    rho: float
    index: list[tuple[int, ...]]
    centers: np.ndarray
    adjacency: list[tuple[int, int]]
    node_cube: np.ndarray  # cube number per node, -1 off-mask
    face_areas: list[float] = field(default_factory=list)

    @property
    def fit_radius(self) -> float:
        return 1.5 * self.rho

    def __len__(self) -> int:
        return len(self.index)


@dataclass
class PiecewiseRotationField:
    """One rotation per tessellation cube."""

    tessellation: Tessellation
    rotations: list[Rotation]
    objective: str = "weak"

    def to_matrix_field(self) -> MatrixField:
        tess = self.tessellation
        dom = tess.domain
        stack = np.stack([r.m for r in self.rotations])
        values = np.zeros((*dom.shape, dom.n, dom.n))
        sel = tess.node_cube >= 0
        values[sel] = stack[tess.node_cube[sel]]
        return MatrixField(dom, values)
