"""Piecewise-constant rotation approximation A_rho on a cube tessellation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

from rigidlab.grid import dist_so_field, lp_norm, total_variation
from rigidlab.log import logger
from rigidlab.parallel import map_chunks
from rigidlab.rigidity import fit_rotation
from rigidlab.types import (
    GridDomain,
    InvariantError,
    MatrixField,
    MeasureDensity,
    PiecewiseRotationField,
    Rotation,
    Tessellation,
    critical_exponent,
)

Objective = Literal["weak", "l2"]

PROP_CSV_HEADER = ["rho", "l1_gap", "tv", "dist_term", "curl_term", "ratio"]

FACE_SAMPLES = 16
MONOTONE_SLACK = 1.2


@dataclass
class PropReport:
    """Both sides of the tessellation estimate at one rho."""

    rho: float
    l1_gap: float
    tv: float
    dist_term: float
    curl_term: float
    objective: str = "weak"
    so_valued: bool = False

    @property
    def lhs(self) -> float:
        return self.l1_gap / self.rho + self.tv

    @property
    def rhs(self) -> float:
        return self.dist_term + self.curl_term

    @property
    def ratio(self) -> float | None:
        if self.rhs <= 1e-14:
            return None
        return self.lhs / self.rhs

    @property
    def bv_ratio(self) -> float | None:
        """tv / |curl|, the direct check for SO(n)-valued fields."""
        if self.curl_term <= 1e-14:
            return None
        return self.tv / self.curl_term

    def csv_row(self) -> list[str]:
        ratio = "degenerate" if self.ratio is None else f"{self.ratio:.12e}"
        return [f"{v:.12e}" for v in (self.rho, self.l1_gap, self.tv, self.dist_term, self.curl_term)] + [ratio]

    def to_dict(self) -> dict[str, Any]:
        return {
            "rho": self.rho,
            "l1_gap": self.l1_gap,
            "tv": self.tv,
            "dist_term": self.dist_term,
            "curl_term": self.curl_term,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": self.ratio,
            "bv_ratio": self.bv_ratio,
            "objective": self.objective,
            "so_valued": self.so_valued,
        }


@dataclass
class ConvergenceTable:
    """L^1 gaps along a decreasing rho list and the fitted rate exponent."""

    rows: list[PropReport] = field(default_factory=list)
    rate: float | None = None

    @property
    def errors(self) -> list[float]:
        return [r.l1_gap for r in self.rows]

    def to_dict(self) -> dict[str, Any]:
        return {"rate": self.rate, "rows": [r.to_dict() for r in self.rows]}


def _face_area(dom: GridDomain, rho: float, lower: tuple[int, ...], axis: int) -> float:
    """Area of the face between cube `lower` and its +axis neighbour that lies in the ball."""
    mids = (np.arange(FACE_SAMPLES) + 0.5) / FACE_SAMPLES
    axes = []
    for k in range(dom.n):
        if k == axis:
            axes.append(np.array([(lower[k] + 1) * rho]))
        else:
            axes.append((lower[k] + mids) * rho)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dom.n)
    inside = np.linalg.norm(pts, axis=-1) <= dom.radius * (1 + 1e-12)
    return rho ** (dom.n - 1) * float(np.mean(inside))


def tessellate(domain: GridDomain, rho: float) -> Tessellation:
    """Cubes [k rho, (k+1) rho) of the lattice rho Z^n meeting the mask, with face adjacency."""
    if rho < 2 * domain.h * (1 - 1e-12):
        raise ValueError(f"rho = {rho} is below 2h = {2 * domain.h}")
    n = domain.n
    # nodes on a cube face belong to the cube above it
    steps = np.floor(domain.axis / rho + 1e-9).astype(int)
    grids = np.meshgrid(*([steps] * n), indexing="ij")
    node_idx = np.stack(grids, axis=-1)
    index = sorted({tuple(int(v) for v in row) for row in node_idx[domain.mask]})
    lookup = {idx: k for k, idx in enumerate(index)}

    node_cube = np.full(domain.shape, -1, dtype=int)
    flat = node_idx[domain.mask]
    node_cube[domain.mask] = [lookup[tuple(int(v) for v in row)] for row in flat]

    adjacency, areas = [], []
    for a, idx in enumerate(index):
        for axis in range(n):
            nb = idx[:axis] + (idx[axis] + 1,) + idx[axis + 1 :]
            b = lookup.get(nb)
            if b is not None:
                adjacency.append((a, b))
                areas.append(_face_area(domain, rho, idx, axis))
    centers = (np.array(index, dtype=float) + 0.5) * rho
    logger.debug(f"tessellate rho={rho}: {len(index)} cubes, {len(adjacency)} faces")
    return Tessellation(domain, rho, index, centers, adjacency, node_cube, areas)


def build_a_rho(
    a: MatrixField,
    curl: MeasureDensity | None,
    rho: float,
    *,
    objective: Objective = "weak",
    threads: int = 1,
) -> PiecewiseRotationField:
    """One rotation per cube, fitted on B(x_i, 3 rho / 2) intersected with the mask.

    curl is accepted for symmetry with the estimate; the fit only reads A.
    """
    tess = tessellate(a.domain, rho)
    dom = a.domain
    q = critical_exponent(dom.n)

    def fit(lo: int, hi: int) -> Rotation | None:
        region = np.linalg.norm(dom.coords - tess.centers[lo], axis=-1) <= tess.fit_radius
        if not (region & dom.mask).any():
            return None
        if objective == "l2":
            return fit_rotation(a, "Lp", 2.0, region=region)
        return fit_rotation(a, "weak-Lp", q, region=region)

    fitted = map_chunks(fit, len(tess), threads, chunk=1)
    live = [k for k, r in enumerate(fitted) if r is not None]
    if not live:
        raise ValueError("no fitting ball meets the mask")
    rotations = []
    for k, r in enumerate(fitted):
        if r is None:
            d = np.linalg.norm(tess.centers[live] - tess.centers[k], axis=-1)
            r = fitted[live[int(np.argmin(d))]]
        rotations.append(r)
    return PiecewiseRotationField(tess, rotations, objective)


def tv_piecewise(field_: PiecewiseRotationField) -> float:
    """Sum over shared faces of (face area in the ball) * |R_i - R_j|_F."""
    tess = field_.tessellation
    rots = field_.rotations
    return math.fsum(
        area * float(np.linalg.norm(rots[i].m - rots[j].m)) for (i, j), area in zip(tess.adjacency, tess.face_areas)
    )


def prop_check(
    a: MatrixField,
    curl: MeasureDensity,
    rho: float,
    *,
    objective: Objective = "weak",
    threads: int = 1,
) -> PropReport:
    """(1/rho)||A - A_rho||_1 + TV(A_rho) against rho^((n-2)/2)||dist(A, SO(n))||_2 + |curl|."""
    dom = a.domain
    approx = build_a_rho(a, curl, rho, objective=objective, threads=threads)
    gap = lp_norm(MatrixField(dom, a.values - approx.to_matrix_field().values), 1)
    dist = dist_so_field(a)
    report = PropReport(
        rho=rho,
        l1_gap=gap,
        tv=tv_piecewise(approx),
        dist_term=rho ** ((dom.n - 2) / 2) * lp_norm(dist, 2, domain=dom),
        curl_term=total_variation(curl),
        objective=objective,
        so_valued=bool(np.max(dist[dom.mask]) <= 1e-10),
    )
    logger.debug(f"prop_check rho={rho}: lhs={report.lhs:.4e} rhs={report.rhs:.4e}")
    return report


def l1_convergence(
    a: MatrixField,
    curl: MeasureDensity,
    rho_list: list[float],
    *,
    objective: Objective = "weak",
    threads: int = 1,
) -> ConvergenceTable:
    """||A - A_rho||_1 along a decreasing rho list; each gap may exceed the previous by at most 20%."""
    if len(rho_list) < 3:
        raise ValueError(f"need at least 3 rho values, got {len(rho_list)}")
    if any(b >= a_ for a_, b in zip(rho_list, rho_list[1:])):
        raise ValueError("rho_list must be strictly decreasing")
    rows = [prop_check(a, curl, rho, objective=objective, threads=threads) for rho in rho_list]
    errors = [r.l1_gap for r in rows]
    for k, (prev, cur) in enumerate(zip(errors, errors[1:])):
        if cur > MONOTONE_SLACK * prev + 1e-14:
            raise InvariantError(f"L1 gap grew from {prev:.4e} to {cur:.4e} at rho={rho_list[k + 1]}")
    rate = None
    if all(e > 1e-14 for e in errors):
        rate = float(np.polyfit(np.log(rho_list), np.log(errors), 1)[0])
    logger.info(f"l1_convergence over {len(rho_list)} rho values: rate {rate}")
    return ConvergenceTable(rows, rate)

