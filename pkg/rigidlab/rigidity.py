"""Rotation fitting and the two sides of the rigidity inequalities."""

from __future__ import annotations

import math
from typing import Literal

import numpy as np
from scipy.optimize import minimize

from rigidlab.fields import FamilySpec, dilate_family, expm_skew, generate, rescale_family
from rigidlab.grid import dist_so_field, integral_power, make_domain, project_so, total_variation, weak_lp_norm
from rigidlab.homotopy import DEFAULT_SPEC, KernelSpec, potential_gradient, recover_potential
from rigidlab.log import logger
from rigidlab.parallel import map_chunks
from rigidlab.types import (
    GridDomain,
    MatrixField,
    MeasureDensity,
    RigidityReport,
    Rotation,
    ScalingSweepResult,
    critical_exponent,
)

NormKind = Literal["Lp", "weak-Lp"]
RotationSource = Literal["direct", "potential"]

REPORT_CSV_HEADER = ["p", "norm_kind", "lhs", "dist_term", "curl_term", "log_factor", "ratio"]

SUPPORT_RADIUS = 0.9
DEFAULT_M = 10.0
STEP_TOL = 1e-8
MAX_RECENTER = 25


def _skew(theta: np.ndarray, n: int) -> np.ndarray:
    w = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    w[iu] = theta
    return w - w.T


def _objective(values: np.ndarray, norm_kind: NormKind, p: float):
    """Scale-free objective on the selected node values (uniform cell weights)."""

    def f(m: np.ndarray) -> float:
        mags = np.sqrt(np.sum((values - m) ** 2, axis=(-2, -1)))
        if norm_kind == "weak-Lp":
            ordered = np.sort(mags)[::-1]
            k = np.arange(1, ordered.size + 1)
            return float(np.max(ordered * k ** (1.0 / p)))
        return math.fsum((mags**p).tolist()) / mags.size

    return f


def _descend(values: np.ndarray, start: np.ndarray, norm_kind: NormKind, p: float) -> np.ndarray:
    """Minimize over SO(n) in the chart R exp(skew(theta)), re-centred until the step is tiny."""
    n = start.shape[0]
    f = _objective(values, norm_kind, p)
    dim = n * (n - 1) // 2
    current = start
    for it in range(MAX_RECENTER):
        simplex = np.vstack([np.zeros(dim), 0.05 * np.eye(dim)])
        res = minimize(
            lambda th: f(current @ expm_skew(_skew(th, n))),
            np.zeros(dim),
            method="Nelder-Mead",
            options={"xatol": 1e-11, "fatol": 1e-15, "maxiter": 4000 * dim, "initial_simplex": simplex},
        )
        step = float(np.linalg.norm(res.x))
        if f(current @ expm_skew(_skew(res.x, n))) <= f(current):
            current = project_so(current @ expm_skew(_skew(res.x, n)))
        logger.debug(f"rotation descent: iteration {it} step={step:.3e} value={res.fun:.6e}")
        if step < STEP_TOL:
            return current
    logger.warning(f"rotation descent did not reach step < {STEP_TOL} after {MAX_RECENTER} re-centrings")
    return current


def fit_rotation(
    a: MatrixField,
    norm_kind: NormKind = "Lp",
    p: float = 2.0,
    *,
    region: np.ndarray | None = None,
    init: np.ndarray | None = None,
) -> Rotation:
    """Best constant rotation for A on the mask (optionally a sub-region).

    Lp with p = 2 is the polar projection of the mean; every other objective starts
    from that answer (or init) and runs the descent.
    """
    dom = a.domain
    sel = dom.mask if region is None else (dom.mask & region)
    values = a.values[sel]
    if values.shape[0] == 0:
        raise ValueError("fit region contains no masked nodes")
    mean = np.mean(values, axis=0)
    sigma = np.linalg.svd(mean, compute_uv=False)
    if sigma[-1] <= 1e-12 * max(sigma[0], 1.0):
        logger.warning(f"mean matrix is singular (sigma_min={sigma[-1]:.3e}); falling back to identity")
        return Rotation.identity(dom.n)
    polar = project_so(mean)
    if norm_kind == "Lp" and p == 2.0 and init is None:
        return Rotation(polar)
    start = polar if init is None else project_so(np.asarray(init, dtype=float))
    return Rotation(project_so(_descend(values, start, norm_kind, p)))


def fit_rotation_via_potential(
    a: MatrixField, curl: MeasureDensity | None = None, spec: KernelSpec = DEFAULT_SPEC
) -> Rotation:
    """Rotation fitted (p = 2) on dg, g the potentials recovered from the closed part of A."""
    dg = potential_gradient(recover_potential(a, curl, spec))
    return fit_rotation(dg, "Lp", 2.0)


def check_support(curl: MeasureDensity, radius: float = SUPPORT_RADIUS) -> None:
    """Raise unless the curl lives in |x| <= radius * R."""
    dom = curl.domain
    limit = radius * dom.radius
    outside = dom.mask & (dom.norm > limit * (1 + 1e-12))
    if np.any(curl.density_magnitude()[outside] > 1e-12):
        raise ValueError(f"curl density is supported outside |x| <= {limit:g}")
    for seg in curl.singular_part:
        if max(np.linalg.norm(seg.start), np.linalg.norm(seg.end)) > limit * (1 + 1e-12):
            raise ValueError(f"curl segment leaves |x| <= {limit:g}")


def _chosen_rotation(
    a: MatrixField,
    curl: MeasureDensity,
    rotation: RotationSource,
    spec: KernelSpec,
    norm_kind: NormKind,
    p: float,
) -> tuple[Rotation, str]:
    if rotation == "potential":
        return fit_rotation_via_potential(a, curl, spec), "potential"
    if rotation != "direct":
        raise ValueError(f"unknown rotation source: {rotation!r}")
    source = "polar" if norm_kind == "Lp" and p == 2.0 else "descent"
    return fit_rotation(a, norm_kind, p), source


def weak_rigidity_check(
    a: MatrixField,
    curl: MeasureDensity,
    label: str = "",
    *,
    rotation: RotationSource = "direct",
    spec: KernelSpec = DEFAULT_SPEC,
) -> RigidityReport:
    """Weak-L^{1*} statement: ||A - R|| against ||dist(A, SO(n))|| + |curl|(B).

    rotation="potential" takes R from the potentials of the closed part instead of
    the direct descent; the report records which one was used.
    """
    check_support(curl)
    dom = a.domain
    q = critical_exponent(dom.n)
    rot, source = _chosen_rotation(a, curl, rotation, spec, "weak-Lp", q)
    polar = fit_rotation(a, "Lp", 2.0)
    lhs = weak_lp_norm(a.minus(rot.m), q)
    terms = {
        "dist_term": weak_lp_norm(dist_so_field(a), q, domain=dom),
        "curl_term": total_variation(curl),
        "log_factor": 1.0,
    }
    comparison = {
        "polar_rotation": polar.to_list(),
        "polar_lhs": weak_lp_norm(a.minus(polar.m), q),
        "max_pointwise_gap": float(np.max(a.minus(rot.m).magnitude()[dom.mask])),
    }
    report = RigidityReport(rot, lhs, terms, q, "weak-Lp", source, comparison, label)
    logger.debug(f"weak rigidity {label}: lhs={lhs:.4e} rhs={report.rhs:.4e}")
    return report


def lp_rigidity_check(
    a: MatrixField,
    curl: MeasureDensity,
    p: float,
    m_bound: float = DEFAULT_M,
    *,
    use_log_factor: bool = True,
    label: str = "",
    rotation: RotationSource = "direct",
    spec: KernelSpec = DEFAULT_SPEC,
) -> RigidityReport:
    """Strong L^p statement; at p = 1* the curl term carries |log |curl|(B)| + 1."""
    dom = a.domain
    if dom.n < 3:
        raise ValueError("the L^p rigidity estimate needs n >= 3")
    q = critical_exponent(dom.n)
    if not q - 1e-12 <= p <= 2.0 + 1e-12:
        raise ValueError(f"p must lie in [{q:.6g}, 2], got {p}")
    sup = float(np.max(a.magnitude()[dom.mask]))
    if sup > m_bound:
        raise ValueError(f"max |A| = {sup:.6g} exceeds M = {m_bound}")
    critical = math.isclose(p, q, rel_tol=0, abs_tol=1e-12)
    rot, source = _chosen_rotation(a, curl, rotation, spec, "Lp", p)
    tv = total_variation(curl)
    log_factor = abs(math.log(tv)) + 1.0 if critical and use_log_factor and tv > 0 else 1.0
    terms = {
        "dist_term": integral_power(dist_so_field(a), p, domain=dom),
        "curl_term": tv**q,
        "log_factor": log_factor,
    }
    lhs = integral_power(a.minus(rot.m), p)
    return RigidityReport(rot, lhs, terms, p, "Lp", source, {"max_abs_A": sup}, label)


def _log_slope(values: list[float], ratios: list[float]) -> float:
    if len(set(values)) <= 1 or len(ratios) < 2:
        return 0.0
    return float(np.polyfit(np.log(values), np.log(ratios), 1)[0])


def scaling_sweep(
    family: FamilySpec,
    domain: GridDomain,
    p: float,
    values: list[float],
    *,
    parameter: Literal["strength", "scale"] = "strength",
    norm_kind: NormKind = "Lp",
    use_log_factor: bool = True,
    threads: int = 1,
    rotation: RotationSource = "direct",
    spec: KernelSpec = DEFAULT_SPEC,
) -> ScalingSweepResult:
    """Reports along strength (eps -> lam * eps) or dilation and the log-log slope of the ratio.

    A dilation member is the field A(x/lam) on the ball of radius lam * R at the same
    resolution, so core and band widths stay fixed in grid steps and every term of
    the ratio picks up the same factor lam^n; only the critical log factor does not.
    """
    if len(values) < 4:
        raise ValueError(f"scaling_sweep needs at least 4 parameter values, got {len(values)}")
    if any(v <= 0 for v in values):
        raise ValueError("parameter values must be positive")
    diffs = np.diff(values)
    if len(set(values)) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ValueError("parameter values must be strictly monotone")
    if parameter not in ("strength", "scale"):
        raise ValueError(f"unknown sweep parameter: {parameter!r}")

    def one(lo: int, hi: int) -> RigidityReport:
        lam = values[lo]
        if parameter == "strength":
            a, mu = generate(rescale_family(family, lam), domain)
        else:
            a, mu = generate(dilate_family(family, lam), make_domain(domain.n, domain.res, domain.radius * lam))
        label = f"{parameter}={lam:g}"
        if norm_kind == "weak-Lp":
            return weak_rigidity_check(a, mu, label=label, rotation=rotation, spec=spec)
        return lp_rigidity_check(a, mu, p, use_log_factor=use_log_factor, label=label, rotation=rotation, spec=spec)

    reports = map_chunks(one, len(values), threads, chunk=1)
    live = [(v, r.ratio) for v, r in zip(values, reports) if r.ratio is not None and r.ratio > 0]
    slope = _log_slope([v for v, _ in live], [r for _, r in live])
    logger.info(f"scaling sweep over {parameter}, p={p:.4g}: slope {slope:.3f}")
    return ScalingSweepResult(parameter, list(values), reports, slope)


def estimate_constant(reports: list[RigidityReport]) -> float:
    """Largest ratio among non-degenerate reports."""
    ratios = [r.ratio for r in reports if r.ratio is not None]
    if not ratios:
        raise ValueError("no non-degenerate report to estimate a constant from")
    return max(ratios)
