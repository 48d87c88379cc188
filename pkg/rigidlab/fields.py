"""Deterministic generators for the test-field families.

Every generator returns node values on the full box; curl supports stay inside
|x| <= support * R (support 0.9 by default) so the fields satisfy compact-support hypotheses.
"""

from __future__ import annotations

import math
from typing import Literal

import numpy as np
import scipy.linalg
from pydantic import BaseModel, field_validator, model_validator

from rigidlab.grid import curl_of_matrix
from rigidlab.log import logger
from rigidlab.types import FormField, GridDomain, MatrixField, MeasureDensity, Rotation, Segment

FamilyKind = Literal["constant_rotation", "gradient", "screw_dislocation", "rotation_jump", "perturbed_rotation"]

MAX_SUPPORT = 0.9


class FamilySpec(BaseModel):
    """Parameters of one test-field family; seed fixes all randomness.

    strength is the incompatibility strength eps: it multiplies the screw distortion,
    the perturbation of perturbed_rotation and the jump angle (strength * angle).
    The rotation jump is tapered at taper, or at support when taper is unset.
    """

    kind: FamilyKind = "screw_dislocation"
    strength: float = 1.0
    burgers: float = 1.0
    core_radius: float = 0.3
    support: float = MAX_SUPPORT
    include_segment: bool = False
    rotation: list[list[float]] | None = None
    angle: float = 0.5
    rotation_plane: tuple[int, int] = (0, 1)
    normal: list[float] | None = None
    width: float = 0.3
    taper: float | None = None
    linear: list[list[float]] | None = None
    quadratic: list[list[list[float]]] | None = None
    cubic: list[list[list[list[float]]]] | None = None
    modes: int = 3
    scale: float = 1.0
    seed: int = 0

    @field_validator("strength", "burgers")
    @classmethod
    def _nonnegative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("must be >= 0")
        return v

    @field_validator("core_radius", "width", "scale")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("support", "taper")
    @classmethod
    def _inside_ball(cls, v: float | None) -> float | None:
        if v is not None and not 0 < v <= MAX_SUPPORT:
            raise ValueError(f"must lie in (0, {MAX_SUPPORT}]")
        return v

    @model_validator(mode="after")
    def _plane(self) -> FamilySpec:
        a, b = self.rotation_plane
        if a == b or min(a, b) < 0:
            raise ValueError("rotation_plane needs two distinct axes")
        return self


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def plane_rotation(n: int, angle: float, plane: tuple[int, int] = (0, 1)) -> np.ndarray:
    a, b = plane
    if max(a, b) >= n:
        raise ValueError(f"rotation plane {plane} outside dimension {n}")
    m = np.eye(n)
    c, s = math.cos(angle), math.sin(angle)
    m[a, a], m[a, b], m[b, a], m[b, b] = c, -s, s, c
    return m


def expm_skew(w: np.ndarray) -> np.ndarray:
    """exp of skew matrices stacked over leading axes (closed forms for n = 2, 3)."""
    w = np.asarray(w, dtype=float)
    n = w.shape[-1]
    if n == 2:
        theta = w[..., 1, 0]
        c, s = np.cos(theta), np.sin(theta)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    if n == 3:
        theta = np.sqrt(0.5 * np.sum(w * w, axis=(-2, -1)))
        a = np.sinc(theta / np.pi)
        b = 0.5 * np.sinc(theta / (2 * np.pi)) ** 2
        w2 = w @ w
        return np.eye(3) + a[..., None, None] * w + b[..., None, None] * w2
    flat = w.reshape(-1, n, n)
    out = np.stack([scipy.linalg.expm(m) for m in flat])
    return out.reshape(w.shape)


def log_rotation(m: np.ndarray) -> np.ndarray:
    """Skew-symmetric principal logarithm of a rotation."""
    logm = np.real(scipy.linalg.logm(m))
    return 0.5 * (logm - logm.T)


def smoothstep(t: np.ndarray) -> np.ndarray:
    """Quintic step: 0 for t <= 0, 1 for t >= 1, C^2."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t**2)


def smoothstep_slope(t: np.ndarray) -> np.ndarray:
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30 * t**2 * (1 - t) ** 2, 0.0)


def radial_taper(rho: np.ndarray, outer: float) -> tuple[np.ndarray, np.ndarray]:
    """(tau, dtau/drho): 1 for rho <= outer/2, 0 for rho >= outer."""
    half = 0.5 * outer
    t = (rho - half) / half
    return 1.0 - smoothstep(t), -smoothstep_slope(t) / half


def _rotation(m: list[list[float]] | np.ndarray | None, n: int) -> np.ndarray:
    if m is None:
        return np.eye(n)
    return Rotation(np.asarray(m, dtype=float)).m


def _skew_field(domain: GridDomain, seed: int, modes: int, support: float, scale: float) -> np.ndarray:
    """Smooth random skew field, compactly supported in |x| < support."""
    rng = np.random.default_rng(seed)
    n = domain.n
    y = domain.coords / scale
    bump = np.clip(1 - (np.linalg.norm(y, axis=-1) / support) ** 2, 0.0, None) ** 3
    w = np.zeros((*domain.shape, n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = np.zeros(domain.shape)
            for _ in range(modes):
                freq = rng.integers(-2, 3, size=n) * (np.pi / 2)
                s += rng.normal() * np.cos(y @ freq + rng.uniform(0, 2 * np.pi))
            w[..., i, j] = s * bump
            w[..., j, i] = -s * bump
    return w


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def gen_constant_rotation(domain: GridDomain, r0: np.ndarray | list[list[float]] | None = None) -> MatrixField:
    return MatrixField.constant(domain, _rotation(r0, domain.n))


def gen_gradient(
    domain: GridDomain,
    linear: np.ndarray | list | None = None,
    quadratic: np.ndarray | list | None = None,
    cubic: np.ndarray | list | None = None,
    scale: float = 1.0,
) -> MatrixField:
    """A = grad u for u_i = L_ij x_j + 1/2 Q_ijk x_j x_k + 1/6 C_ijkl x_j x_k x_l, sampled exactly."""
    n = domain.n
    y = domain.coords / scale
    lin = np.eye(n) if linear is None else np.asarray(linear, dtype=float)
    if lin.shape != (n, n):
        raise ValueError(f"linear coefficients must have shape {(n, n)}")
    values = np.broadcast_to(lin, (*domain.shape, n, n)).copy()
    if quadratic is not None:
        q = np.asarray(quadratic, dtype=float)
        if q.shape != (n, n, n):
            raise ValueError(f"quadratic coefficients must have shape {(n, n, n)}")
        q = 0.5 * (q + q.transpose(0, 2, 1))
        values += np.einsum("ijk,...k->...ij", q, y)
    if cubic is not None:
        c = np.asarray(cubic, dtype=float)
        if c.shape != (n, n, n, n):
            raise ValueError(f"cubic coefficients must have shape {(n, n, n, n)}")
        perms = [(0, 1, 2, 3), (0, 1, 3, 2), (0, 2, 1, 3), (0, 2, 3, 1), (0, 3, 1, 2), (0, 3, 2, 1)]
        c = sum(c.transpose(p) for p in perms) / 6
        values += 0.5 * np.einsum("ijkl,...k,...l->...ij", c, y, y)
    return MatrixField(domain, values)


def gen_screw_dislocation(
    domain: GridDomain,
    burgers: float = 1.0,
    core_radius: float = 0.3,
    strength: float = 0.1,
    taper: float = MAX_SUPPORT,
    include_segment: bool = False,
    scale: float = 1.0,
) -> tuple[MatrixField, MeasureDensity]:
    """Screw dislocation along e3 with regularized core and radial taper, plus its analytic curl.

    Row 3 of A - I is strength * (b/2pi) (-x2, x1, 0) / max(r, r_c)^2 * tau(|x|). With
    include_segment the core flux is carried by axis segments of weight strength * b * tau * scale.
    """
    if domain.n != 3:
        raise ValueError(f"screw dislocation needs n = 3, got {domain.n}")
    if core_radius * scale < 2 * domain.h:
        raise ValueError(f"core_radius {core_radius} (scaled {core_radius * scale}) below 2h = {2 * domain.h}")
    if not 0 < taper * scale <= MAX_SUPPORT * domain.radius:
        raise ValueError(f"taper radius {taper * scale} must lie in (0, {MAX_SUPPORT * domain.radius}]")
    c = burgers / (2 * math.pi)
    y = domain.coords / scale
    x1, x2, x3 = y[..., 0], y[..., 1], y[..., 2]
    r2 = x1**2 + x2**2
    rho = np.sqrt(r2 + x3**2)
    tau, dtau = radial_taper(rho, taper)
    core = r2 < core_radius**2
    f = 1.0 / np.maximum(r2, core_radius**2)

    values = np.broadcast_to(np.eye(3), (*domain.shape, 3, 3)).copy()
    values[..., 2, 0] += strength * c * (-x2) * f * tau
    values[..., 2, 1] += strength * c * x1 * f * tau

    safe = np.where(rho > 0, rho, 1.0)
    dtr = np.where(rho > 0, dtau / safe, 0.0)
    d12 = np.where(core, (2 * tau * (not include_segment) + r2 * dtr) / core_radius**2, dtr)
    d13 = x2 * f * dtr * x3
    d23 = -x1 * f * dtr * x3
    row3 = np.stack([d12, d13, d23], axis=-1) * (strength * c / scale)
    zero = FormField.zeros(domain, 2)
    mu = MeasureDensity(domain, (zero, zero, FormField(domain, 2, row3)))

    if include_segment:
        half = taper * scale
        count = max(1, int(math.ceil(2 * half / domain.h)))
        edges = np.linspace(-half, half, count + 1)
        segs = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            t, _ = radial_taper(np.array(0.5 * (lo + hi) / scale), taper)
            if float(t) <= 0:
                continue
            weight = np.zeros((3, 3))
            weight[2, 0] = strength * burgers * float(t) * scale
            segs.append(Segment((0.0, 0.0, float(lo)), (0.0, 0.0, float(hi)), weight))
        mu = mu.with_segments(tuple(segs))
    logger.debug(f"screw dislocation: b={burgers} r_c={core_radius} eps={strength} scale={scale}")
    return MatrixField(domain, values), mu


def gen_rotation_jump(
    domain: GridDomain,
    r1: np.ndarray | list | None,
    r2: np.ndarray | list,
    normal: np.ndarray | list | None = None,
    width: float = 0.3,
    taper: float | None = None,
    scale: float = 1.0,
) -> tuple[MatrixField, MeasureDensity]:
    """Geodesic interpolation R1 exp(sigma log(R1^T R2)) across the band |x.nu| <= width/2.

    SO(n)-valued by construction; the curl is the discrete row-wise derivative and
    concentrates in the band (and, with a taper, on the taper shell).
    """
    n = domain.n
    m1, m2 = _rotation(r1, n), _rotation(r2, n)
    if width * scale < 2 * domain.h:
        raise ValueError(f"band width {width * scale} below 2h = {2 * domain.h}")
    nu = np.eye(n)[0] if normal is None else np.asarray(normal, dtype=float)
    if nu.shape != (n,) or not np.linalg.norm(nu) > 0:
        raise ValueError("normal must be a nonzero vector of length n")
    nu = nu / np.linalg.norm(nu)
    y = domain.coords / scale
    sigma = smoothstep(y @ nu / width + 0.5)
    if taper is not None:
        # one grid step inside the taper so the discrete curl stays within it
        sigma = sigma * radial_taper(np.linalg.norm(y, axis=-1), taper - domain.h / scale)[0]
    gen = log_rotation(m1.T @ m2)
    values = m1 @ expm_skew(sigma[..., None, None] * gen)
    a = MatrixField(domain, values)
    return a, curl_of_matrix(a)


def gen_perturbed_rotation(
    domain: GridDomain,
    r0: np.ndarray | list | None = None,
    strength: float = 0.1,
    seed: int = 0,
    modes: int = 3,
    support: float = MAX_SUPPORT,
    scale: float = 1.0,
) -> MatrixField:
    """A = R0 exp(eps W(x)), W a seeded smooth skew field vanishing for |x| >= support - h.

    The extra grid step keeps the centered-difference curl inside |x| <= support.
    """
    m0 = _rotation(r0, domain.n)
    inner = support - domain.h / scale
    if not inner > 0:
        raise ValueError(f"support {support} leaves no room inside one grid step h = {domain.h}")
    w = _skew_field(domain, seed, modes, inner, scale)
    return MatrixField(domain, m0 @ expm_skew(strength * w))


def rescale_family(spec: FamilySpec, lam: float) -> FamilySpec:
    """Multiply the incompatibility strength by lam."""
    if not lam > 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    return spec.model_copy(update={"strength": spec.strength * lam})


def dilate_family(spec: FamilySpec, lam: float) -> FamilySpec:
    """Spatial dilation x -> x/lam of the whole family."""
    if not lam > 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    return spec.model_copy(update={"scale": spec.scale * lam})


def generate(spec: FamilySpec, domain: GridDomain) -> tuple[MatrixField, MeasureDensity]:
    """Build (A, curl) for any family kind."""
    n = domain.n
    if spec.kind == "constant_rotation":
        return gen_constant_rotation(domain, spec.rotation), MeasureDensity.zeros(domain)
    if spec.kind == "gradient":
        a = gen_gradient(domain, spec.linear, spec.quadratic, spec.cubic, spec.scale)
        # exact gradients are closed
        return a, MeasureDensity.zeros(domain)
    if spec.kind == "screw_dislocation":
        return gen_screw_dislocation(
            domain,
            burgers=spec.burgers,
            core_radius=spec.core_radius,
            strength=spec.strength,
            taper=spec.support,
            include_segment=spec.include_segment,
            scale=spec.scale,
        )
    if spec.kind == "rotation_jump":
        r1 = _rotation(spec.rotation, n)
        r2 = r1 @ plane_rotation(n, spec.strength * spec.angle, spec.rotation_plane)
        taper = spec.support if spec.taper is None else spec.taper
        return gen_rotation_jump(domain, r1, r2, spec.normal, spec.width, taper, spec.scale)
    if spec.kind == "perturbed_rotation":
        a = gen_perturbed_rotation(domain, spec.rotation, spec.strength, spec.seed, spec.modes, spec.support, spec.scale)
        return a, curl_of_matrix(a)
    raise ValueError(f"unknown family kind: {spec.kind!r}")
