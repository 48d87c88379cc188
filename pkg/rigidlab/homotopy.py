"""Linear homotopy operator k_y, the averaged operator T and its weakly singular kernel.

T is exposed twice: t_direct averages k_y over the masked nodes (slow, definition
oracle); t_kernel sums the kernel K^i_r(z, x - z) against the form (production).
Both average y over a set of measure N * h^n, so they agree up to quadrature error.
With KernelSpec.normalize (default) the y-weight is divided by its mass, which makes
T d + d T the identity; normalize=False keeps the raw weight.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from scipy.ndimage import map_coordinates, spline_filter
from scipy.special import roots_legendre

from rigidlab.grid import (
    contract,
    contraction_table,
    curl_of_matrix,
    exterior_derivative,
    fsum,
    magnitude,
    total_variation,
    weak_lp_norm,
)
from rigidlab.log import logger
from rigidlab.parallel import DEFAULT_CHUNK, map_chunks
from rigidlab.types import (
    FormField,
    GridDomain,
    MatrixField,
    MeasureDensity,
    critical_exponent,
    multi_indices,
    unit_sphere_area,
)


@dataclass(frozen=True)
class CutoffWeight:
    """Radial cut-off: 1 on |y| <= inner, C^1 cubic decay to 0 at |y| = outer."""

    inner: float = 1.0
    outer: float = 2.0

    def __call__(self, r: np.ndarray | float) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        t = np.clip((r - self.inner) / (self.outer - self.inner), 0.0, 1.0)
        return 1.0 - (3 * t**2 - 2 * t**3)

    @property
    def sup(self) -> float:
        return 1.0

    @property
    def gradient_sup(self) -> float:
        return 1.5 / (self.outer - self.inner)

    def mass(self, n: int) -> float:
        """Integral of phi over R^n; the decay piece is a polynomial, so Gauss-Legendre is exact."""
        t, w = roots_legendre(n + 4)
        half = (self.outer - self.inner) / 2
        r = self.inner + half * (t + 1)
        shell = float(np.sum(w * half * self(r) * r ** (n - 1)))
        return unit_sphere_area(n) * (self.inner**n / n + shell)


# Regularized punctured lattice sums over Z^n of |m|^(2-n)
LATTICE_ZETA = {2: -1.0, 3: -2.8372974794806, 4: -4.0 * math.log(4.0)}


@dataclass(frozen=True)
class KernelSpec:
    """Quadrature and evaluation settings shared by both forms of T.

    singular picks how the z = x cell is treated: "subtract" sums omega(z) - omega(x)
    against the kernel and adds back the exact kernel moment (exact variant only; the
    literal variant falls back to "equivalent_ball"), "equivalent_ball" integrates the
    kernel over a ball of one cell volume, "skip" drops the cell.
    """

    m_s: int = 16
    variant: Literal["exact", "literal"] = "exact"
    singular: Literal["subtract", "equivalent_ball", "skip"] = "subtract"
    chunk: int = DEFAULT_CHUNK
    threads: int = 1
    normalize: bool = True

    def __post_init__(self) -> None:
        if self.m_s < 4:
            raise ValueError(f"m_s must be >= 4, got {self.m_s}")
        if self.variant not in ("exact", "literal"):
            raise ValueError(f"unknown kernel variant: {self.variant!r}")
        if self.singular not in ("subtract", "equivalent_ball", "skip"):
            raise ValueError(f"unknown singular treatment: {self.singular!r}")

    def rule(self, lo: float = 0.0, hi: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        t, w = roots_legendre(self.m_s)
        return lo + (hi - lo) * (t + 1) / 2, w * (hi - lo) / 2


PHI = CutoffWeight()
DEFAULT_SPEC = KernelSpec()


def _interpolator(form: FormField) -> Callable[[np.ndarray], np.ndarray]:
    """Cubic spline through the node values; points of shape (N, n) map to (N, m_r)."""
    dom = form.domain
    filtered = [spline_filter(form.coeffs[..., j], order=3, mode="nearest") for j in range(form.coeffs.shape[-1])]

    def evaluate(pts: np.ndarray) -> np.ndarray:
        idx = ((np.asarray(pts, dtype=float) - dom.axis[0]) / dom.h).T
        cols = [map_coordinates(c, idx, order=3, mode="nearest", prefilter=False) for c in filtered]
        return np.stack(cols, axis=-1)

    return evaluate


def _inside(dom: GridDomain, pt: np.ndarray) -> bool:
    return float(np.linalg.norm(pt)) <= dom.radius * (1 + 1e-12)


# ---------------------------------------------------------------------------
# k_y and the direct average
# ---------------------------------------------------------------------------


def k_point(y: np.ndarray, omega: FormField, x: np.ndarray, spec: KernelSpec = DEFAULT_SPEC) -> np.ndarray:
    """(k_y omega)(x) = int_0^1 s^(r-1) omega(sx + (1-s)y) -| (x - y) ds, Gauss-Legendre in s."""
    dom, r = omega.domain, omega.degree
    if r < 1:
        raise ValueError("k_y needs a form of degree >= 1")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (_inside(dom, x) and _inside(dom, y)):
        raise ValueError("x and y must lie in the masked ball")
    s, w = spec.rule()
    pts = s[:, None] * x + (1 - s)[:, None] * y
    vals = _interpolator(omega)(pts)
    weighted = np.sum((w * s ** (r - 1))[:, None] * vals, axis=0)
    return contract(weighted, x - y, dom.n, r)


def t_direct(omega: FormField, spec: KernelSpec = DEFAULT_SPEC, weight: CutoffWeight = PHI) -> FormField:
    """T omega(x) = sum over masked y of phi(y) (k_y omega)(x) cell_volume, on the halo nodes.

    Slow oracle: every output point interpolates omega at m_s points per source node.
    """
    dom, r = omega.domain, omega.degree
    if r < 1:
        raise ValueError("T needs a form of degree >= 1")
    xs = dom.points(dom.halo_mask)
    ys = dom.points()
    wy = weight(np.linalg.norm(ys, axis=-1)) * dom.cell_volume
    if spec.normalize:
        wy = wy / fsum(wy)
    s, w = spec.rule()
    sw = w * s ** (r - 1)
    interp = _interpolator(omega)
    logger.debug(f"t_direct: {len(xs)} outputs x {len(ys)} sources x {spec.m_s} nodes")

    def block(lo: int, hi: int) -> np.ndarray:
        xb = xs[lo:hi]
        pts = s[None, None, :, None] * xb[:, None, None, :] + (1 - s)[None, None, :, None] * ys[None, :, None, :]
        vals = interp(pts.reshape(-1, dom.n)).reshape(hi - lo, len(ys), spec.m_s, -1)
        per_y = np.sum(sw[None, None, :, None] * vals, axis=2)
        k = contract(per_y, xb[:, None, :] - ys[None, :, :], dom.n, r)
        return np.sum(wy[None, :, None] * k, axis=1)

    out = np.concatenate(map_chunks(block, len(xs), spec.threads, spec.chunk), axis=0)
    coeffs = np.zeros((*dom.shape, math.comb(dom.n, r - 1)))
    coeffs[dom.halo_mask] = out
    return FormField(dom, r - 1, coeffs)


# ---------------------------------------------------------------------------
# Kernel form
# ---------------------------------------------------------------------------


def _ray_interval(z: np.ndarray, u: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Parameter interval [s_lo, s_hi] (s >= 0) where z - s u lies in B(0, radius)."""
    zu = np.sum(z * u, axis=-1)
    disc = zu**2 - np.sum(z * z, axis=-1) + radius**2
    root = np.sqrt(np.maximum(disc, 0.0))
    hi = np.where(disc > 0, np.maximum(zu + root, 0.0), 0.0)
    lo = np.where(disc > 0, np.maximum(zu - root, 0.0), 0.0)
    return lo, hi


def _radial_moment(s: np.ndarray, rho: np.ndarray, n: int, r: int) -> np.ndarray:
    """Antiderivative of s^(r-1) (rho + s)^(n-r) vanishing at s = 0."""
    total = np.zeros(np.broadcast_shapes(s.shape, rho.shape))
    for k in range(n - r + 1):
        total += math.comb(n - r, k) * rho ** (n - r - k) * s ** (r + k) / (r + k)
    return total


def _kernel_vectors(
    xb: np.ndarray,
    zs: np.ndarray,
    dom: GridDomain,
    r: int,
    spec: KernelSpec,
    clamp: float,
    weight: CutoffWeight,
) -> np.ndarray:
    """K^i_r(z, x - z) for a block of outputs, shape (B, Q, n); coincident pairs give 0."""
    n = dom.n
    h = xb[:, None, :] - zs[None, :, :]
    rho = np.sqrt(np.sum(h * h, axis=-1))
    coincident = rho == 0
    rho_c = np.maximum(rho, clamp) if clamp > 0 else rho
    safe = np.where(coincident, 1.0, rho)
    u = h / safe[..., None]
    zb = np.broadcast_to(zs[None, :, :], h.shape)
    if spec.variant == "exact":
        lo, hi = _ray_interval(zb, u, dom.equivalent_radius)
        radial = _radial_moment(hi, rho_c, n, r) - _radial_moment(lo, rho_c, n, r)
    else:
        s, w = spec.rule(0.0, 2.0)
        radial = np.zeros(rho.shape)
        for sk, wk in zip(s, w):
            pt = zb - sk * u
            radial += wk * sk ** (r - 1) * (1 + sk) ** (n - r) * weight(np.sqrt(np.sum(pt * pt, axis=-1)))
    scale = np.where(coincident, 0.0, radial / np.where(coincident, 1.0, rho_c) ** n)
    return h * scale[..., None]


def _axis_radial(xs: np.ndarray, dom: GridDomain) -> np.ndarray:
    """(s_hi^n - s_lo^n)/n along the rays x -/+ s e_i, shape (P, n, 2)."""
    n = dom.n
    out = np.zeros((len(xs), n, 2))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        for side, u in enumerate((e, -e)):
            lo, hi = _ray_interval(xs, np.broadcast_to(u, xs.shape), dom.equivalent_radius)
            out[:, i, side] = (hi**n - lo**n) / n
    return out


def _singular_cell(xs: np.ndarray, dom: GridDomain, r: int) -> np.ndarray:
    """Integral of K^i over the equivalent ball of one cell centred at x, shape (P, n).

    Sphere average by the 2n-point axis rule; as |h| -> 0 the radial factor tends to
    (s_hi^n - s_lo^n)/n along the exit ray.
    """
    radial = _axis_radial(xs, dom)
    coef = dom.cell_radius * unit_sphere_area(dom.n) / (2 * dom.n)
    return coef * (radial[..., 0] - radial[..., 1])


def _subtraction_terms(xs: np.ndarray, dom: GridDomain, r: int, node_vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact kernel moment W x / r and the lattice correction for the subtracted sum.

    With omega(z) - omega(x) under the sum the integrand near z = x behaves like
    -|x - z|^(2-n) R(x, u) u (u . grad omega); the punctured lattice sum misses
    h^2 zeta_n sum_i (R_+ + R_-)/(2n) d_i omega along each axis.
    """
    n = dom.n
    if n not in LATTICE_ZETA:
        raise ValueError(f"no lattice constant for n={n}")
    moment = dom.mask_volume * xs / r
    radial = _axis_radial(xs, dom)
    coef = LATTICE_ZETA[n] * dom.h**2 * (radial[..., 0] + radial[..., 1]) / (2 * n)
    grads = np.stack(np.gradient(node_vals, dom.h, axis=tuple(range(n)), edge_order=2), axis=-1)
    local = np.einsum("pi,pkai->pkia", coef, grads[dom.halo_mask])
    return moment, local


def _apply_kernel(
    dom: GridDomain,
    r: int,
    node_vals: np.ndarray,
    spec: KernelSpec,
    weight: CutoffWeight,
    line_pts: np.ndarray | None = None,
    line_vals: np.ndarray | None = None,
) -> np.ndarray:
    """Sum kernel against sources; node_vals shape (*grid, k, m_r), returns (*grid, k, m_{r-1})."""
    n = dom.n
    k = node_vals.shape[-2]
    xs = dom.points(dom.halo_mask)
    zs = dom.points(dom.halo_mask)
    zv = node_vals[dom.halo_mask] * dom.cell_volume
    table = contraction_table(n, r)
    m_out = math.comb(n, r - 1)
    mode = spec.singular
    if mode == "subtract" and spec.variant != "exact":
        mode = "equivalent_ball"
    sing = _singular_cell(xs, dom, r) if mode == "equivalent_ball" else None
    moment, local = _subtraction_terms(xs, dom, r, node_vals) if mode == "subtract" else (None, None)
    xv = node_vals[dom.halo_mask]
    logger.debug(f"t_kernel: {len(xs)} outputs x {len(zs)} nodes, variant={spec.variant}, singular={mode}, degree={r}")

    def block(lo: int, hi: int) -> np.ndarray:
        xb = xs[lo:hi]
        kv = _kernel_vectors(xb, zs, dom, r, spec, 0.0, weight)
        m = np.einsum("bzi,zka->bkia", kv, zv)
        if sing is not None:
            m = m + np.einsum("bi,bka->bkia", sing[lo:hi], xv[lo:hi])
        if moment is not None:
            missing = moment[lo:hi] - kv.sum(axis=1) * dom.cell_volume
            m = m + np.einsum("bi,bka->bkia", missing, xv[lo:hi]) + local[lo:hi]
        if line_pts is not None and len(line_pts):
            kl = _kernel_vectors(xb, line_pts, dom, r, spec, dom.cell_radius, weight)
            m = m + np.einsum("bzi,zka->bkia", kl, line_vals)
        out = np.zeros((hi - lo, k, m_out))
        for a, axis, j, sign in table:
            out[:, :, j] += sign * m[:, :, axis, a]
        return out

    res = np.concatenate(map_chunks(block, len(xs), spec.threads, spec.chunk), axis=0)
    if spec.normalize:
        res = res / (dom.mask_volume if spec.variant == "exact" else weight.mass(n))
    full = np.zeros((*dom.shape, k, m_out))
    full[dom.halo_mask] = res
    return full


def _segment_quadrature(mu: MeasureDensity) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint points along every segment, spacing <= h/2, carrying weight * ds."""
    dom = mu.domain
    pts, vals = [], []
    for seg in mu.singular_part:
        a, b = np.asarray(seg.start, dtype=float), np.asarray(seg.end, dtype=float)
        count = max(1, int(math.ceil(2 * seg.length / dom.h)))
        t = (np.arange(count) + 0.5) / count
        pts.append(a + t[:, None] * (b - a))
        w = np.asarray(seg.weight, dtype=float) * (seg.length / count)
        vals.append(np.broadcast_to(w, (count, *w.shape)))
    if not pts:
        return np.zeros((0, dom.n)), np.zeros((0, mu.rows, math.comb(dom.n, 2)))
    return np.concatenate(pts), np.concatenate(vals)


def t_kernel(
    omega: FormField | MeasureDensity,
    spec: KernelSpec = DEFAULT_SPEC,
    weight: CutoffWeight = PHI,
) -> FormField | MatrixField:
    """Kernel form of T. A FormField maps to a form of one degree less; a MeasureDensity
    (one 2-form per row) maps to the MatrixField whose rows are the resulting 1-forms."""
    if isinstance(omega, MeasureDensity):
        dom = omega.domain
        vals = np.stack([f.coeffs for f in omega.ac_part], axis=-2)
        lp, lv = _segment_quadrature(omega)
        out = _apply_kernel(dom, 2, vals, spec, weight, lp, lv)
        return MatrixField(dom, out)
    if omega.degree < 1:
        raise ValueError("T needs a form of degree >= 1")
    out = _apply_kernel(omega.domain, omega.degree, omega.coeffs[..., None, :], spec, weight)
    return FormField(omega.domain, omega.degree - 1, out[..., 0, :])


def kernel_discrepancy(omega: FormField, spec: KernelSpec = DEFAULT_SPEC) -> float:
    """Relative L^1 gap on the mask between the displayed (literal) kernel and the exact one."""
    exact = t_kernel(omega, replace(spec, variant="exact"))
    literal = t_kernel(omega, replace(spec, variant="literal"))
    dom = omega.domain
    den = fsum(magnitude(exact)[dom.mask])
    if den == 0:
        return 0.0
    return fsum(magnitude(literal - exact)[dom.mask]) / den


# ---------------------------------------------------------------------------
# Envelope, identity, potentials
# ---------------------------------------------------------------------------


def riesz_envelope_field(omega: FormField | np.ndarray, domain: GridDomain | None = None, threads: int = 1) -> np.ndarray:
    """sum_y |omega(y)| / |x - y|^(n-1) cell_volume at every masked x (equivalent-ball singular cell)."""
    dom = omega.domain if isinstance(omega, FormField) else domain
    if dom is None:
        raise ValueError("domain required for raw arrays")
    mag = magnitude(omega)
    ys = dom.points()
    wy = mag[dom.mask] * dom.cell_volume
    xs = ys
    self_term = mag[dom.mask] * unit_sphere_area(dom.n) * dom.cell_radius

    def block(lo: int, hi: int) -> np.ndarray:
        d = np.sqrt(np.sum((xs[lo:hi, None, :] - ys[None, :, :]) ** 2, axis=-1))
        inv = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0) ** (dom.n - 1), 0.0)
        return np.sum(inv * wy[None, :], axis=1)

    vals = np.concatenate(map_chunks(block, len(xs), threads), axis=0) + self_term
    out = np.zeros(dom.shape)
    out[dom.mask] = vals
    return out


def riesz_envelope(omega: FormField, x: np.ndarray) -> float:
    """Envelope at a single point; the singular cell is used only when x is a node."""
    dom = omega.domain
    x = np.asarray(x, dtype=float)
    ys = dom.points()
    mag = magnitude(omega)[dom.mask]
    d = np.sqrt(np.sum((ys - x) ** 2, axis=-1))
    hit = d < 1e-12 * max(dom.h, 1.0)
    inv = np.where(hit, 0.0, 1.0 / np.where(hit, 1.0, d) ** (dom.n - 1))
    total = fsum(inv * mag) * dom.cell_volume
    if hit.any():
        total += float(mag[hit][0]) * unit_sphere_area(dom.n) * dom.cell_radius
    return total


def envelope_constant(omega: FormField, spec: KernelSpec = DEFAULT_SPEC, inner_radius: float = 0.75) -> float:
    """max over nodes with |x| <= inner_radius * R of |T omega(x)| / riesz_envelope(omega, x).

    The sub-ball is fixed in physical units, not in grid steps.
    """
    dom = omega.domain
    if not 0 < inner_radius <= 1:
        raise ValueError(f"inner_radius must lie in (0, 1], got {inner_radius}")
    t_mag = magnitude(t_kernel(omega, spec))
    env = riesz_envelope_field(omega, threads=spec.threads)
    interior = dom.mask & (dom.norm <= inner_radius * dom.radius + 1e-12) & (env > 0)
    if not interior.any():
        raise ValueError("envelope vanishes on every interior node")
    return float(np.max(t_mag[interior] / env[interior]))


def homotopy_residual(
    omega: FormField,
    spec: KernelSpec = DEFAULT_SPEC,
    operator: Literal["kernel", "direct"] = "kernel",
    inner_radius: float = 0.8,
) -> float:
    """||omega - T d omega - d T omega||_1 / ||omega||_1 over |x| <= inner_radius."""
    dom, r = omega.domain, omega.degree
    if not 1 <= r <= dom.n - 1:
        raise ValueError(f"degree must lie in [1, {dom.n - 1}], got {r}")
    apply = t_kernel if operator == "kernel" else t_direct
    region = dom.mask & (dom.norm <= inner_radius * dom.radius + 1e-12)
    den = fsum(magnitude(omega)[region])
    if den == 0:
        raise ValueError("omega vanishes on the interior sub-ball")
    t_d = apply(exterior_derivative(omega), spec)
    d_t = exterior_derivative(apply(omega, spec))
    resid = omega.coeffs - t_d.coeffs - d_t.coeffs
    value = fsum(np.sqrt(np.sum(resid**2, axis=-1))[region]) / den
    logger.debug(f"homotopy_residual res={dom.res} degree={r} -> {value:.4g}")
    return value


def recover_potential(
    a: MatrixField,
    curl: MeasureDensity | None = None,
    spec: KernelSpec = DEFAULT_SPEC,
) -> list[FormField]:
    """Potentials g^i = T (A - T dA)^i; d(A - T dA) = 0 so dg reproduces the closed part."""
    mu = curl_of_matrix(a) if curl is None else curl
    tda = t_kernel(mu, spec)
    closed = MatrixField(a.domain, a.values - tda.values)
    return [t_kernel(f, spec) for f in closed.row_forms()]


def closed_part(a: MatrixField, curl: MeasureDensity | None = None, spec: KernelSpec = DEFAULT_SPEC) -> MatrixField:
    mu = curl_of_matrix(a) if curl is None else curl
    return MatrixField(a.domain, a.values - t_kernel(mu, spec).values)


def potential_gradient(g: list[FormField]) -> MatrixField:
    """MatrixField whose row i is dg^i."""
    return MatrixField.from_row_forms([exterior_derivative(gi) for gi in g])


def weak_bound_ratio(curl: MeasureDensity, spec: KernelSpec = DEFAULT_SPEC) -> float:
    """||T curl||_{L^{1*,inf}} / |curl|(B)."""
    tv = total_variation(curl)
    if tv <= 0:
        raise ValueError("curl has zero total variation")
    tda = t_kernel(curl, spec)
    return weak_lp_norm(tda, critical_exponent(curl.domain.n)) / tv


def smooth_test_form(
    domain: GridDomain,
    degree: int,
    seed: int = 0,
    support: float | None = None,
    modes: int = 3,
) -> FormField:
    """Random smooth form: a few low-frequency cosines per coefficient, optionally
    multiplied by the bump (1 - |x|^2/support^2)^3 so it vanishes for |x| >= support."""
    rng = np.random.default_rng(seed)
    x = domain.coords
    m = len(multi_indices(domain.n, degree))
    coeffs = np.zeros((*domain.shape, m))
    for j in range(m):
        for _ in range(modes):
            freq = rng.integers(-2, 3, size=domain.n) * (np.pi / 2)
            coeffs[..., j] += rng.normal() * np.cos(x @ freq + rng.uniform(0, 2 * np.pi))
    if support is not None:
        bump = np.clip(1 - (domain.norm / support) ** 2, 0.0, None) ** 3
        coeffs *= bump[..., None]
    return FormField(domain, degree, coeffs)
