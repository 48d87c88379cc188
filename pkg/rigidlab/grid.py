"""Ball grid, exterior derivative, Curl and the norms used by every check.

All reductions go through fsum so totals do not depend on traversal order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from rigidlab.types import (
    FormField,
    GridDomain,
    MatrixField,
    MeasureDensity,
    Segment,
    multi_indices,
)

Field = FormField | MatrixField | MeasureDensity | np.ndarray


def make_domain(n: int, res: int, radius: float = 1.0) -> GridDomain:
    """Grid centered at the origin; res must be odd so the origin is a node."""
    return GridDomain(n=n, res=res, radius=radius)


def fsum(values: np.ndarray) -> float:
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())


@dataclass(frozen=True)
class Box:
    """Half-open axis-aligned region [lo, hi)."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def contains(self, pts: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((pts >= lo) & (pts < hi), axis=-1)


# ---------------------------------------------------------------------------
# Exterior calculus
# ---------------------------------------------------------------------------


def exterior_derivative(omega: FormField) -> FormField:
    """d on node-collocated forms: centered differences inside, one-sided on the box faces.

    (d omega)_beta = sum_k (-1)^k d_{beta_k} omega_{beta without beta_k}
    """
    dom = omega.domain
    n, r = dom.n, omega.degree
    if r >= n:
        raise ValueError(f"exterior derivative of a degree-{r} form in dimension {n} is zero-dimensional")
    src = {alpha: j for j, alpha in enumerate(multi_indices(n, r))}
    targets = multi_indices(n, r + 1)
    out = np.zeros((*dom.shape, len(targets)))
    cache: dict[tuple[int, int], np.ndarray] = {}
    for b, beta in enumerate(targets):
        for k, axis in enumerate(beta):
            j = src[beta[:k] + beta[k + 1 :]]
            key = (j, axis)
            if key not in cache:
                cache[key] = np.gradient(omega.coeffs[..., j], dom.h, axis=axis, edge_order=1)
            if k % 2:
                out[..., b] -= cache[key]
            else:
                out[..., b] += cache[key]
    return FormField(dom, r + 1, out)


def curl_of_matrix(a: MatrixField) -> MeasureDensity:
    """Row-wise exterior derivative; no singular part."""
    return MeasureDensity(a.domain, tuple(exterior_derivative(f) for f in a.row_forms()))


def contraction_table(n: int, r: int) -> list[tuple[int, int, int, float]]:
    """Entries (source alpha, vector axis, target index, sign) of omega -| v for degree r."""
    if r < 1:
        raise ValueError("cannot contract a 0-form")
    tgt = {beta: j for j, beta in enumerate(multi_indices(n, r - 1))}
    table = []
    for a, alpha in enumerate(multi_indices(n, r)):
        for k, axis in enumerate(alpha):
            table.append((a, axis, tgt[alpha[:k] + alpha[k + 1 :]], -1.0 if k % 2 else 1.0))
    return table


def contract(coeffs: np.ndarray, v: np.ndarray, n: int, r: int) -> np.ndarray:
    """Interior product omega -| v, broadcasting over leading axes."""
    shape = np.broadcast_shapes(coeffs.shape[:-1], v.shape[:-1])
    out = np.zeros((*shape, math.comb(n, r - 1)))
    for a, axis, j, sign in contraction_table(n, r):
        out[..., j] += sign * coeffs[..., a] * v[..., axis]
    return out


def interpolate(values: FormField | np.ndarray, points: np.ndarray, domain: GridDomain | None = None) -> np.ndarray:
    """Multilinear interpolation of node values at arbitrary points (linear extrapolation outside)."""
    if isinstance(values, FormField):
        domain, data = values.domain, values.coeffs
    else:
        data = values
    if domain is None:
        raise ValueError("domain required for raw arrays")
    grid = (domain.axis,) * domain.n
    interp = RegularGridInterpolator(grid, data, method="linear", bounds_error=False, fill_value=None)
    return interp(points)


def circulation(
    form: FormField,
    center: tuple[float, ...] | None = None,
    radius: float = 0.5,
    plane: tuple[int, int] = (0, 1),
    samples: int = 720,
) -> float:
    """Line integral of a 1-form around a circle, counter-clockwise in the given coordinate plane."""
    if form.degree != 1:
        raise ValueError("circulation needs a 1-form")
    n = form.domain.n
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    theta = 2 * np.pi * np.arange(samples) / samples
    ea, eb = np.eye(n)[plane[0]], np.eye(n)[plane[1]]
    pts = c + radius * (np.cos(theta)[:, None] * ea + np.sin(theta)[:, None] * eb)
    tangent = radius * (-np.sin(theta)[:, None] * ea + np.cos(theta)[:, None] * eb)
    vals = interpolate(form, pts)
    return fsum(np.sum(vals * tangent, axis=-1)) * 2 * np.pi / samples


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------


def components(f: Field) -> np.ndarray:
    """Pointwise component array, shape (*grid, c)."""
    if isinstance(f, FormField):
        return f.coeffs
    if isinstance(f, MatrixField):
        return f.values.reshape(*f.values.shape[:-2], -1)
    if isinstance(f, MeasureDensity):
        return np.concatenate([a.coeffs for a in f.ac_part], axis=-1)
    return np.asarray(f, dtype=float)[..., None]


def magnitude(f: Field) -> np.ndarray:
    """Euclidean/Frobenius norm per node."""
    if isinstance(f, np.ndarray):
        return np.abs(f)
    return np.sqrt(np.sum(components(f) ** 2, axis=-1))


def _domain_of(f: Field, domain: GridDomain | None) -> GridDomain:
    if domain is not None:
        return domain
    if isinstance(f, np.ndarray):
        raise ValueError("domain required for raw arrays")
    return f.domain


def _selected(f: Field, domain: GridDomain | None, where: np.ndarray | None) -> tuple[np.ndarray, GridDomain]:
    dom = _domain_of(f, domain)
    sel = dom.mask if where is None else (where & dom.mask)
    return magnitude(f)[sel], dom


def lp_norm(f: Field, p: float, *, domain: GridDomain | None = None, where: np.ndarray | None = None) -> float:
    """(sum over masked nodes of |f|^p * cell_volume)^(1/p)."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    mags, dom = _selected(f, domain, where)
    return (fsum(mags**p) * dom.cell_volume) ** (1.0 / p)


def integral_power(f: Field, p: float, *, domain: GridDomain | None = None, where: np.ndarray | None = None) -> float:
    """sum over masked nodes of |f|^p * cell_volume (no root)."""
    mags, dom = _selected(f, domain, where)
    return fsum(mags**p) * dom.cell_volume


def weak_lp_norm(f: Field, p: float, *, domain: GridDomain | None = None, where: np.ndarray | None = None) -> float:
    """Exact sup_t t |{|f| > t}|^(1/p) for the empirical measure on the mask."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    mags, dom = _selected(f, domain, where)
    if mags.size == 0:
        return 0.0
    ordered = np.sort(mags)[::-1]
    k = np.arange(1, ordered.size + 1)
    return float(np.max(ordered * (k * dom.cell_volume) ** (1.0 / p)))


def quasi_triangle_constant(fields: list[Field], p: float, *, domain: GridDomain | None = None) -> float:
    """Largest observed ||f+g|| / (||f|| + ||g||) over pairs in weak L^p."""
    dom = _domain_of(fields[0], domain)
    comps = [components(f) for f in fields]
    worst = 0.0
    for i, j in combinations(range(len(comps)), 2):
        a = weak_lp_norm(np.sqrt(np.sum(comps[i] ** 2, -1)), p, domain=dom)
        b = weak_lp_norm(np.sqrt(np.sum(comps[j] ** 2, -1)), p, domain=dom)
        s = weak_lp_norm(np.sqrt(np.sum((comps[i] + comps[j]) ** 2, -1)), p, domain=dom)
        if a + b > 0:
            worst = max(worst, s / (a + b))
    return worst


def dist_so(m: np.ndarray) -> np.ndarray | float:
    """Frobenius distance to SO(n) via singular values; stacks over leading axes."""
    m = np.asarray(m, dtype=float)
    sigma = np.linalg.svd(m, compute_uv=False)
    neg = np.asarray(np.linalg.det(m) < 0)
    sigma = np.where(neg[..., None], np.concatenate([sigma[..., :-1], -sigma[..., -1:]], axis=-1), sigma)
    out = np.sqrt(np.sum((sigma - 1.0) ** 2, axis=-1))
    return float(out) if out.ndim == 0 else out


def dist_so_field(a: MatrixField) -> np.ndarray:
    out = np.zeros(a.domain.shape)
    sel = a.domain.mask
    out[sel] = dist_so(a.values[sel])
    return out


def project_so(m: np.ndarray) -> np.ndarray:
    """Nearest rotation (polar factor, smallest singular direction flipped when det < 0)."""
    u, _, vt = np.linalg.svd(m)
    d = np.ones(m.shape[-1])
    d[-1] = np.sign(np.linalg.det(u @ vt)) or 1.0
    return (u * d) @ vt


# ---------------------------------------------------------------------------
# Measures
# ---------------------------------------------------------------------------


def _clip_interval(seg: Segment, region: Box | None, radius: float) -> float:
    """Length of the part of a segment inside the ball (and the box, if given)."""
    a = np.asarray(seg.start, dtype=float)
    d = np.asarray(seg.end, dtype=float) - a
    t0, t1 = 0.0, 1.0
    # ball: |a + t d|^2 <= R^2
    qa, qb, qc = d @ d, 2 * a @ d, a @ a - radius**2
    if qa == 0:
        return 0.0
    disc = qb * qb - 4 * qa * qc
    if disc <= 0:
        return 0.0
    root = math.sqrt(disc)
    t0, t1 = max(t0, (-qb - root) / (2 * qa)), min(t1, (-qb + root) / (2 * qa))
    if region is not None:
        for k in range(a.size):
            lo, hi = region.lo[k], region.hi[k]
            if d[k] == 0:
                if not lo <= a[k] < hi:
                    return 0.0
                continue
            s0, s1 = (lo - a[k]) / d[k], (hi - a[k]) / d[k]
            t0, t1 = max(t0, min(s0, s1)), min(t1, max(s0, s1))
    return max(0.0, t1 - t0) * math.sqrt(qa)


def total_variation(mu: MeasureDensity, region: Box | None = None) -> float:
    """|mu|(region): density mass on masked nodes plus segment length times |weight|."""
    dom = mu.domain
    sel = dom.mask if region is None else (dom.mask & region.contains(dom.coords))
    mass = fsum(mu.density_magnitude()[sel]) * dom.cell_volume
    line = math.fsum(_clip_interval(s, region, dom.radius) * s.weight_norm for s in mu.singular_part)
    return mass + line


# ---------------------------------------------------------------------------
# BMO over dyadic cubes
# ---------------------------------------------------------------------------


def padded_size(res: int) -> int:
    size = 1
    while size < res:
        size *= 2
    return size


def pad_to_dyadic(arr: np.ndarray, n: int, fill: float = 0.0) -> np.ndarray:
    """Pad the n leading grid axes up to the next power of two."""
    size = padded_size(arr.shape[0])
    pad = [(0, size - arr.shape[0])] * n + [(0, 0)] * (arr.ndim - n)
    return np.pad(arr, pad, constant_values=fill)


def block_view(arr: np.ndarray, side: int, n: int) -> np.ndarray:
    """Reshape (P,)*n + tail into (P/side, side)*n + tail."""
    size = arr.shape[0]
    b = size // side
    return arr.reshape(*([b, side] * n), *arr.shape[n:])


def bmo_seminorm(f: Field, *, domain: GridDomain | None = None) -> float:
    """Max over dyadic sub-cubes (>= 2 nodes per side) of the mean |f - f_Q| over masked nodes."""
    dom = _domain_of(f, domain)
    n = dom.n
    vals = pad_to_dyadic(components(f), n)
    w = pad_to_dyadic(dom.mask.astype(float), n)
    size = w.shape[0]
    inner = tuple(range(1, 2 * n, 2))
    best = 0.0
    side = 2
    while side <= size:
        wb = block_view(w, side, n)
        fb = block_view(vals * w[..., None], side, n)
        count = wb.sum(axis=inner)
        sums = fb.sum(axis=inner)
        mean = np.where(count[..., None] > 0, sums / np.maximum(count, 1)[..., None], 0.0)
        expand = mean.reshape(*[s for c in mean.shape[:n] for s in (c, 1)], mean.shape[-1])
        dev = np.sqrt(np.sum((block_view(vals, side, n) - expand) ** 2, axis=-1)) * wb
        osc = np.where(count > 0, dev.sum(axis=inner) / np.maximum(count, 1), 0.0)
        best = max(best, float(osc.max()))
        side *= 2
    return best
