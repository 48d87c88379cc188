"""Calderon-Zygmund decomposition, the convex continuation psi, the I / I' / II split
and the elementary exponential tail estimate.

Dyadic cubes live in index space over the grid padded to a power of two. Cube
means use the full cube measure with F extended by zero off the mask, so a
selected cube's mean is at most 2^n times its parent's.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad

from rigidlab.grid import (
    Field,
    block_view,
    bmo_seminorm,
    components,
    fsum,
    magnitude,
    pad_to_dyadic,
    padded_size,
)
from rigidlab.log import logger
from rigidlab.types import CZDecomposition, DyadicCube, GridDomain, InvariantError, critical_exponent

REL_TOL = 1e-12


def _domain(f: Field, domain: GridDomain | None) -> GridDomain:
    if domain is not None:
        return domain
    if isinstance(f, np.ndarray):
        raise ValueError("domain required for raw arrays")
    return f.domain


def _block_sums(arr: np.ndarray, side: int, n: int) -> np.ndarray:
    return block_view(arr, side, n).sum(axis=tuple(range(1, 2 * n, 2)))


def cz_decompose(f: np.ndarray, lam: float, p: float, *, domain: GridDomain) -> CZDecomposition:
    """Stopping-time decomposition of a nonnegative grid function at threshold 2^-n lam^p.

    The base cube is the dyadic hull of the grid, doubled (F extended by zero) until its
    mean is at most the threshold, so every selected cube has a parent below it.
    Maximal dyadic cubes with mean above the threshold are selected top-down; the
    good part equals F off the cubes and 0 on them.
    """
    f = np.asarray(f, dtype=float)
    n = domain.n
    if f.shape != domain.shape:
        raise ValueError(f"F has shape {f.shape}, expected {domain.shape}")
    if not lam > 1:
        raise ValueError(f"lam must be > 1, got {lam}")
    values = np.where(domain.mask, f, 0.0)
    if np.any(np.isnan(values)) or np.any(values < 0):
        raise ValueError("F must be nonnegative")
    threshold = 2.0**-n * lam**p
    upper = lam**p
    padded = pad_to_dyadic(values, n)
    size = padded.shape[0]
    covered = np.zeros(padded.shape, dtype=bool)
    cubes: list[DyadicCube] = []

    # base cube: dyadic hull of the padded grid, doubled until its mean is <= threshold
    mass = fsum(padded)
    top = size
    while mass / top**n > threshold:
        top *= 2
    if top > size:
        logger.debug(f"cz_decompose: base cube enlarged from {size} to {top} nodes per side")

    side, level = top, 0
    while side > size:
        mean = mass / side**n
        if mean > threshold and not covered.any():
            cubes.append(DyadicCube((0,) * n, side, level, mean))
            covered[...] = True
        side //= 2
        level += 1

    while side >= 1:
        means = _block_sums(padded, side, n) / side**n
        taken = block_view(covered, side, n).any(axis=tuple(range(1, 2 * n, 2)))
        pick = (means > threshold) & ~taken
        for idx in np.argwhere(pick):
            corner = tuple(int(i) * side for i in idx)
            cube = DyadicCube(corner, side, level, float(means[tuple(idx)]))
            cubes.append(cube)
            covered[cube.slices()] = True
        side //= 2
        level += 1

    inside = covered[tuple(slice(0, domain.res) for _ in range(n))]
    good = np.where(inside, 0.0, values)
    vol = domain.cell_volume
    union = math.fsum(c.side**n for c in cubes) * vol
    total = fsum(values) * vol

    paint = np.zeros(padded.shape, dtype=int)
    for c in cubes:
        paint[c.slices()] += 1
    checks = {
        "disjoint": bool(paint.max(initial=0) <= 1),
        "mean_bounds": all(threshold < c.mean <= upper * (1 + REL_TOL) for c in cubes),
        "good_bound": bool(good.max(initial=0.0) <= threshold * (1 + REL_TOL)),
        "union_measure": (union < 2.0**n * lam**-p * total) if cubes else True,
    }
    logger.debug(f"cz_decompose: {len(cubes)} cubes, padded size {size}, checks {checks}")
    return CZDecomposition(good, cubes, lam, p, threshold, union, total, checks)


def verify_decomposition(dec: CZDecomposition) -> None:
    failed = [name for name, ok in dec.checks.items() if not ok]
    if failed:
        raise InvariantError(f"CZ invariants violated: {', '.join(failed)}")


def psi(t: np.ndarray | float, lam: float, n: int = 3) -> np.ndarray | float:
    """t^{1*} below lam, its tangent line continued above lam."""
    q = critical_exponent(n)
    t_arr = np.asarray(t, dtype=float)
    out = np.where(t_arr <= lam, np.abs(t_arr) ** q, q * lam ** (q - 1) * t_arr + (1 - q) * lam**q)
    return float(out) if out.ndim == 0 else out


def split_i_ii(tda: Field, lam: float, p: float, *, domain: GridDomain | None = None) -> dict[str, float]:
    """I, I' and II of |TdA|^p about lam, with the BMO seminorm alongside.

    I' is integrated exactly against the piecewise-constant survival function of the
    sorted node values, so I = lam^p |{|TdA| > lam}| + I' holds to rounding.
    """
    if not lam > 1:
        raise ValueError(f"lam must be > 1, got {lam}")
    dom = _domain(tda, domain)
    vol = dom.cell_volume
    mags = magnitude(tda)[dom.mask]
    above = np.sort(mags[mags > lam])[::-1]
    below = mags[mags <= lam]
    big_i = fsum(above**p) * vol
    small_ii = fsum(below**p) * vol
    # survival |{> s}| = k vol on [m_{k+1}, m_k), m_{K+1} = lam
    nxt = np.append(above[1:], lam)
    k = np.arange(1, above.size + 1)
    i_prime = fsum(k * (above**p - nxt**p)) * vol
    level_set = above.size * vol
    gap = abs(big_i - (lam**p * level_set + i_prime))
    if gap > 1e-9 * max(big_i, 1.0):
        raise InvariantError(f"layer-cake identity off by {gap:.3e}")
    return {
        "I": big_i,
        "I_prime": i_prime,
        "II": small_ii,
        "level_set_measure": level_set,
        "identity_gap": gap,
        "bmo": bmo_seminorm(tda, domain=dom),
    }


def jensen_check(tda: Field, dec: CZDecomposition, *, domain: GridDomain | None = None) -> dict[str, float | bool]:
    """|mean of TdA over Q_j| <= lam on every selected cube (means over the full cube measure)."""
    dom = _domain(tda, domain)
    comps = np.where(dom.mask[..., None], components(tda), 0.0)
    padded = pad_to_dyadic(comps, dom.n)
    worst = 0.0
    for cube in dec.cubes:
        block = padded[cube.slices()]
        mean = block.reshape(-1, block.shape[-1]).sum(axis=0) / cube.side**dom.n
        worst = max(worst, float(np.linalg.norm(mean)) / dec.level)
    return {"cubes": len(dec.cubes), "max_ratio": worst, "ok": worst <= 1.0 + REL_TOL}


def find_lambda(tda: Field, p: float, *, domain: GridDomain | None = None, growth: float = 2**0.25) -> float:
    """Smallest lam = growth^k (k >= 1) with I' <= 1/2 int |TdA|^p."""
    if not growth > 1:
        raise ValueError("growth must be > 1")
    dom = _domain(tda, domain)
    mags = magnitude(tda)[dom.mask]
    half = 0.5 * fsum(mags**p) * dom.cell_volume
    lam = growth
    while True:
        excess = mags[mags > lam]
        i_prime = fsum(excess**p - lam**p) * dom.cell_volume
        if i_prime <= half:
            return lam
        lam *= growth


def _all_cubes(dom: GridDomain, min_side: int = 2) -> list[DyadicCube]:
    size = padded_size(dom.res)
    mask = pad_to_dyadic(dom.mask.astype(float), dom.n)
    out = []
    side, level = size, 0
    while side >= min_side:
        counts = _block_sums(mask, side, dom.n)
        for idx in np.argwhere(counts > 0):
            out.append(DyadicCube(tuple(int(i) * side for i in idx), side, level))
        side //= 2
        level += 1
    return out


def oscillation_tail_fit(
    tda: Field,
    cubes: list[DyadicCube] | None = None,
    *,
    domain: GridDomain | None = None,
    samples: int = 24,
) -> dict[str, float]:
    """Least-squares fit of log(|{x in Q: |f - f_Q| > s ||f||_BMO}| / |Q|) ~ log C1 - C2 s.

    Cubes default to every dyadic cube (side >= 2 nodes) meeting the mask; fractions
    are pooled over cubes and taken over masked nodes.
    """
    dom = _domain(tda, domain)
    bmo = bmo_seminorm(tda, domain=dom)
    if bmo <= 0:
        raise ValueError("field has no mean oscillation")
    comps = pad_to_dyadic(components(tda), dom.n)
    mask = pad_to_dyadic(dom.mask.astype(float), dom.n) > 0
    family = [c for c in (cubes if cubes is not None else _all_cubes(dom)) if c.side >= 2]
    devs = []
    for cube in family:
        sl = cube.slices()
        sel = mask[sl]
        if not sel.any():
            continue
        vals = comps[sl][sel]
        d = np.linalg.norm(vals - vals.mean(axis=0), axis=-1) / bmo
        devs.append(d)
    if not devs:
        raise ValueError("no cube of side >= 2 meets the mask")
    top = max(float(d.max()) for d in devs)
    grid = np.linspace(0.0, top, samples, endpoint=False)
    frac = np.array([np.mean([np.mean(d > s) for d in devs]) for s in grid])
    keep = frac > 0
    if keep.sum() < 2:
        return {"C1": float(frac[0]), "C2": 0.0, "points": int(keep.sum())}
    slope, intercept = np.polyfit(grid[keep], np.log(frac[keep]), 1)
    return {"C1": float(math.exp(intercept)), "C2": float(-slope), "points": int(keep.sum())}


def tail_integral_check(x: float, q: float) -> dict[str, float]:
    """int_x^inf s^q e^-s ds <= e^-x (1 + x) for q <= 1, x >= 1; raises on violation."""
    if q > 1:
        raise ValueError(f"q must be <= 1, got {q}")
    if x < 1:
        raise ValueError(f"x must be >= 1, got {x}")
    lhs, err = quad(lambda s: s**q * math.exp(-s), x, math.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    rhs = math.exp(-x) * (1 + x)
    if lhs > rhs * (1 + 1e-10):
        raise InvariantError(f"tail estimate fails at x={x}, q={q}: {lhs} > {rhs}")
    return {"x": x, "q": q, "lhs": lhs, "rhs": rhs, "margin": rhs - lhs, "quad_error": err}
