"""Tests for the ball grid, exterior calculus, norms and measures."""

from __future__ import annotations

import math

import numpy as np
import pytest

from rigidlab.grid import (
    Box,
    bmo_seminorm,
    circulation,
    contract,
    curl_of_matrix,
    dist_so,
    exterior_derivative,
    interpolate,
    lp_norm,
    make_domain,
    padded_size,
    project_so,
    quasi_triangle_constant,
    total_variation,
    weak_lp_norm,
)
from rigidlab.types import FormField, GridDomain, MatrixField, MeasureDensity
from tests.conftest import axis_segment, random_rotation


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _smooth_scalar(dom: GridDomain) -> np.ndarray:
    x = dom.coords
    return np.sin(1.3 * x[..., 0]) * np.cos(0.7 * x[..., -1]) + 0.2 * np.sum(x**2, axis=-1)


def _bmo_by_enumeration(f: np.ndarray, dom: GridDomain) -> float:
    size = padded_size(dom.res)
    vals = np.zeros((size, size))
    mask = np.zeros((size, size), dtype=bool)
    vals[: dom.res, : dom.res] = f
    mask[: dom.res, : dom.res] = dom.mask
    best = 0.0
    side = 2
    while side <= size:
        for i in range(0, size, side):
            for j in range(0, size, side):
                sel = mask[i : i + side, j : j + side]
                if not sel.any():
                    continue
                v = vals[i : i + side, j : j + side][sel]
                best = max(best, float(np.mean(np.abs(v - v.mean()))))
        side *= 2
    return best


# ---------------------------------------------------------------------------
# Domain
# ---------------------------------------------------------------------------

class TestDomain:
    def test_three_by_three_plane(self) -> None:
        dom = make_domain(2, 3)
        assert dom.coords.shape == (3, 3, 2)
        assert dom.node_count == 5
        assert dom.mask[1, 1]
        assert not dom.mask[0, 0]

    def test_mask_volume_approximates_ball(self, ball17: GridDomain) -> None:
        assert ball17.mask_volume == pytest.approx(4 * math.pi / 3, rel=0.05)

    def test_equivalent_radius_matches_mask_volume(self, ball17: GridDomain) -> None:
        assert 4 * math.pi / 3 * ball17.equivalent_radius**3 == pytest.approx(ball17.mask_volume, rel=1e-12)

    def test_even_res_rejected(self) -> None:
        with pytest.raises(ValueError, match="odd"):
            make_domain(3, 4)

    def test_unsupported_dimension_rejected(self) -> None:
        with pytest.raises(ValueError):
            make_domain(5, 9)

    def test_halo_contains_mask(self, ball9: GridDomain) -> None:
        assert np.all(ball9.halo_mask[ball9.mask])
        assert ball9.halo_mask.sum() > ball9.node_count


# ---------------------------------------------------------------------------
# Exterior derivative
# ---------------------------------------------------------------------------

class TestExteriorDerivative:
    def test_x2_dx1_is_minus_area_form(self, plane9: GridDomain) -> None:
        coeffs = np.zeros((*plane9.shape, 2))
        coeffs[..., 0] = plane9.coords[..., 1]
        d = exterior_derivative(FormField(plane9, 1, coeffs))
        assert d.degree == 2
        np.testing.assert_allclose(d.coeffs[..., 0], -1.0, atol=1e-12)

    def test_constant_form_is_closed(self, ball9: GridDomain) -> None:
        coeffs = np.broadcast_to([1.0, -2.0, 0.5], (*ball9.shape, 3)).copy()
        d = exterior_derivative(FormField(ball9, 1, coeffs))
        assert np.max(np.abs(d.coeffs)) == 0.0

    def test_top_degree_rejected(self, plane9: GridDomain) -> None:
        with pytest.raises(ValueError):
            exterior_derivative(FormField.zeros(plane9, 2))

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_dd_vanishes_inside(self, n: int) -> None:
        dom = make_domain(n, 9)
        f = FormField(dom, 0, _smooth_scalar(dom)[..., None])
        form = f
        for _ in range(n - 1):
            dd = exterior_derivative(exterior_derivative(form))
            inner = dd.coeffs[(slice(2, -2),) * n]
            assert np.max(np.abs(inner)) < 1e-10
            form = exterior_derivative(form)
            if form.degree >= n - 1:
                break

    def test_dd_vanishes_on_one_forms(self, ball9: GridDomain, rng: np.random.Generator) -> None:
        x = ball9.coords
        coeffs = np.stack([np.sin(x[..., 1] + k) * np.cos(x[..., (k + 2) % 3]) for k in range(3)], axis=-1)
        dd = exterior_derivative(exterior_derivative(FormField(ball9, 1, coeffs)))
        assert dd.degree == 3
        assert np.max(np.abs(dd.coeffs[2:-2, 2:-2, 2:-2])) < 1e-10

    def test_curl_of_constant_rotation_is_zero(self, ball9: GridDomain) -> None:
        a = MatrixField.constant(ball9, random_rotation(3, seed=4))
        assert total_variation(curl_of_matrix(a)) == 0.0


class TestContraction:
    def test_area_form_against_axes(self) -> None:
        area = np.array([1.0])
        np.testing.assert_allclose(contract(area, np.array([1.0, 0.0]), 2, 2), [0.0, 1.0])
        np.testing.assert_allclose(contract(area, np.array([0.0, 1.0]), 2, 2), [-1.0, 0.0])

    def test_one_form_is_dot_product(self) -> None:
        v = np.array([0.3, -1.0, 2.0])
        w = np.array([1.5, 0.5, -0.25])
        assert contract(w, v, 3, 1)[0] == pytest.approx(float(w @ v))


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

class TestNorms:
    def test_l2_of_one_is_root_ball_volume(self, ball17: GridDomain) -> None:
        ones = np.ones(ball17.shape)
        assert lp_norm(ones, 2, domain=ball17) == pytest.approx(math.sqrt(4 * math.pi / 3), rel=0.05)

    def test_zero_field(self, ball9: GridDomain) -> None:
        assert lp_norm(np.zeros(ball9.shape), 2, domain=ball9) == 0.0
        assert weak_lp_norm(np.zeros(ball9.shape), 1.5, domain=ball9) == 0.0

    def test_homogeneity(self, ball9: GridDomain, rng: np.random.Generator) -> None:
        f = rng.normal(size=ball9.shape)
        for p in (1.0, 1.5, 2.0):
            assert lp_norm(-3.0 * f, p, domain=ball9) == pytest.approx(3.0 * lp_norm(f, p, domain=ball9), rel=1e-12)
            assert weak_lp_norm(-3.0 * f, p, domain=ball9) == pytest.approx(
                3.0 * weak_lp_norm(f, p, domain=ball9), rel=1e-12
            )

    def test_p_below_one_rejected(self, ball9: GridDomain) -> None:
        with pytest.raises(ValueError):
            lp_norm(np.ones(ball9.shape), 0.5, domain=ball9)

    def test_weak_norm_of_indicator(self, ball9: GridDomain) -> None:
        f = (ball9.coords[..., 0] > 0).astype(float)
        measure = float((f[ball9.mask] > 0).sum()) * ball9.cell_volume
        assert weak_lp_norm(f, 1.5, domain=ball9) == pytest.approx(measure ** (1 / 1.5), rel=1e-12)

    def test_weak_below_strong(self, ball9: GridDomain, rng: np.random.Generator) -> None:
        for _ in range(5):
            f = np.abs(rng.standard_cauchy(size=ball9.shape))
            for p in (1.5, 2.0):
                assert weak_lp_norm(f, p, domain=ball9) <= lp_norm(f, p, domain=ball9) * (1 + 1e-12)

    def test_quasi_triangle_constant_at_most_two(self, ball9: GridDomain, rng: np.random.Generator) -> None:
        fields = [rng.normal(size=ball9.shape) for _ in range(4)]
        c = quasi_triangle_constant(fields, 1.5, domain=ball9)
        assert 0 < c <= 2.0 + 1e-12

    def test_matrix_field_uses_frobenius_norm(self, plane9: GridDomain) -> None:
        a = MatrixField.constant(plane9, np.array([[3.0, 0.0], [0.0, 4.0]]))
        assert lp_norm(a, 1) == pytest.approx(5.0 * plane9.mask_volume)


# ---------------------------------------------------------------------------
# Distance to SO(n)
# ---------------------------------------------------------------------------

class TestDistSO:
    def test_rotation_is_at_distance_zero(self) -> None:
        for seed in range(3):
            assert dist_so(random_rotation(3, seed)) < 1e-10

    def test_twice_identity(self) -> None:
        assert dist_so(2 * np.eye(3)) == pytest.approx(math.sqrt(3))

    def test_reflection(self) -> None:
        assert dist_so(np.diag([1.0, 1.0, -1.0])) == pytest.approx(2.0)

    def test_lower_bound_over_sampled_rotations(self, rng: np.random.Generator) -> None:
        m = rng.normal(size=(3, 3))
        d = dist_so(m)
        for seed in range(200):
            assert np.linalg.norm(m - random_rotation(3, seed)) >= d - 1e-12
        assert np.linalg.norm(m - project_so(m)) == pytest.approx(d, rel=1e-10)

    def test_orthogonal_invariance(self, rng: np.random.Generator) -> None:
        m = rng.normal(size=(3, 3))
        r = random_rotation(3, seed=9)
        assert dist_so(r @ m) == pytest.approx(dist_so(m), rel=1e-10)
        assert dist_so(m @ r) == pytest.approx(dist_so(m), rel=1e-10)

    def test_stacked(self) -> None:
        out = dist_so(np.stack([np.eye(2), 2 * np.eye(2)]))
        np.testing.assert_allclose(out, [0.0, math.sqrt(2)], atol=1e-12)


# ---------------------------------------------------------------------------
# Total variation
# ---------------------------------------------------------------------------

class TestTotalVariation:
    def test_zero_measure(self, ball9: GridDomain) -> None:
        assert total_variation(MeasureDensity.zeros(ball9)) == 0.0

    def test_unit_segment(self, ball9: GridDomain) -> None:
        assert total_variation(axis_segment(ball9, 2.5)) == pytest.approx(2.5)

    def test_segment_clipped_by_box(self, ball9: GridDomain) -> None:
        upper = Box((-2.0, -2.0, 0.0), (2.0, 2.0, 2.0))
        assert total_variation(axis_segment(ball9, 2.5), upper) == pytest.approx(1.25)

    def test_segment_clipped_by_ball(self, ball9: GridDomain) -> None:
        assert total_variation(axis_segment(ball9, 1.0, half=2.0)) == pytest.approx(2.0)

    def test_additive_over_disjoint_boxes(self, ball9: GridDomain, rng: np.random.Generator) -> None:
        density = FormField(ball9, 2, rng.normal(size=(*ball9.shape, 3)))
        mu = MeasureDensity(ball9, (density,)).with_segments(axis_segment(ball9, 1.0).singular_part)
        lower = Box((-2.0, -2.0, -2.0), (2.0, 2.0, 0.0))
        upper = Box((-2.0, -2.0, 0.0), (2.0, 2.0, 2.0))
        assert total_variation(mu, lower) + total_variation(mu, upper) == pytest.approx(total_variation(mu), rel=1e-12)


# ---------------------------------------------------------------------------
# Interpolation and circulation
# ---------------------------------------------------------------------------

class TestInterpolation:
    def test_linear_functions_are_exact(self, ball9: GridDomain, rng: np.random.Generator) -> None:
        a = np.array([0.5, -1.0, 2.0])
        f = ball9.coords @ a + 0.25
        pts = rng.uniform(-0.9, 0.9, size=(20, 3))
        np.testing.assert_allclose(interpolate(f, pts, ball9), pts @ a + 0.25, atol=1e-12)

    def test_raw_array_needs_domain(self, ball9: GridDomain) -> None:
        with pytest.raises(ValueError):
            interpolate(np.zeros(ball9.shape), np.zeros((1, 3)))

    def test_circulation_of_rotation_form_is_area(self, plane9: GridDomain) -> None:
        x = plane9.coords
        coeffs = np.stack([-0.5 * x[..., 1], 0.5 * x[..., 0]], axis=-1)
        assert circulation(FormField(plane9, 1, coeffs), radius=0.5) == pytest.approx(math.pi * 0.25, rel=1e-10)

    def test_circulation_needs_one_form(self, plane9: GridDomain) -> None:
        with pytest.raises(ValueError):
            circulation(FormField.zeros(plane9, 2))


# ---------------------------------------------------------------------------
# BMO
# ---------------------------------------------------------------------------

class TestBMO:
    def test_constant_field(self, plane9: GridDomain) -> None:
        assert bmo_seminorm(np.full(plane9.shape, 3.0), domain=plane9) == pytest.approx(0.0, abs=1e-12)

    def test_bounded_by_twice_sup(self, plane9: GridDomain, rng: np.random.Generator) -> None:
        f = rng.normal(size=plane9.shape)
        assert bmo_seminorm(f, domain=plane9) <= 2 * np.max(np.abs(f[plane9.mask])) + 1e-12

    def test_half_space_indicator_matches_enumeration(self, plane9: GridDomain) -> None:
        f = (plane9.coords[..., 0] >= 0).astype(float)
        assert bmo_seminorm(f, domain=plane9) == pytest.approx(_bmo_by_enumeration(f, plane9), abs=1e-12)

    def test_random_field_matches_enumeration(self, plane9: GridDomain, rng: np.random.Generator) -> None:
        f = rng.normal(size=plane9.shape)
        assert bmo_seminorm(f, domain=plane9) == pytest.approx(_bmo_by_enumeration(f, plane9), rel=1e-10)
