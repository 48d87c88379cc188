"""Tests for k_y, the averaged homotopy operator T, its kernel form and the envelope."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from rigidlab.fields import FamilySpec, generate
from rigidlab.grid import contract, exterior_derivative, fsum, magnitude, make_domain
from rigidlab.homotopy import (
    PHI,
    CutoffWeight,
    KernelSpec,
    closed_part,
    envelope_constant,
    homotopy_residual,
    k_point,
    kernel_discrepancy,
    potential_gradient,
    recover_potential,
    riesz_envelope,
    riesz_envelope_field,
    smooth_test_form,
    t_direct,
    t_kernel,
    weak_bound_ratio,
)
from rigidlab.types import FormField, GridDomain, MatrixField, MeasureDensity
from tests.conftest import axis_segment, random_rotation


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _constant_form(dom: GridDomain, values: list[float]) -> FormField:
    return FormField(dom, 1, np.broadcast_to(values, (*dom.shape, len(values))).copy())


def _relative_l1(a: FormField, b: FormField, where: np.ndarray) -> float:
    return fsum(magnitude(a - b)[where]) / fsum(magnitude(b)[where])


# ---------------------------------------------------------------------------
# Cut-off weight and settings
# ---------------------------------------------------------------------------

class TestCutoffWeight:
    def test_profile(self) -> None:
        np.testing.assert_allclose(PHI(np.array([0.0, 1.0, 1.5, 2.0, 3.0])), [1.0, 1.0, 0.5, 0.0, 0.0])

    def test_gradient_bound(self) -> None:
        assert PHI.gradient_sup == 1.5
        r = np.linspace(1.0, 2.0, 2001)
        slopes = np.abs(np.diff(PHI(r))) / np.diff(r)
        assert slopes.max() <= 1.5 + 1e-6

    @pytest.mark.parametrize("n", [2, 3])
    def test_mass_matches_radial_quadrature(self, n: int) -> None:
        area = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
        radial, _ = quad(lambda r: float(PHI(r)) * r ** (n - 1), 0.0, 3.0, points=[1.0, 2.0])
        assert PHI.mass(n) == pytest.approx(area * radial, rel=1e-10)

    def test_custom_shell(self) -> None:
        phi = CutoffWeight(inner=0.5, outer=1.0)
        assert float(phi(0.75)) == pytest.approx(0.5)
        assert phi.gradient_sup == 3.0


class TestKernelSpec:
    def test_too_few_nodes(self) -> None:
        with pytest.raises(ValueError):
            KernelSpec(m_s=3)

    def test_unknown_variant(self) -> None:
        with pytest.raises(ValueError):
            KernelSpec(variant="sphere")  # type: ignore[arg-type]

    def test_unknown_singular_mode(self) -> None:
        with pytest.raises(ValueError):
            KernelSpec(singular="cell")  # type: ignore[arg-type]

    def test_rule_integrates_polynomials(self) -> None:
        s, w = KernelSpec().rule(0.0, 2.0)
        assert float(np.sum(w * s**5)) == pytest.approx(2**6 / 6, rel=1e-13)


# ---------------------------------------------------------------------------
# k_y
# ---------------------------------------------------------------------------

class TestKPoint:
    def test_constant_form(self, ball9: GridDomain) -> None:
        omega = _constant_form(ball9, [2.0, 0.0, 0.0])
        x, y = np.array([0.5, 0.25, 0.0]), np.array([-0.25, 0.0, 0.5])
        assert k_point(y, omega, x)[0] == pytest.approx(2.0 * 0.75, rel=1e-12)

    def test_exact_form_gives_difference(self, ball9: GridDomain) -> None:
        a = np.array([0.5, -1.0, 2.0])
        omega = _constant_form(ball9, a.tolist())
        x, y = np.array([0.1, -0.3, 0.2]), np.array([0.4, 0.4, -0.5])
        assert k_point(y, omega, x)[0] == pytest.approx(float(a @ x - a @ y), rel=1e-12)

    def test_point_outside_ball(self, ball9: GridDomain) -> None:
        omega = _constant_form(ball9, [1.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            k_point(np.zeros(3), omega, np.array([0.9, 0.9, 0.0]))

    def test_zero_form_rejected(self, ball9: GridDomain) -> None:
        with pytest.raises(ValueError):
            k_point(np.zeros(3), FormField.zeros(ball9, 0), np.zeros(3))


# ---------------------------------------------------------------------------
# T: direct and kernel forms
# ---------------------------------------------------------------------------

class TestDirect:
    def test_zero(self, plane9: GridDomain) -> None:
        out = t_direct(FormField.zeros(plane9, 1))
        assert out.degree == 0
        assert np.max(np.abs(out.coeffs)) == 0.0

    def test_constant_form_gives_linear_potential(self, plane9: GridDomain) -> None:
        out = t_direct(_constant_form(plane9, [3.0, 0.0]))
        x1 = plane9.coords[..., 0]
        np.testing.assert_allclose(out.coeffs[..., 0][plane9.mask], 3.0 * x1[plane9.mask], atol=1e-10)

    def test_unnormalized_weight_scales_by_mass(self, plane9: GridDomain) -> None:
        out = t_direct(_constant_form(plane9, [3.0, 0.0]), KernelSpec(normalize=False))
        x1 = plane9.coords[..., 0]
        expected = 3.0 * x1 * plane9.mask_volume
        np.testing.assert_allclose(out.coeffs[..., 0][plane9.mask], expected[plane9.mask], atol=1e-10)

    def test_identity_holds_for_constant_form(self, plane9: GridDomain) -> None:
        omega = _constant_form(plane9, [3.0, -1.0])
        assert homotopy_residual(omega, operator="direct") < 1e-10

    def test_degree_bookkeeping(self, ball9: GridDomain) -> None:
        omega = smooth_test_form(ball9, 2, seed=1)
        assert t_direct(omega).degree == 1
        assert exterior_derivative(omega).degree == 3


class TestKernel:
    def test_zero(self, ball9: GridDomain) -> None:
        assert np.max(np.abs(t_kernel(FormField.zeros(ball9, 2)).coeffs)) == 0.0

    def test_linearity(self, ball9: GridDomain) -> None:
        a = smooth_test_form(ball9, 1, seed=2)
        b = smooth_test_form(ball9, 1, seed=3)
        combo = t_kernel(a.scaled(2.0) + b.scaled(-0.5))
        expected = t_kernel(a).scaled(2.0) + t_kernel(b).scaled(-0.5)
        scale = np.max(np.abs(expected.coeffs))
        assert np.max(np.abs(combo.coeffs - expected.coeffs)) <= 1e-12 * scale

    def test_degree_bookkeeping(self, ball9: GridDomain) -> None:
        omega = smooth_test_form(ball9, 2, seed=1)
        assert t_kernel(omega).degree == 1
        assert t_kernel(exterior_derivative(smooth_test_form(ball9, 1, seed=1))).degree == 1

    def test_thread_count_does_not_change_bits(self, plane9: GridDomain) -> None:
        omega = smooth_test_form(plane9, 1, seed=5)
        one = t_kernel(omega, KernelSpec(threads=1, chunk=16))
        many = t_kernel(omega, KernelSpec(threads=4, chunk=16))
        assert np.array_equal(one.coeffs, many.coeffs)

    def test_measure_input_gives_matrix_field(self, ball9: GridDomain) -> None:
        spec = FamilySpec(kind="perturbed_rotation", strength=0.2, seed=3)
        _, mu = generate(spec, ball9)
        out = t_kernel(mu)
        assert isinstance(out, MatrixField)
        assert np.all(np.isfinite(out.values))

    def test_segments_contribute(self, ball9: GridDomain) -> None:
        out = t_kernel(axis_segment(ball9, 1.0))
        assert np.max(np.abs(out.values)) > 0

    @pytest.mark.parametrize("degree", [1, 2])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_agrees_with_direct_in_3d(self, ball9: GridDomain, seed: int, degree: int) -> None:
        omega = smooth_test_form(ball9, degree, seed=seed)
        assert _relative_l1(t_kernel(omega), t_direct(omega), ball9.mask) <= 0.03

    def test_exact_on_constant_one_form(self, ball9: GridDomain) -> None:
        c = np.array([0.5, -1.0, 2.0])
        out = t_kernel(_constant_form(ball9, c.tolist()))
        expected = ball9.coords @ c
        np.testing.assert_allclose(out.coeffs[..., 0][ball9.mask], expected[ball9.mask], atol=1e-10)

    def test_exact_on_constant_two_form(self, ball9: GridDomain) -> None:
        c = np.broadcast_to([1.0, -0.5, 2.0], (*ball9.shape, 3))
        out = t_kernel(FormField(ball9, 2, c.copy()))
        expected = contract(c, ball9.coords, 3, 2) / 2
        np.testing.assert_allclose(out.coeffs[ball9.mask], expected[ball9.mask], atol=1e-10)

    def test_equivalent_ball_mode_runs(self, ball9: GridDomain) -> None:
        omega = smooth_test_form(ball9, 1, seed=0)
        ball = t_kernel(omega, KernelSpec(singular="equivalent_ball"))
        assert np.all(np.isfinite(ball.coeffs))
        assert not np.array_equal(ball.coeffs, t_kernel(omega).coeffs)

    def test_literal_variant_runs(self, plane9: GridDomain) -> None:
        omega = smooth_test_form(plane9, 1, seed=4)
        gap = kernel_discrepancy(omega)
        assert math.isfinite(gap)
        assert gap >= 0


# ---------------------------------------------------------------------------
# Envelope
# ---------------------------------------------------------------------------

class TestEnvelope:
    def test_zero(self, ball9: GridDomain) -> None:
        assert riesz_envelope(FormField.zeros(ball9, 1), np.zeros(3)) == 0.0

    def test_unit_form_at_origin(self, ball17: GridDomain) -> None:
        omega = _constant_form(ball17, [1.0, 0.0, 0.0])
        assert riesz_envelope(omega, np.zeros(3)) == pytest.approx(4 * math.pi, rel=0.05)

    def test_field_matches_pointwise(self, ball9: GridDomain) -> None:
        omega = smooth_test_form(ball9, 1, seed=8)
        env = riesz_envelope_field(omega)
        idx = (4, 5, 3)
        assert env[idx] == pytest.approx(riesz_envelope(omega, ball9.coords[idx]), rel=1e-12)

    def test_monotone_in_magnitude(self, ball9: GridDomain) -> None:
        omega = smooth_test_form(ball9, 1, seed=8)
        bigger = FormField(ball9, 1, omega.coeffs * 1.5 + np.sign(omega.coeffs) * 0.1)
        assert np.all(riesz_envelope_field(bigger) >= riesz_envelope_field(omega) - 1e-12)

    def test_envelope_constant_positive(self, plane9: GridDomain) -> None:
        c = envelope_constant(smooth_test_form(plane9, 1, seed=6))
        assert 0 < c < math.inf

    def test_envelope_constant_grows_with_region(self, plane9: GridDomain) -> None:
        omega = smooth_test_form(plane9, 1, seed=6)
        assert envelope_constant(omega, inner_radius=0.5) <= envelope_constant(omega, inner_radius=1.0)

    def test_envelope_constant_rejects_radius(self, plane9: GridDomain) -> None:
        with pytest.raises(ValueError):
            envelope_constant(smooth_test_form(plane9, 1, seed=6), inner_radius=1.5)

    @pytest.mark.slow
    def test_envelope_constant_stable_across_resolution(self) -> None:
        constants = {}
        for res in (9, 17):
            dom = make_domain(3, res)
            constants[res] = max(envelope_constant(smooth_test_form(dom, 1, seed=s)) for s in range(20))
        assert constants[17] / constants[9] == pytest.approx(1.0, abs=0.2)


# ---------------------------------------------------------------------------
# Identity, potentials, weak bound
# ---------------------------------------------------------------------------

class TestIdentity:
    @staticmethod
    def _pointwise_gap(res: int) -> float:
        """|omega - k_y d omega - d k_y omega| at one node, relative to max |omega|."""
        dom = make_domain(3, res)
        omega = smooth_test_form(dom, 1, seed=3)
        d_omega = exterior_derivative(omega)
        x, y = np.array([0.25, 0.125, -0.125]), np.array([-0.1, 0.2, 0.05])
        node = tuple(int(i) for i in np.rint((x + dom.radius) / dom.h))
        step = 1e-4
        grad = np.array([
            (k_point(y, omega, x + step * e)[0] - k_point(y, omega, x - step * e)[0]) / (2 * step)
            for e in np.eye(3)
        ])
        gap = omega.coeffs[node] - k_point(y, d_omega, x) - grad
        return float(np.linalg.norm(gap)) / float(np.max(magnitude(omega)[dom.mask]))

    def test_pointwise_identity_refines(self) -> None:
        coarse, fine = self._pointwise_gap(17), self._pointwise_gap(33)
        assert fine < coarse
        assert fine <= 0.05

    def test_degree_zero_rejected(self, plane9: GridDomain) -> None:
        with pytest.raises(ValueError):
            homotopy_residual(FormField.zeros(plane9, 0))

    def test_vanishing_form_rejected(self, plane9: GridDomain) -> None:
        with pytest.raises(ValueError):
            homotopy_residual(FormField.zeros(plane9, 1))

    def test_kernel_residual_is_finite(self, plane17: GridDomain) -> None:
        omega = smooth_test_form(plane17, 1, seed=0, support=0.6)
        value = homotopy_residual(omega)
        assert 0 <= value < 1.0

    @pytest.mark.slow
    def test_residual_decreases_under_refinement(self) -> None:
        for degree in (1, 2):
            values = [
                homotopy_residual(smooth_test_form(make_domain(3, res), degree, seed=0, support=0.6))
                for res in (9, 17, 33)
            ]
            assert values[0] > values[1] > values[2]
            assert values[-1] <= 0.1


class TestPotential:
    def test_constant_rotation(self, plane17: GridDomain) -> None:
        r = random_rotation(2, seed=1)
        a = MatrixField.constant(plane17, r)
        assert np.array_equal(closed_part(a).values, a.values)
        g = recover_potential(a)
        assert len(g) == 2
        assert all(gi.degree == 0 for gi in g)
        dg = potential_gradient(g)
        inner = plane17.mask & (plane17.norm <= 0.8)
        err = fsum(dg.minus(r).magnitude()[inner]) / fsum(a.magnitude()[inner])
        assert err < 0.15

    def test_recovered_gradient_is_closed(self, ball9: GridDomain) -> None:
        spec = FamilySpec(kind="screw_dislocation", strength=0.5, core_radius=0.5)
        a, mu = generate(spec, ball9)
        dg = potential_gradient(recover_potential(a, mu))
        curl = [exterior_derivative(row) for row in dg.row_forms()]
        inner = (slice(2, -2),) * 3
        assert max(float(np.max(np.abs(c.coeffs[inner]))) for c in curl) < 1e-10

    def test_gradient_reproduces_closed_part(self) -> None:
        dom = make_domain(2, 33)
        a, mu = generate(FamilySpec(kind="perturbed_rotation", strength=0.3, seed=2), dom)
        closed = closed_part(a, mu)
        dg = potential_gradient(recover_potential(a, mu))
        inner = dom.mask & (dom.norm <= 0.8)
        err = fsum(dg.minus(closed.values).magnitude()[inner]) / fsum(closed.magnitude()[inner])
        assert err <= 0.1


class TestWeakBound:
    def test_ratio_positive(self, ball9: GridDomain) -> None:
        spec = FamilySpec(kind="screw_dislocation", strength=0.2, core_radius=0.5)
        _, mu = generate(spec, ball9)
        ratio = weak_bound_ratio(mu)
        assert 0 < ratio < math.inf

    def test_zero_curl_rejected(self, ball9: GridDomain) -> None:
        with pytest.raises(ValueError):
            weak_bound_ratio(MeasureDensity.zeros(ball9))
