import math
import os

import numpy as np
import pytest

from fiberlim.fib_cells import (CellField, PlanePoint, annulus_energy, corrector_energy_numeric, corrector_z, eval_grad_w,
                                eval_stress, eval_w, fit_log_limit, gradient_bound_constant, lemma_limit, log_flux,
                                plateau_radius, predicted_corrector_energy, truncation_phi)
from fiberlim.fib_cli import fiber_setup, max_divergence_residual
from fiberlim.fib_errors import CellDomainError, FitError, PreconditionError, QuadratureAccuracyError
from fiberlim.fib_geometry import build_layout
from fiberlim.fib_material import gamma_of, lame_from_kappa
from fiberlim.fib_utils import load_scenario

R_GRID = [1e2, 1e3, 1e4, 1e6]


class TestClosedForms:
    def test_vanish_on_unit_circle(self):
        theta = np.linspace(0.0, 2.0 * math.pi, 360, endpoint=False)
        circle = np.column_stack([np.cos(theta), np.sin(theta)])
        for kind in ("w1", "w2", "w_log"):
            assert np.max(np.abs(eval_w(CellField(kind), circle))) < 1e-12

    def test_corrected_against_printed(self):
        point = PlanePoint(2.0, 0.0)
        np.testing.assert_allclose(eval_w(CellField("w1"), point), [-0.505647, 0.0], atol=1e-6)
        np.testing.assert_allclose(eval_w(CellField("w1", printed_form=True), point), [-0.880647, 0.0], atol=1e-6)

    def test_w2_mirrors_w1(self):
        w1 = eval_w(CellField("w1"), np.array([[1.3, 0.4]]))
        w2 = eval_w(CellField("w2"), np.array([[0.4, 1.3]]))
        np.testing.assert_allclose(w2, w1[:, ::-1])

    def test_far_field_growth(self):
        value = eval_w(CellField("w1"), PlanePoint(1e4, 0.0))
        assert value[0] == pytest.approx(-math.log(1e4) + 0.25, rel=1e-6)
        assert eval_w(CellField("w_log"), PlanePoint(0.0, math.e)) == pytest.approx(-1.0)

    def test_gradient_matches_finite_differences(self):
        points = np.array([[1.5, 0.3], [-2.0, 4.0], [0.1, -1.2]])
        step = 1e-6
        for kind in ("w1", "w2", "w_log"):
            field = CellField(kind, kappa=1.7)
            gradient = eval_grad_w(field, points)
            for j in (0, 1):
                shift = np.zeros(2)
                shift[j] = step
                difference = (eval_w(field, points + shift) - eval_w(field, points - shift)) / (2.0 * step)
                np.testing.assert_allclose(gradient[..., j], difference, atol=1e-7)

    def test_domain(self):
        with pytest.raises(CellDomainError):
            eval_w(CellField("w1"), PlanePoint(0.5, 0.0))
        with pytest.raises(CellDomainError):
            eval_stress(CellField("w1"), PlanePoint(1.0, 0.0), lame_from_kappa(2.0))
        with pytest.raises(PreconditionError):
            CellField("w3")

    def test_antiplane_stress(self):
        base = lame_from_kappa(2.0, mu=3.0)
        stress = eval_stress(CellField("w_log"), PlanePoint(2.0, 0.0), base)
        np.testing.assert_allclose(stress, [-1.5, 0.0])

    @pytest.mark.parametrize("kappa_value", [1.5, 2.0, 3.0])
    def test_equilibrium(self, kappa_value):
        rng = np.random.default_rng(0)
        radius = rng.uniform(1.5, 50.0, 100)
        angle = rng.uniform(0.0, 2.0 * math.pi, 100)
        points = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
        assert max_divergence_residual(lame_from_kappa(kappa_value), points) < 1e-5

    def test_log_flux(self):
        assert log_flux(5.0) == pytest.approx(2.0 * math.pi)
        with pytest.raises(CellDomainError):
            log_flux(0.5)


class TestAnnulusEnergy:
    @pytest.mark.parametrize("m", [1, 2])
    def test_plane_limit(self, m):
        base = lame_from_kappa(2.0)
        values = [annulus_energy(m, m, R, base) for R in R_GRID]
        fitted, _ = fit_log_limit(R_GRID, values)
        assert lemma_limit(m, m, base) == pytest.approx(3.0 * math.pi)
        assert abs(fitted - 3.0 * math.pi) / (3.0 * math.pi) < 1e-2

    def test_antiplane_limit(self):
        base = lame_from_kappa(2.0)
        values = [annulus_energy(3, 3, R, base, embedded=True) for R in R_GRID]
        fitted, _ = fit_log_limit(R_GRID, values)
        assert abs(fitted - 2.0 * math.pi) / (2.0 * math.pi) < 1e-2
        # |grad w_log|^2 integrates to exactly 2 pi ln R
        assert annulus_energy(3, 3, 50.0, base) == pytest.approx(2.0 * math.pi, rel=1e-10)

    def test_mixed_energy_is_small(self):
        base = lame_from_kappa(2.0)
        mixed = abs(annulus_energy(1, 2, 1e6, base))
        assert mixed <= 0.05 * annulus_energy(1, 1, 1e6, base)
        assert lemma_limit(1, 2, base) == 0.0

    def test_quadrature_check(self):
        with pytest.raises(QuadratureAccuracyError) as info:
            annulus_energy(1, 1, 1e6, lame_from_kappa(2.0), n_r=1, n_theta=8, tol=1e-14)
        assert info.value.coarse != info.value.refined

    def test_invalid(self):
        with pytest.raises(PreconditionError):
            annulus_energy(1, 4, 10.0, lame_from_kappa(2.0))
        with pytest.raises(PreconditionError):
            annulus_energy(1, 1, 1.0, lame_from_kappa(2.0))

    def test_thread_count_does_not_change_value(self):
        base = lame_from_kappa(2.0)
        assert annulus_energy(1, 1, 1e3, base, n_r=64, threads=1) == annulus_energy(1, 1, 1e3, base, n_r=64, threads=3)


class TestFit:
    def test_exact_model(self):
        R = np.array([1e2, 1e3, 1e5])
        a, b = fit_log_limit(R, 2.0 + 3.0 / np.log(R))
        assert a == pytest.approx(2.0)
        assert b == pytest.approx(3.0)

    def test_needs_two_radii(self):
        with pytest.raises(FitError):
            fit_log_limit([1e3], [1.0])
        with pytest.raises(FitError):
            fit_log_limit([1e3, 1e3], [1.0, 1.0])


class TestCorrectors:
    def test_truncation_phi(self):
        assert truncation_phi(0.25, 1.0) == 1.0
        assert truncation_phi(0.5, 1.0) == pytest.approx(1.0)
        assert truncation_phi(0.75, 1.0) == pytest.approx(7.0 / 12.0)
        assert truncation_phi(1.0, 1.0) == 0.0
        assert truncation_phi(2.0, 1.0) == 0.0

    def test_truncation_plateau_reaches_fiber_radius(self):
        assert plateau_radius(1.0) == 0.5
        assert plateau_radius(1.0, 0.6) == 0.6
        assert truncation_phi(0.6, 1.0, 0.6) == 1.0
        assert truncation_phi(0.8, 1.0, 0.6) == pytest.approx(0.5625)
        assert truncation_phi(0.75, 1.0, 0.1) == pytest.approx(7.0 / 12.0)

    @pytest.mark.parametrize("name", ["critical", "soft", "flexion", "quick"])
    def test_corrector_continuous_for_scenario_sweeps(self, name, scenarios_dir):
        scenario = load_scenario(os.path.join(scenarios_dir, f"{name}.toml"))
        base = scenario.base()
        theta = np.array([0.3, 1.9, 4.0])
        directions = np.column_stack([np.cos(theta), np.sin(theta)])
        for eps in scenario.sweep.epsilons:
            r, _ = fiber_setup(scenario, eps)
            layout = build_layout(scenario.geometry.a, scenario.geometry.b, eps, r, L=scenario.geometry.L)
            center = layout.centers[0]
            for radius in (layout.r, plateau_radius(layout.s, layout.r), layout.s):
                sides = []
                for factor in (1.0 - 1e-9, 1.0 + 1e-9):
                    planar = center + factor * radius * directions
                    sides.append(np.column_stack([planar, np.full(len(theta), 0.3)]))
                for m in (1, 2, 3):
                    np.testing.assert_allclose(corrector_z(sides[0], m, layout, base),
                                               corrector_z(sides[1], m, layout, base), atol=1e-7)

    def test_corrector_values(self, base):
        layout = build_layout(1.0, 1.0, 0.5, 0.01, s=0.2)
        points = np.array([
            [0.5, 0.5, 0.3],      # on the axis
            [0.505, 0.5, 0.3],    # inside the fiber
            [0.51, 0.5, 0.3],     # on the fiber boundary
            [0.5, 0.75, 0.3],     # beyond s
        ])
        for m in (1, 2, 3):
            z = corrector_z(points, m, layout, base)
            unit = np.eye(3)[m - 1]
            np.testing.assert_allclose(z[0], unit)
            np.testing.assert_allclose(z[1], unit)
            np.testing.assert_allclose(z[2], unit, atol=1e-12)
            np.testing.assert_allclose(z[3], 0.0)
        np.testing.assert_allclose(corrector_z(points[0], 3, layout, base), [0.0, 0.0, 1.0])

    def test_predicted_energy(self, base):
        assert predicted_corrector_energy(3, 3, 1.0, base, 2.0) == pytest.approx(4.0 * math.pi)
        assert predicted_corrector_energy(1, 1, 1.0, base, 1.0) == pytest.approx(3.0 * math.pi)
        assert predicted_corrector_energy(1, 3, 1.0, base, 1.0) == 0.0

    def test_corrector_energy_approaches_prediction(self, base):
        errors = []
        for r in (1e-4, 1e-6, 1e-8):
            layout = build_layout(24.0, 24.0, 16.0, r)
            numeric = corrector_energy_numeric(3, 3, layout, base)
            predicted = predicted_corrector_energy(3, 3, gamma_of(16.0, r), base, layout.covered_volume)
            errors.append(abs(numeric - predicted) / predicted)
            mixed = corrector_energy_numeric(1, 3, layout, base)
            assert abs(mixed) <= 0.05 * numeric
        assert max(errors) < 0.10
        assert errors[0] > errors[1] > errors[2]

    def test_gradient_bound_of_log_field(self):
        assert gradient_bound_constant(3, 1e-4, 0.1) == pytest.approx(1.0)
        assert gradient_bound_constant(1, 1e-4, 0.1) > 0.0
