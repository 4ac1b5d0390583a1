import logging

import numpy as np
import pytest

from fiberlim.fib_errors import PreconditionError, ResolutionError
from fiberlim.fib_fine import (EnergyReport, assign_materials, axial_reference_field, boundary_ramp, fine_energy,
                               korn_ratio, layout_manifest, recovery_energy, recovery_field, recovery_grid,
                               recovery_profile, rescaled_restriction, solve_fine)
from fiberlim.fib_geometry import DisplacementField, StructuredGrid, build_layout
from fiberlim.fib_limit import BodyForce, solve_elasticity
from fiberlim.fib_material import LameCoefficients, RegimeTag
from fiberlim.fib_utils import vector_function


@pytest.fixture
def grid():
    return StructuredGrid.from_elements(1.0, 1.0, 1.0, 12, 12, 2)


@pytest.fixture
def layout():
    return build_layout(1.0, 1.0, 0.5, 0.125)


@pytest.fixture
def fiber():
    return LameCoefficients(lam=16.0, mu=16.0)


class TestAssignment:
    def test_centroid_tagging(self, grid, layout, base, fiber, caplog):
        with caplog.at_level(logging.WARNING):
            assignment = assign_materials(grid, layout, base, fiber)
        # 2 x 2 element columns around the axis, two layers
        assert assignment.n_fiber_elements == 8
        assert assignment.voxel_volume_fraction == pytest.approx(8 / 288)
        assert assignment.elements_per_radius == pytest.approx(1.5)
        assert "resolved by only" in caplog.text
        lam, mu = assignment.lame_arrays()
        assert np.count_nonzero(mu == 16.0) == 8

    def test_under_resolved(self, grid, base, fiber):
        with pytest.raises(ResolutionError):
            assign_materials(grid, build_layout(1.0, 1.0, 0.5, 0.05), base, fiber)

    def test_manifest(self, grid, layout, base, fiber):
        manifest = layout_manifest(layout, assign_materials(grid, layout, base, fiber))
        assert manifest["n_fibers"] == 1
        assert manifest["epsilon"] == 0.5
        assert manifest["voxel_volume_fraction"] == pytest.approx(8 / 288)
        assert set(layout_manifest(layout)) == {"epsilon", "r", "s", "n_fibers", "volume_fraction"}


class TestSolveFine:
    def test_homogeneous_composite_is_plain_elasticity(self, grid, layout, base, axial_force):
        u, energy = solve_fine(grid, layout, base, base, axial_force)
        reference_u, reference, _ = solve_elasticity(grid, base, axial_force)
        assert energy == pytest.approx(reference, rel=1e-12)
        np.testing.assert_allclose(u.values, reference_u, atol=1e-12)
        assert u.solver_info["iterations"] > 0

    def test_stiff_fibers_lower_the_energy(self, grid, layout, base, fiber, axial_force):
        _, soft = solve_fine(grid, layout, base, base, axial_force)
        u, stiff = solve_fine(grid, layout, base, fiber, axial_force)
        assert stiff < soft
        assert fine_energy(u.values, grid, assign_materials(grid, layout, base, fiber)) == pytest.approx(stiff)


class TestDiagnostics:
    def test_rescaled_restriction_of_constant(self, grid, layout, base, fiber):
        assignment = assign_materials(grid, layout, base, fiber)
        u = DisplacementField(grid=grid, values=np.tile([1.0, 2.0, 3.0], (grid.n_nodes, 1)))
        rescaled, average = rescaled_restriction(u, layout, assignment)
        np.testing.assert_allclose(average, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(rescaled, [1.0, 2.0, 3.0])

    def test_rescaled_restriction_with_test_function(self, grid, layout, base, fiber):
        assignment = assign_materials(grid, layout, base, fiber)
        u = DisplacementField(grid=grid, values=np.tile([0.0, 0.0, 1.0], (grid.n_nodes, 1)))
        rescaled, _ = rescaled_restriction(u, layout, assignment, phi=lambda points: points[:, 2])
        np.testing.assert_allclose(rescaled, [0.0, 0.0, 0.5])

    def test_korn_ratio(self, grid, layout, base, fiber):
        assignment = assign_materials(grid, layout, base, fiber)
        assert korn_ratio(DisplacementField.zeros(grid), layout, assignment) == 0.0
        assert korn_ratio(axial_reference_field(grid), layout, assignment) > 0.0

    def test_energy_report(self):
        report = EnergyReport(epsilon=0.5, F_eps=1.2, F_limit=1.0, fiber_avg_u=np.zeros(3), korn_ratio=0.1)
        assert report.gap_rel == pytest.approx(0.2)
        assert report.to_dict()["fiber_avg_u"] == [0.0, 0.0, 0.0]


class TestRecovery:
    def test_boundary_ramp(self):
        np.testing.assert_allclose(boundary_ramp(np.array([0.0, 0.25, 0.375, 0.5, 1.0]), 0.25),
                                   [0.0, 0.0, 0.5, 1.0, 1.0])

    def test_axial_profile(self, layout):
        profile = recovery_profile(np.array([[0.6, 0.5, 0.3]]), vector_function(["0", "0", "x3"]), layout,
                                   LameCoefficients(lam=1.0, mu=1.0))
        np.testing.assert_allclose(profile, [[-0.025, 0.0, 0.3]], atol=1e-9)

    def test_flexion_profile(self, layout):
        profile = recovery_profile(np.array([[0.6, 0.5, 0.3]]), vector_function(["x3^2", "0", "0"]), layout,
                                   LameCoefficients(lam=1.0, mu=1.0), RegimeTag.FLEXION)
        np.testing.assert_allclose(profile, [[0.0875, 0.0, -0.06]], atol=1e-6)

    def test_field_equals_u_away_from_fibers(self, grid, layout, base, fiber):
        u = vector_function(["0", "0", "x3^2"])
        v = vector_function(["0", "0", "x3"])
        recovered = recovery_field(u, v, grid, layout, base, fiber)
        points = grid.coordinates()
        _, X1, X2 = layout.nearest_center(points[:, 0], points[:, 1])
        untouched = (np.hypot(X1, X2) >= layout.s) | (points[:, 2] <= layout.epsilon)
        assert np.any(untouched) and not np.all(untouched)
        np.testing.assert_allclose(recovered.values[untouched], u(points[untouched]))

    def test_requires_gamma1_condition(self, grid, layout, base, fiber):
        with pytest.raises(PreconditionError):
            recovery_field(vector_function(["1", "0", "0"]), vector_function(["0", "0", "x3"]), grid, layout, base,
                           fiber)

    def test_recovery_energy_is_finite(self, grid, layout, base, fiber):
        value = recovery_energy(vector_function(["0", "0", "x3^2"]), vector_function(["0", "0", "x3"]),
                                recovery_grid(grid, layout), layout, base, fiber)
        assert np.isfinite(value) and value > 0.0

    def test_recovery_energy_rejects_coarse_grid(self, grid, layout, base, fiber):
        # 12 elements on the unit side give 1.5 elements per radius 0.125
        with pytest.raises(ResolutionError):
            recovery_energy(vector_function(["0", "0", "x3^2"]), vector_function(["0", "0", "x3"]), grid,
                            layout, base, fiber)

    def test_recovery_grid_refines_in_plane_only(self, grid, layout):
        refined = recovery_grid(grid, layout)
        assert refined.element_shape == (16, 16, 2)
        assert layout.r / max(refined.hx, refined.hy) == pytest.approx(2.0)
        fine_enough = StructuredGrid.from_elements(1.0, 1.0, 1.0, 20, 20, 2)
        assert recovery_grid(fine_enough, layout).element_shape == (20, 20, 2)
