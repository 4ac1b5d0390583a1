import math

import numpy as np
import pytest

from fiberlim.fib_errors import EmptyLayoutError, PreconditionError
from fiberlim.fib_geometry import DisplacementField, StructuredGrid, build_layout, default_s


class TestStructuredGrid:
    def test_counts(self):
        grid = StructuredGrid.from_elements(1.0, 2.0, 3.0, 2, 2, 2)
        assert grid.n_nodes == 27
        assert grid.n_elements == 8
        assert grid.spacing == (0.5, 1.0, 1.5)
        assert grid.volume == 6.0

    def test_node_order(self):
        grid = StructuredGrid.from_elements(1.0, 1.0, 1.0, 2, 2, 2)
        coordinates = grid.coordinates()
        np.testing.assert_allclose(coordinates[grid.node_index(1, 0, 0)], [0.5, 0.0, 0.0])
        np.testing.assert_allclose(coordinates[grid.node_index(0, 2, 1)], [0.0, 1.0, 0.5])

    def test_element_nodes(self):
        grid = StructuredGrid.from_elements(1.0, 1.0, 1.0, 2, 2, 2)
        np.testing.assert_array_equal(grid.element_nodes()[0], [0, 1, 3, 4, 9, 10, 12, 13])
        np.testing.assert_allclose(grid.element_centroids()[-1], [0.75, 0.75, 0.75])

    def test_faces(self):
        grid = StructuredGrid.from_elements(1.0, 1.0, 1.0, 2, 2, 2)
        coordinates = grid.coordinates()
        assert np.all(coordinates[grid.gamma1_nodes(), 2] == 0.0)
        assert np.all(coordinates[grid.gamma2_nodes(), 2] == 1.0)
        assert len(grid.gamma1_nodes()) == 9

    def test_degenerate(self):
        with pytest.raises(PreconditionError):
            StructuredGrid(a=1.0, b=1.0, L=1.0, nx=1, ny=2, nz=2)
        with pytest.raises(PreconditionError):
            StructuredGrid.from_elements(0.0, 1.0, 1.0, 2, 2, 2)


class TestFiberLayout:
    def test_single_cell(self):
        layout = build_layout(1.0, 1.0, 0.5, 0.1)
        assert layout.n_fibers == 1
        np.testing.assert_allclose(layout.centers, [[0.5, 0.5]])

    def test_cells_inside_cross_section(self):
        layout = build_layout(1.0, 1.0, 0.25, 0.05)
        assert layout.n_fibers == 9
        np.testing.assert_allclose(layout.centers[0], [0.25, 0.25])
        np.testing.assert_allclose(layout.centers[1], [0.5, 0.25])
        assert layout.covered_volume == pytest.approx(9 * 0.0625)
        assert layout.volume_fraction == pytest.approx(9 * math.pi * 0.0025)

    def test_corrector_configuration(self):
        layout = build_layout(24.0, 24.0, 16.0, 1e-6)
        assert layout.n_fibers == 1
        np.testing.assert_allclose(layout.centers, [[16.0, 16.0]])
        assert layout.covered_volume == pytest.approx(256.0)

    def test_invalid(self):
        with pytest.raises(PreconditionError):
            build_layout(1.0, 1.0, 0.5, 0.25)
        with pytest.raises(EmptyLayoutError):
            build_layout(1.0, 1.0, 0.8, 0.1)

    def test_truncation_radius_bounds(self):
        assert build_layout(1.0, 1.0, 0.5, 0.1, s=0.25).s == 0.25
        with pytest.raises(PreconditionError):
            build_layout(1.0, 1.0, 0.5, 0.1, s=0.1)
        with pytest.raises(PreconditionError):
            build_layout(1.0, 1.0, 0.5, 0.1, s=0.3)
        # critical radius at eps = 0.5, gamma = 2 exceeds s / 2
        layout = build_layout(1.0, 1.0, 0.5, math.exp(-2.0))
        assert layout.r < layout.s <= 0.25

    def test_default_s(self):
        assert default_s(0.5, 0.1) == pytest.approx(math.exp(-1.0 / math.sqrt(0.5)))
        assert default_s(16.0, 1e-4) == pytest.approx(math.exp(-0.25))
        # clamped to [2 r, eps / 2]
        assert default_s(0.5, 0.2) == pytest.approx(0.25)
        assert default_s(0.01, 1e-3) == pytest.approx(2e-3)

    def test_nearest_center(self):
        layout = build_layout(1.0, 1.0, 0.25, 0.05)
        index, X1, X2 = layout.nearest_center(np.array([0.3, 0.74]), np.array([0.27, 0.5]))
        np.testing.assert_allclose(layout.centers[index], [[0.25, 0.25], [0.75, 0.5]])
        np.testing.assert_allclose(X1, [0.05, -0.01])
        np.testing.assert_allclose(X2, [0.02, 0.0], atol=1e-15)


class TestDisplacementField:
    def test_zeros(self, small_grid):
        field = DisplacementField.zeros(small_grid)
        assert field.values.shape == (small_grid.n_nodes, 3)
        assert field.flat().shape == (3 * small_grid.n_nodes,)

    def test_flat_order(self, small_grid):
        values = np.arange(3 * small_grid.n_nodes, dtype=float)
        field = DisplacementField(grid=small_grid, values=values)
        np.testing.assert_array_equal(field.values[1], [3.0, 4.0, 5.0])
