import numpy as np
import pytest
from scipy import sparse

from fiberlim.fib_errors import SolverConvergenceError
from fiberlim.fib_fem import (assemble_elasticity, assemble_scalar, body_load, element_rule, gauss_legendre,
                              hermite_second_derivatives, hermite_values, l2_error, pcg, solve_constrained,
                              trilinear_gradients, trilinear_values)
from fiberlim.fib_geometry import StructuredGrid


def spd_matrix(n, seed=0):
    rng = np.random.default_rng(seed)
    B = sparse.random(n, n, density=0.1, random_state=seed)
    return (B @ B.T + sparse.diags(rng.uniform(1.0, 2.0, n))).tocsr()


class TestQuadrature:
    def test_gauss_legendre_exactness(self):
        nodes, weights = gauss_legendre(3, 0.0, 2.0)
        assert np.sum(weights * nodes ** 5) == pytest.approx(64.0 / 6.0)
        assert np.sum(weights) == pytest.approx(2.0)

    def test_element_rule_volume(self):
        rule = element_rule((0.5, 0.25, 2.0))
        assert np.sum(rule.weights) == pytest.approx(0.25)
        assert rule.n_points == 8
        assert element_rule((1.0, 1.0, 1.0), (2, 2, 4)).n_points == 16

    def test_trilinear_partition_of_unity(self):
        xi = np.random.default_rng(1).uniform(0.0, 1.0, (20, 3))
        np.testing.assert_allclose(trilinear_values(xi).sum(axis=1), 1.0)
        np.testing.assert_allclose(trilinear_gradients(xi, (0.5, 0.5, 0.5)).sum(axis=1), 0.0, atol=1e-12)

    def test_hermite_interpolation(self):
        hz = 0.25
        ends = hermite_values(np.array([0.0, 1.0]), hz)
        np.testing.assert_allclose(ends, [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]], atol=1e-15)
        # x3^2 on [0, hz] from its end values and slopes
        s = np.linspace(0.0, 1.0, 7)
        coefficients = np.array([0.0, 0.0, hz ** 2, 2.0 * hz])
        np.testing.assert_allclose(hermite_values(s, hz) @ coefficients, (s * hz) ** 2, atol=1e-15)
        np.testing.assert_allclose(hermite_second_derivatives(s, hz) @ coefficients, 2.0)


class TestAssembly:
    def test_rigid_translations_are_free(self):
        grid = StructuredGrid.from_elements(1.0, 1.0, 1.0, 3, 3, 3)
        K = assemble_elasticity(grid, 1.0, 1.0)
        for i in range(3):
            translation = np.zeros((grid.n_nodes, 3))
            translation[:, i] = 1.0
            np.testing.assert_allclose(K @ translation.ravel(), 0.0, atol=1e-12)
        assert abs(K - K.T).max() < 1e-12

    def test_uniform_strain_energy(self, base):
        grid = StructuredGrid.from_elements(1.0, 1.0, 2.0, 2, 2, 3)
        K = assemble_elasticity(grid, base.lam, base.mu)
        u = np.zeros((grid.n_nodes, 3))
        u[:, 2] = grid.coordinates()[:, 2]
        # e33 = 1: lambda + 2 mu per unit volume
        assert u.ravel() @ (K @ u.ravel()) == pytest.approx(3.0 * grid.volume)

    def test_scalar_matrices(self):
        grid = StructuredGrid.from_elements(1.0, 2.0, 1.0, 2, 3, 2)
        mass = assemble_scalar(grid, 1.0, "mass")
        axial = assemble_scalar(grid, 1.0, "axial")
        assert mass.sum() == pytest.approx(grid.volume)
        np.testing.assert_allclose(axial @ np.ones(grid.n_nodes), 0.0, atol=1e-12)
        x3 = grid.coordinates()[:, 2]
        assert x3 @ (axial @ x3) == pytest.approx(grid.volume)

    def test_body_load_total(self):
        grid = StructuredGrid.from_elements(1.0, 1.0, 1.0, 3, 3, 3)
        load = body_load(grid, lambda points: np.tile([0.0, 0.0, 2.0], (len(points), 1)))
        np.testing.assert_allclose(load.reshape(-1, 3).sum(axis=0), [0.0, 0.0, 2.0], atol=1e-12)

    def test_thread_count_does_not_change_assembly(self):
        grid = StructuredGrid.from_elements(1.0, 1.0, 1.0, 16, 16, 9)
        single = assemble_elasticity(grid, 1.0, 1.0, threads=1)
        threaded = assemble_elasticity(grid, 1.0, 1.0, threads=4)
        assert (single != threaded).nnz == 0

    def test_l2_error_of_interpolant(self):
        grid = StructuredGrid.from_elements(1.0, 1.0, 1.0, 2, 2, 2)
        linear = np.column_stack([grid.coordinates()[:, 0], np.zeros(grid.n_nodes), np.ones(grid.n_nodes)])
        exact = lambda points: np.column_stack([points[:, 0], np.zeros(len(points)), np.ones(len(points))])
        assert l2_error(grid, linear, exact) < 1e-13


class TestConjugateGradient:
    def test_solves_spd_system(self):
        A = spd_matrix(60)
        b = np.random.default_rng(2).normal(size=60)
        x, info = pcg(A, b, rtol=1e-12)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)
        assert info.converged
        assert info.residual_history[0] == 1.0
        assert len(info.residual_history) == info.iterations + 1

    def test_zero_rhs(self):
        x, info = pcg(spd_matrix(10), np.zeros(10))
        assert not np.any(x)
        assert info.iterations == 0

    def test_iteration_cap(self):
        A = spd_matrix(80, seed=3)
        b = np.random.default_rng(4).normal(size=80)
        with pytest.raises(SolverConvergenceError) as info:
            pcg(A, b, rtol=1e-14, maxiter=2)
        assert len(info.value.residual_history) == 3

    def test_rejects_indefinite_diagonal(self):
        A = sparse.diags([1.0, -1.0]).tocsr()
        with pytest.raises(SolverConvergenceError):
            pcg(A, np.ones(2))

    def test_constrained_solve(self):
        A = spd_matrix(30, seed=5)
        b = np.ones(30)
        fixed = np.array([0, 7, 29])
        x, _ = solve_constrained(A, b, fixed, rtol=1e-12)
        assert not np.any(x[fixed])
        free = np.setdiff1d(np.arange(30), fixed)
        np.testing.assert_allclose((A @ x)[free], 1.0, atol=1e-9)
