"""Finite element building blocks on uniform hexahedral grids.

Trilinear elements on the reference cube [0, 1]^3 with tensor Gauss
rules, Hermite cubics along x3, chunked sparse assembly and a
Jacobi-preconditioned conjugate gradient.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.linalg import cg
from scipy.special import roots_legendre

from .fib_errors import SolverConvergenceError
from .fib_geometry import StructuredGrid

logger = logging.getLogger(__name__)

# Elements per assembly chunk; fixed so that results do not depend on the thread count
ASSEMBLY_CHUNK = 2048

DEFAULT_RTOL = 1e-10


def gauss_legendre(n: int, a: float = 0.0, b: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre nodes and weights on [a, b]."""
    nodes, weights = roots_legendre(n)
    half = 0.5 * (b - a)
    return a + half * (nodes + 1.0), half * weights


def _linear(d: int, t: np.ndarray) -> np.ndarray:
    return t if d else 1.0 - t


def _linear_slope(d: int, t: np.ndarray) -> np.ndarray:
    return np.ones_like(t) if d else -np.ones_like(t)


def trilinear_values(xi: np.ndarray) -> np.ndarray:
    """(nq, 8) trilinear shape values at reference points xi (nq, 3)."""
    values = np.empty((len(xi), 8))
    for l in range(8):
        di, dj, dk = l & 1, (l >> 1) & 1, (l >> 2) & 1
        values[:, l] = _linear(di, xi[:, 0]) * _linear(dj, xi[:, 1]) * _linear(dk, xi[:, 2])
    return values


def trilinear_gradients(xi: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """(nq, 8, 3) physical gradients of the trilinear shape functions."""
    hx, hy, hz = spacing
    grads = np.empty((len(xi), 8, 3))
    for l in range(8):
        di, dj, dk = l & 1, (l >> 1) & 1, (l >> 2) & 1
        fx, fy, fz = _linear(di, xi[:, 0]), _linear(dj, xi[:, 1]), _linear(dk, xi[:, 2])
        grads[:, l, 0] = _linear_slope(di, xi[:, 0]) * fy * fz / hx
        grads[:, l, 1] = fx * _linear_slope(dj, xi[:, 1]) * fz / hy
        grads[:, l, 2] = fx * fy * _linear_slope(dk, xi[:, 2]) / hz
    return grads


def bilinear_values(xi: np.ndarray) -> np.ndarray:
    """(nq, 4) in-plane bilinear values, corner a = di + 2 dj."""
    values = np.empty((len(xi), 4))
    for a in range(4):
        values[:, a] = _linear(a & 1, xi[:, 0]) * _linear((a >> 1) & 1, xi[:, 1])
    return values


def hermite_values(s: np.ndarray, hz: float) -> np.ndarray:
    """(nq, 4) cubic Hermite basis on an element of length hz.

    Columns: value at bottom, slope at bottom, value at top, slope at top.
    """
    s = np.asarray(s, dtype=float)
    return np.column_stack([
        1.0 - 3.0 * s ** 2 + 2.0 * s ** 3,
        (s - 2.0 * s ** 2 + s ** 3) * hz,
        3.0 * s ** 2 - 2.0 * s ** 3,
        (-s ** 2 + s ** 3) * hz,
    ])


def hermite_second_derivatives(s: np.ndarray, hz: float) -> np.ndarray:
    """(nq, 4) d^2/dx3^2 of the Hermite basis."""
    s = np.asarray(s, dtype=float)
    return np.column_stack([
        (-6.0 + 12.0 * s) / hz ** 2,
        (-4.0 + 6.0 * s) / hz,
        (6.0 - 12.0 * s) / hz ** 2,
        (-2.0 + 6.0 * s) / hz,
    ])


@dataclass
class ElementRule:
    """Tensor Gauss rule on one element; weights include the Jacobian."""
    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    gradients: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.weights)


def element_rule(spacing: Sequence[float], orders: Sequence[int] = (2, 2, 2)) -> ElementRule:
    rules = [gauss_legendre(n) for n in orders]
    px, py, pz = np.meshgrid(rules[0][0], rules[1][0], rules[2][0], indexing="ij")
    wx, wy, wz = np.meshgrid(rules[0][1], rules[1][1], rules[2][1], indexing="ij")
    points = np.column_stack([px.ravel(), py.ravel(), pz.ravel()])
    weights = (wx * wy * wz).ravel() * float(np.prod(spacing))
    return ElementRule(
        points=points,
        weights=weights,
        values=trilinear_values(points),
        gradients=trilinear_gradients(points, spacing),
    )


def quadrature_points(grid: StructuredGrid, rule: ElementRule, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """(n_elements, nq, 3) physical quadrature points."""
    origins = grid.element_origins()[start:stop]
    return origins[:, None, :] + rule.points[None, :, :] * np.array(grid.spacing)


def elasticity_templates(rule: ElementRule) -> Tuple[np.ndarray, np.ndarray]:
    """Element matrices K_lambda, K_mu with K_e = lambda K_lambda + mu K_mu.

    Local dof index is 3 * corner + component.
    """
    w, g = rule.weights, rule.gradients
    k_lambda = np.einsum("q,qai,qbj->aibj", w, g, g)
    laplace = np.einsum("q,qak,qbk->ab", w, g, g)
    k_mu = np.einsum("ab,ij->aibj", laplace, np.eye(3)) + np.einsum("q,qaj,qbi->aibj", w, g, g)
    return k_lambda.reshape(24, 24), k_mu.reshape(24, 24)


def scalar_templates(rule: ElementRule) -> Tuple[np.ndarray, np.ndarray]:
    """Per-point products (nq, 8, 8): weighted N_a N_b and dN_a/dx3 dN_b/dx3."""
    w, n, g = rule.weights, rule.values, rule.gradients
    mass = w[:, None, None] * n[:, :, None] * n[:, None, :]
    axial = w[:, None, None] * g[:, :, None, 2] * g[:, None, :, 2]
    return mass, axial


def vector_dofs(element_nodes: np.ndarray) -> np.ndarray:
    """(n_elements, 24) displacement dofs node * 3 + component."""
    return (element_nodes[:, :, None] * 3 + np.arange(3)).reshape(len(element_nodes), 24)


def _chunks(n: int) -> List[Tuple[int, int]]:
    return [(start, min(start + ASSEMBLY_CHUNK, n)) for start in range(0, n, ASSEMBLY_CHUNK)]


def assemble_matrix(row_dofs: np.ndarray, col_dofs: np.ndarray,
                    block_fn: Callable[[int, int], np.ndarray],
                    shape: Tuple[int, int], threads: int = 1) -> csr_matrix:
    """Assemble element blocks into a sparse matrix.

    Args:
        row_dofs: (n_elements, p) global row indices
        col_dofs: (n_elements, q) global column indices
        block_fn: block_fn(start, stop) -> (stop - start, p, q) element blocks
        shape: global matrix shape
        threads: worker count; chunks are summed in element order

    Returns:
        CSR matrix
    """
    n_elements, p = row_dofs.shape
    q = col_dofs.shape[1]

    def build(bounds):
        start, stop = bounds
        blocks = block_fn(start, stop)
        rows = np.broadcast_to(row_dofs[start:stop, :, None], (stop - start, p, q))
        cols = np.broadcast_to(col_dofs[start:stop, None, :], (stop - start, p, q))
        return coo_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        parts = list(executor.map(build, _chunks(n_elements)))

    matrix = csr_matrix(shape)
    for part in parts:
        matrix = matrix + part
    matrix.sum_duplicates()
    return matrix


def assemble_vector(dofs: np.ndarray, contributions: np.ndarray, size: int) -> np.ndarray:
    """Scatter-add element contributions (same shape as dofs) into a vector."""
    return np.bincount(dofs.ravel(), weights=contributions.ravel(), minlength=size)


def assemble_elasticity(grid: StructuredGrid, lam: np.ndarray, mu: np.ndarray, threads: int = 1) -> csr_matrix:
    """Stiffness of sum_e integral sigma(u):e(u) with per-element Lame values.

    Args:
        grid: structured grid
        lam: (n_elements,) or scalar lambda
        mu: (n_elements,) or scalar mu
        threads: assembly workers

    Returns:
        (3N, 3N) CSR stiffness matrix
    """
    start_time = time.time()
    rule = element_rule(grid.spacing)
    k_lambda, k_mu = elasticity_templates(rule)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (grid.n_elements,))
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (grid.n_elements,))
    dofs = vector_dofs(grid.element_nodes())

    def blocks(start, stop):
        return lam[start:stop, None, None] * k_lambda + mu[start:stop, None, None] * k_mu

    size = 3 * grid.n_nodes
    matrix = assemble_matrix(dofs, dofs, blocks, (size, size), threads)
    logger.info(f"Elasticity assembly completed in {time.time() - start_time:.2f} seconds "
                f"({grid.n_nodes} nodes, {grid.n_elements} elements)")
    return matrix


def assemble_scalar(grid: StructuredGrid, coefficient: np.ndarray, kind: str = "mass", threads: int = 1) -> csr_matrix:
    """(N, N) matrix of integral c N_a N_b ("mass") or c dN_a/dx3 dN_b/dx3 ("axial").

    coefficient is (n_elements, nq) at the 2x2x2 Gauss points, or a scalar.
    """
    rule = element_rule(grid.spacing)
    mass, axial = scalar_templates(rule)
    template = mass if kind == "mass" else axial
    coefficient = np.broadcast_to(np.asarray(coefficient, dtype=float), (grid.n_elements, rule.n_points))
    nodes = grid.element_nodes()

    def blocks(start, stop):
        return np.einsum("eq,qab->eab", coefficient[start:stop], template)

    return assemble_matrix(nodes, nodes, blocks, (grid.n_nodes, grid.n_nodes), threads)


def body_load(grid: StructuredGrid, force: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Consistent load vector integral f . phi_i for f evaluated at (n, 3) points."""
    rule = element_rule(grid.spacing)
    points = quadrature_points(grid, rule)
    values = np.asarray(force(points.reshape(-1, 3)), dtype=float).reshape(grid.n_elements, rule.n_points, 3)
    # (e, a, i) = sum_q w_q N_a(q) f_i(q)
    contributions = np.einsum("q,qa,eqi->eai", rule.weights, rule.values, values)
    dofs = vector_dofs(grid.element_nodes())
    return assemble_vector(dofs, contributions.reshape(grid.n_elements, 24), 3 * grid.n_nodes)


def nodal_gradients_at_quadrature(grid: StructuredGrid, nodal: np.ndarray, rule: ElementRule) -> np.ndarray:
    """(n_elements, nq, 3, 3) gradient du_i/dx_j of a nodal 3-field."""
    element_values = nodal[grid.element_nodes()]  # (e, 8, 3)
    return np.einsum("eai,qaj->eqij", element_values, rule.gradients)


def nodal_values_at_quadrature(grid: StructuredGrid, nodal: np.ndarray, rule: ElementRule) -> np.ndarray:
    """(n_elements, nq, ...) interpolated values of a nodal field."""
    element_values = nodal[grid.element_nodes()]
    return np.einsum("ea...,qa->eq...", element_values, rule.values)


def strain_energy_density(grad: np.ndarray, lam, mu) -> np.ndarray:
    """sigma(u):e(u) = lambda (tr e)^2 + 2 mu e:e from displacement gradients (..., 3, 3)."""
    strain = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    trace = np.trace(strain, axis1=-2, axis2=-1)
    return lam * trace ** 2 + 2.0 * mu * np.sum(strain * strain, axis=(-2, -1))


def l2_error(grid: StructuredGrid, nodal: np.ndarray, exact: Callable[[np.ndarray], np.ndarray]) -> float:
    """L2 norm of (interpolated nodal field - exact) with a 3x3x3 Gauss rule."""
    rule = element_rule(grid.spacing, orders=(3, 3, 3))
    nodal = np.asarray(nodal, dtype=float)
    approx = nodal_values_at_quadrature(grid, nodal, rule)
    points = quadrature_points(grid, rule)
    reference = np.asarray(exact(points.reshape(-1, 3)), dtype=float).reshape(approx.shape)
    diff = (approx - reference).reshape(grid.n_elements, rule.n_points, -1)
    return math.sqrt(float(np.einsum("q,eqi,eqi->", rule.weights, diff, diff)))


@dataclass
class SolveInfo:
    iterations: int = 0
    converged: bool = True
    residual_norm: float = 0.0
    residual_history: List[float] = field(default_factory=list)

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "residual_norm": self.residual_norm,
        }


def pcg(matrix: csr_matrix, rhs: np.ndarray, rtol: float = DEFAULT_RTOL,
        maxiter: Optional[int] = None) -> Tuple[np.ndarray, SolveInfo]:
    """Conjugate gradient with diagonal (Jacobi) preconditioning.

    Args:
        matrix: symmetric positive definite CSR matrix
        rhs: right-hand side
        rtol: stop when ||b - A x|| <= rtol ||b||
        maxiter: iteration cap, default 50 sqrt(n)

    Returns:
        (solution, SolveInfo with relative residual history)
    """
    n = len(rhs)
    if maxiter is None:
        maxiter = int(50 * math.ceil(math.sqrt(max(n, 1))))
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros(n), SolveInfo(iterations=0, converged=True, residual_norm=0.0, residual_history=[0.0])

    diagonal = matrix.diagonal()
    if np.any(diagonal <= 0):
        raise SolverConvergenceError("Matrix has non-positive diagonal entries; system is not positive definite")

    history = [1.0]

    def record(xk):
        history.append(float(np.linalg.norm(rhs - matrix @ xk)) / rhs_norm)
        if len(history) % 500 == 0:
            logger.debug(f"CG iteration {len(history) - 1}: relative residual {history[-1]:.3e}")

    start_time = time.time()
    x, status = cg(matrix, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, M=diags(1.0 / diagonal), callback=record)
    iterations = len(history) - 1
    if status > 0:
        raise SolverConvergenceError(
            f"CG did not converge in {maxiter} iterations (relative residual {history[-1]:.3e})", history)
    if status < 0:
        raise SolverConvergenceError(f"CG broke down after {iterations} iterations", history)

    true_residual = float(np.linalg.norm(rhs - matrix @ x)) / rhs_norm
    logger.info(f"CG converged in {iterations} iterations ({time.time() - start_time:.2f} seconds, "
                f"{n} unknowns, relative residual {true_residual:.2e})")
    return x, SolveInfo(iterations=iterations, converged=True, residual_norm=true_residual, residual_history=history)


def solve_constrained(matrix: csr_matrix, rhs: np.ndarray, fixed: np.ndarray,
                      rtol: float = DEFAULT_RTOL, maxiter: Optional[int] = None) -> Tuple[np.ndarray, SolveInfo]:
    """Solve K x = b with x = 0 on the fixed dofs by elimination."""
    size = len(rhs)
    free = np.setdiff1d(np.arange(size), fixed)
    reduced = matrix[free][:, free].tocsr()
    x_free, info = pcg(reduced, rhs[free], rtol=rtol, maxiter=maxiter)
    x = np.zeros(size)
    x[free] = x_free
    return x, info
