"""Fine-scale composite problem, recovery sequence and fiber diagnostics."""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .fib_cells import corrector_z
from .fib_errors import EmptyLayoutError, PreconditionError, ResolutionError
from .fib_fem import (DEFAULT_RTOL, assemble_elasticity, element_rule, nodal_gradients_at_quadrature,
                      nodal_values_at_quadrature, quadrature_points, solve_constrained, strain_energy_density)
from .fib_geometry import DisplacementField, FiberLayout, StructuredGrid
from .fib_limit import BodyForce
from .fib_material import LameCoefficients, RegimeTag

logger = logging.getLogger(__name__)

# elements per fiber radius
MIN_RESOLUTION = 1.0
WARN_RESOLUTION = 2.0
RECOVERY_RESOLUTION = 2.0

FIRST_DERIVATIVE_STEP = 1e-6
SECOND_DERIVATIVE_STEP = 1e-4
GAMMA1_TOLERANCE = 1e-10

VectorFunction = Callable[[np.ndarray], np.ndarray]


@dataclass
class CompositeAssignment:
    """Per-element material tags of the voxelized composite."""
    fiber_mask: np.ndarray
    matrix: LameCoefficients
    fiber: LameCoefficients
    elements_per_radius: float

    @property
    def n_fiber_elements(self) -> int:
        return int(np.count_nonzero(self.fiber_mask))

    @property
    def voxel_volume_fraction(self) -> float:
        # tags do not depend on x3, so this is also the cross-section fraction
        return float(np.mean(self.fiber_mask))

    def lame_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        lam = np.where(self.fiber_mask, self.fiber.lam, self.matrix.lam)
        mu = np.where(self.fiber_mask, self.fiber.mu, self.matrix.mu)
        return lam, mu

    def to_dict(self) -> Dict:
        return {
            "n_fiber_elements": self.n_fiber_elements,
            "voxel_volume_fraction": self.voxel_volume_fraction,
            "elements_per_radius": self.elements_per_radius,
            "matrix": self.matrix.to_dict(),
            "fiber": self.fiber.to_dict(),
        }


def assign_materials(grid: StructuredGrid, layout: FiberLayout, matrix: LameCoefficients,
                     fiber: LameCoefficients) -> CompositeAssignment:
    """Tag as fiber every element whose centroid lies within r of a fiber axis.

    Raises:
        ResolutionError: fewer than one element per fiber radius
    """
    resolution = layout.r / max(grid.hx, grid.hy)
    if resolution < MIN_RESOLUTION:
        raise ResolutionError(
            f"Fiber radius {layout.r:.4g} is resolved by {resolution:.2f} elements; at least {MIN_RESOLUTION:g} needed "
            f"(in-plane spacing {max(grid.hx, grid.hy):.4g})")
    if resolution < WARN_RESOLUTION:
        logger.warning(f"Fiber radius {layout.r:.4g} is resolved by only {resolution:.2f} elements "
                       f"(at least {WARN_RESOLUTION:g} recommended)")
    centroids = grid.element_centroids()
    _, X1, X2 = layout.nearest_center(centroids[:, 0], centroids[:, 1])
    mask = X1 * X1 + X2 * X2 <= layout.r * layout.r
    return CompositeAssignment(fiber_mask=mask, matrix=matrix, fiber=fiber, elements_per_radius=resolution)


def layout_manifest(layout: FiberLayout, assignment: Optional[CompositeAssignment] = None) -> Dict:
    manifest = layout.to_dict()
    if assignment is not None:
        manifest["voxel_volume_fraction"] = assignment.voxel_volume_fraction
        manifest["elements_per_radius"] = assignment.elements_per_radius
    return manifest


def fine_energy(values: np.ndarray, grid: StructuredGrid, assignment: CompositeAssignment) -> float:
    """F_eps(u) = sum over elements of integral sigma_eps(u):e(u) for a nodal field."""
    rule = element_rule(grid.spacing)
    lam, mu = assignment.lame_arrays()
    grad = nodal_gradients_at_quadrature(grid, np.asarray(values, dtype=float).reshape(grid.n_nodes, 3), rule)
    density = strain_energy_density(grad, lam[:, None], mu[:, None])
    return float(np.einsum("q,eq->", rule.weights, density))


def solve_fine(grid: StructuredGrid, layout: FiberLayout, matrix: LameCoefficients, fiber: LameCoefficients,
               f: BodyForce, rtol: float = DEFAULT_RTOL, threads: int = 1) -> Tuple[DisplacementField, float]:
    """Solve the composite elasticity problem with u = 0 on Gamma_1, traction free elsewhere.

    Args:
        grid: structured grid of Omega
        layout: fiber layout
        matrix: Lame coefficients of the matrix
        fiber: Lame coefficients of the fibers
        f: body force
        rtol: CG relative tolerance
        threads: assembly workers

    Returns:
        (u_eps, F_eps(u_eps))
    """
    start_time = time.time()
    assignment = assign_materials(grid, layout, matrix, fiber)
    lam, mu = assignment.lame_arrays()
    stiffness = assemble_elasticity(grid, lam, mu, threads)
    fixed = (grid.gamma1_nodes()[:, None] * 3 + np.arange(3)).ravel()
    x, info = solve_constrained(stiffness, f.load_vector(grid), fixed, rtol=rtol)
    energy = float(x @ (stiffness @ x))
    logger.info(f"Fine solve for eps={layout.epsilon:g} completed in {time.time() - start_time:.2f} seconds "
                f"({layout.n_fibers} fibers, {assignment.n_fiber_elements} fiber elements, energy {energy:.6g})")
    return DisplacementField(grid=grid, values=x, solver_info=info.to_dict()), energy


def _fiber_quadrature(field_values: np.ndarray, grid: StructuredGrid, assignment: CompositeAssignment):
    if assignment.n_fiber_elements == 0:
        raise EmptyLayoutError("No grid element is tagged as fiber")
    rule = element_rule(grid.spacing)
    values = nodal_values_at_quadrature(grid, field_values, rule)[assignment.fiber_mask]
    return rule, values


def rescaled_restriction(u: DisplacementField, layout: FiberLayout, assignment: CompositeAssignment,
                         phi: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(|Omega| / |T_eps|) integral over T_eps of u phi, and the plain fiber average of u.

    T_eps is the voxelized fiber set; phi maps (n, 3) points to (n,)
    scalars and defaults to 1.
    """
    grid = u.grid
    rule, values = _fiber_quadrature(u.values, grid, assignment)
    fiber_volume = assignment.n_fiber_elements * float(np.sum(rule.weights))
    if phi is None:
        weights = np.ones(values.shape[:2])
    else:
        points = quadrature_points(grid, rule)[assignment.fiber_mask]
        weights = np.asarray(phi(points.reshape(-1, 3)), dtype=float).reshape(values.shape[:2])
    tested = np.einsum("q,eq,eqi->i", rule.weights, weights, values)
    average = np.einsum("q,eqi->i", rule.weights, values) / fiber_volume
    return grid.volume / fiber_volume * tested, average


def _axis_derivative(function: VectorFunction, points: np.ndarray, step: float, order: int) -> np.ndarray:
    shift = np.zeros(3)
    shift[2] = step
    if order == 1:
        return (function(points + shift) - function(points - shift)) / (2.0 * step)
    return (function(points + shift) - 2.0 * function(points) + function(points - shift)) / (step * step)


def recovery_profile(points: np.ndarray, v: VectorFunction, layout: FiberLayout, fiber: LameCoefficients,
                     regime: RegimeTag = RegimeTag.CRITICAL) -> np.ndarray:
    """R_eps(v) around the nearest fiber axis, (n, 3).

    Critical and soft regimes:
        R_a = v_a(axis) - c X_a d3 v3(axis),  R_3 = v3(axis) - X_1 d3 v1(axis) - X_2 d3 v2(axis)
    Flexion regime:
        R_1 = v1 - c (X_1^2 - X_2^2)/2 d33 v1 - c X_1 X_2/2 d33 v2
        R_2 = v2 - c (X_1^2 - X_2^2)/2 d33 v2 - c X_1 X_2/2 d33 v1
        R_3 = -X_1 d3 v1 - X_2 d3 v2
    with c = lambda_eps / (2 (mu_eps + lambda_eps)).
    """
    points = np.asarray(points, dtype=float)
    index, X1, X2 = layout.nearest_center(points[:, 0], points[:, 1])
    axis = np.column_stack([layout.centers[index], points[:, 2]])
    c = fiber.lam / (2.0 * (fiber.mu + fiber.lam))
    step = FIRST_DERIVATIVE_STEP * layout.L
    values = np.asarray(v(axis), dtype=float)
    slope = _axis_derivative(v, axis, step, 1)
    profile = np.empty_like(values)
    if regime == RegimeTag.FLEXION:
        curvature = _axis_derivative(v, axis, SECOND_DERIVATIVE_STEP * layout.L, 2)
        diagonal = 0.5 * c * (X1 * X1 - X2 * X2)
        cross = 0.5 * c * X1 * X2
        profile[:, 0] = values[:, 0] - diagonal * curvature[:, 0] - cross * curvature[:, 1]
        profile[:, 1] = values[:, 1] - diagonal * curvature[:, 1] - cross * curvature[:, 0]
        profile[:, 2] = -X1 * slope[:, 0] - X2 * slope[:, 1]
    else:
        profile[:, 0] = values[:, 0] - c * X1 * slope[:, 2]
        profile[:, 1] = values[:, 1] - c * X2 * slope[:, 2]
        profile[:, 2] = values[:, 2] - X1 * slope[:, 0] - X2 * slope[:, 1]
    return profile


def boundary_ramp(x3: np.ndarray, eps: float) -> np.ndarray:
    """psi_eps = min(1, max(0, (x3 - eps) / eps))."""
    return np.clip((np.asarray(x3, dtype=float) - eps) / eps, 0.0, 1.0)


def _check_gamma1(name: str, function: VectorFunction, grid: StructuredGrid):
    bottom = grid.coordinates()[grid.gamma1_nodes()]
    if np.max(np.abs(function(bottom)), initial=0.0) > GAMMA1_TOLERANCE:
        raise PreconditionError(f"{name} must vanish on Gamma_1")


def recovery_field(u: VectorFunction, v: VectorFunction, grid: StructuredGrid, layout: FiberLayout,
                   base: LameCoefficients, fiber: LameCoefficients,
                   regime: RegimeTag = RegimeTag.CRITICAL) -> DisplacementField:
    """Nodal interpolant of u - psi_eps sum_m z^m (u_m - R_eps(v)_m).

    Args:
        u, v: closed-form fields mapping (n, 3) points to (n, 3) values
        grid: structured grid
        layout: fiber layout
        base: matrix Lame coefficients (fix kappa of the correctors)
        fiber: fiber Lame coefficients (cross-section correction)
        regime: FLEXION selects the bending profile

    Returns:
        DisplacementField of the recovery sequence
    """
    _check_gamma1("u", u, grid)
    _check_gamma1("v", v, grid)
    points = grid.coordinates()
    u_values = np.asarray(u(points), dtype=float)
    difference = u_values - recovery_profile(points, v, layout, fiber, regime)
    correction = np.zeros_like(u_values)
    for m in (1, 2, 3):
        correction += corrector_z(points, m, layout, base) * difference[:, m - 1:m]
    ramp = boundary_ramp(points[:, 2], layout.epsilon)
    return DisplacementField(grid=grid, values=u_values - ramp[:, None] * correction)


def recovery_grid(grid: StructuredGrid, layout: FiberLayout) -> StructuredGrid:
    """grid, refined in-plane until the fiber radius spans RECOVERY_RESOLUTION elements."""
    ex, ey, ez = grid.element_shape
    ex = max(ex, math.ceil(RECOVERY_RESOLUTION * grid.a / layout.r - 1e-9))
    ey = max(ey, math.ceil(RECOVERY_RESOLUTION * grid.b / layout.r - 1e-9))
    refined = StructuredGrid.from_elements(grid.a, grid.b, grid.L, ex, ey, ez)
    if refined.element_shape != grid.element_shape:
        logger.info(f"Recovery grid refined to {ex}x{ey}x{ez} elements for r={layout.r:.4g}")
    return refined


def recovery_energy(u: VectorFunction, v: VectorFunction, grid: StructuredGrid, layout: FiberLayout,
                    base: LameCoefficients, fiber: LameCoefficients,
                    regime: RegimeTag = RegimeTag.CRITICAL) -> float:
    """F_eps of the interpolated recovery field.

    Raises:
        ResolutionError: fewer than RECOVERY_RESOLUTION elements per fiber radius
    """
    resolution = layout.r / max(grid.hx, grid.hy)
    if resolution < RECOVERY_RESOLUTION - 1e-9:
        raise ResolutionError(
            f"Recovery field needs {RECOVERY_RESOLUTION:g} elements per fiber radius, got {resolution:.2f} "
            f"(use recovery_grid)")
    assignment = assign_materials(grid, layout, base, fiber)
    recovery = recovery_field(u, v, grid, layout, base, fiber, regime)
    return fine_energy(recovery.values, grid, assignment)


def gradient_norm_squared(values: np.ndarray, grid: StructuredGrid) -> float:
    """integral over Omega of |grad u|^2."""
    rule = element_rule(grid.spacing)
    grad = nodal_gradients_at_quadrature(grid, np.asarray(values, dtype=float).reshape(grid.n_nodes, 3), rule)
    return float(np.einsum("q,eqij,eqij->", rule.weights, grad, grad))


def korn_ratio(u: DisplacementField, layout: FiberLayout, assignment: CompositeAssignment) -> float:
    """(1/|T_eps|) int_T u^2 / (int |grad u|^2 - eps^2 ln r + eps^2).

    Zero for the zero field.
    """
    grid = u.grid
    if not np.any(u.values):
        return 0.0
    rule, values = _fiber_quadrature(u.values, grid, assignment)
    fiber_volume = assignment.n_fiber_elements * float(np.sum(rule.weights))
    fiber_mean_square = float(np.einsum("q,eqi,eqi->", rule.weights, values, values)) / fiber_volume
    eps = layout.epsilon
    bracket = gradient_norm_squared(u.values, grid) - eps * eps * math.log(layout.r) + eps * eps
    return fiber_mean_square / bracket if bracket > 0 else 0.0


def axial_reference_field(grid: StructuredGrid) -> DisplacementField:
    """x3 e3, the fixed reference for Korn ratios."""
    values = np.zeros((grid.n_nodes, 3))
    values[:, 2] = grid.coordinates()[:, 2]
    return DisplacementField(grid=grid, values=values)


@dataclass
class EnergyReport:
    epsilon: float
    F_eps: float
    F_limit: float
    fiber_avg_u: np.ndarray
    korn_ratio: float
    layout: Dict = field(default_factory=dict)
    grid: Dict = field(default_factory=dict)

    @property
    def gap_rel(self) -> float:
        return abs(self.F_eps - self.F_limit) / max(self.F_limit, 1e-300)

    def to_dict(self) -> Dict:
        return {
            "epsilon": self.epsilon,
            "F_eps": self.F_eps,
            "F_limit": self.F_limit,
            "gap_rel": self.gap_rel,
            "fiber_avg_u": [float(value) for value in self.fiber_avg_u],
            "korn_ratio": self.korn_ratio,
            "layout": self.layout,
            "grid": self.grid,
        }
