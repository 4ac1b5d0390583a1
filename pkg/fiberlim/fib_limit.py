"""Finite element minimization of the homogenized functionals.

Unknowns are the nodal displacement u (trilinear, dofs node * 3 + i)
and the fiber displacement v3 (trilinear, dofs 3N + node). In the
critical and soft regimes v1, v2 coincide with u1, u2, so only the
A33 part of the coupling survives:

    F(u, v3) = int sigma(u):e(u) + 2 pi gamma A33 int w (v3 - u3)^2
               + pi int E(x3) w (d3 v3)^2

with w the cross-section weight (1 unless given). The flexion variant
carries Hermite-in-x3 fields v1, v2 instead of v3.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .fib_errors import PreconditionError, RegimeError
from .fib_expr import Expression, parse_vector
from .fib_fem import (DEFAULT_RTOL, SolveInfo, assemble_elasticity, assemble_matrix, assemble_scalar,
                      assemble_vector, bilinear_values, body_load, element_rule, hermite_second_derivatives,
                      hermite_values, nodal_gradients_at_quadrature, nodal_values_at_quadrature, pcg,
                      quadrature_points, solve_constrained, strain_energy_density, vector_dofs)
from .fib_geometry import StructuredGrid
from .fib_material import EffectiveCoefficients, LameCoefficients

logger = logging.getLogger(__name__)

GAMMA1_TOLERANCE = 1e-12


@dataclass
class BodyForce:
    """Body force density, given as a function of points, a nodal table or a ready load vector."""
    function: Optional[Callable[[np.ndarray], np.ndarray]] = None
    nodal: Optional[np.ndarray] = None
    load: Optional[np.ndarray] = None
    label: str = "f"

    @classmethod
    def zero(cls) -> "BodyForce":
        return cls(function=lambda points: np.zeros((len(points), 3)), label="0")

    @classmethod
    def from_expressions(cls, texts: Sequence[str]) -> "BodyForce":
        components = parse_vector(texts)

        def function(points):
            return np.column_stack([c.at_points(points) for c in components])

        return cls(function=function, label=", ".join(texts))

    @classmethod
    def from_nodal(cls, table: np.ndarray) -> "BodyForce":
        return cls(nodal=np.asarray(table, dtype=float), label="nodal table")

    @classmethod
    def from_load_vector(cls, load: np.ndarray) -> "BodyForce":
        return cls(load=np.asarray(load, dtype=float), label="load vector")

    def nodal_values(self, grid: StructuredGrid) -> np.ndarray:
        if self.nodal is not None:
            if self.nodal.size != 3 * grid.n_nodes:
                raise PreconditionError(f"Nodal force table has {self.nodal.size} values, expected {3 * grid.n_nodes}")
            return self.nodal.reshape(grid.n_nodes, 3)
        if self.function is not None:
            return np.asarray(self.function(grid.coordinates()), dtype=float).reshape(grid.n_nodes, 3)
        return np.zeros((grid.n_nodes, 3))

    def load_vector(self, grid: StructuredGrid) -> np.ndarray:
        """Consistent load integral f . phi_i over the 3N displacement dofs."""
        size = 3 * grid.n_nodes
        if self.load is not None:
            if self.load.shape != (size,):
                raise PreconditionError(f"Load vector has shape {self.load.shape}, expected ({size},)")
            return self.load
        nodal = self.nodal_values(grid)
        if not np.all(np.isfinite(nodal)):
            raise PreconditionError(f"Body force {self.label!r} is not finite on every grid node")
        if self.nodal is not None:
            rule = element_rule(grid.spacing)
            values = nodal_values_at_quadrature(grid, nodal, rule)
            contributions = np.einsum("q,qa,eqi->eai", rule.weights, rule.values, values)
            return assemble_vector(vector_dofs(grid.element_nodes()), contributions.reshape(grid.n_elements, 24), size)
        if self.function is None:
            return np.zeros(size)
        return body_load(grid, self.function)

    def is_zero(self, grid: StructuredGrid) -> bool:
        return not np.any(self.load_vector(grid))


@dataclass
class WeightField:
    """Positive cross-section weight w(x1, x2), e.g. a Jacobian |grad theta^-1|."""
    expression: Optional[Expression] = None

    @classmethod
    def from_text(cls, text: Optional[str]) -> "WeightField":
        return cls(expression=Expression(text) if text else None)

    def at_quadrature(self, grid: StructuredGrid) -> np.ndarray:
        rule = element_rule(grid.spacing)
        if self.expression is None:
            return np.ones((grid.n_elements, rule.n_points))
        values = self.expression.at_points(quadrature_points(grid, rule))
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise PreconditionError(f"Weight {self.expression.text!r} must be finite and strictly positive on the grid")
        return values


@dataclass
class LimitState:
    """Nodal unknowns of a limit problem.

    v12 holds explicit v1, v2 when they differ from u1, u2; flexion holds
    the Hermite unknowns (v1, d3 v1, v2, d3 v2) per node.
    """
    grid: StructuredGrid
    u: np.ndarray
    v3: Optional[np.ndarray] = None
    v12: Optional[np.ndarray] = None
    flexion: Optional[np.ndarray] = None
    info: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(self.grid.n_nodes, 3)
        if self.v3 is not None:
            self.v3 = np.asarray(self.v3, dtype=float).reshape(self.grid.n_nodes)

    @classmethod
    def zeros(cls, grid: StructuredGrid) -> "LimitState":
        return cls(grid=grid, u=np.zeros((grid.n_nodes, 3)), v3=np.zeros(grid.n_nodes))

    @classmethod
    def from_functions(cls, grid: StructuredGrid, u: Callable, v: Optional[Callable] = None) -> "LimitState":
        """Nodal interpolation of u(points) and optionally v(points), both (n, 3)."""
        points = grid.coordinates()
        u_values = np.asarray(u(points), dtype=float)
        if v is None:
            return cls(grid=grid, u=u_values, v3=u_values[:, 2].copy())
        v_values = np.asarray(v(points), dtype=float)
        return cls(grid=grid, u=u_values, v3=v_values[:, 2].copy(), v12=v_values[:, :2].copy())

    def v_nodal(self) -> np.ndarray:
        """(N, 3) fiber displacement with v_alpha = u_alpha unless given."""
        v = np.zeros((self.grid.n_nodes, 3))
        v[:, :2] = self.v12 if self.v12 is not None else self.u[:, :2]
        v[:, 2] = self.v3 if self.v3 is not None else 0.0
        return v

    def check_gamma1(self):
        bottom = self.grid.gamma1_nodes()
        if np.max(np.abs(self.u[bottom]), initial=0.0) > GAMMA1_TOLERANCE:
            raise PreconditionError("u must vanish on Gamma_1")
        if self.v3 is not None and np.max(np.abs(self.v3[bottom]), initial=0.0) > GAMMA1_TOLERANCE:
            raise PreconditionError("v3 must vanish on Gamma_1")

    def vector(self, include_v3: bool = True) -> np.ndarray:
        parts = [self.u.reshape(-1)]
        if include_v3:
            parts.append(self.v3 if self.v3 is not None else np.zeros(self.grid.n_nodes))
        return np.concatenate(parts)

    def table(self) -> np.ndarray:
        """(N, 7) rows x, y, z, u1, u2, u3, v3."""
        v3 = self.v3 if self.v3 is not None else np.zeros(self.grid.n_nodes)
        return np.column_stack([self.grid.coordinates(), self.u, v3])


@dataclass
class LimitSystem:
    """Assembled quadratic form x^t K x - 2 b^t x with Dirichlet dofs."""
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    fixed: np.ndarray
    n_u: int
    has_v3: bool


def _selection_u3(n_nodes: int) -> sparse.csr_matrix:
    """(N, 3N) matrix picking the u3 dofs."""
    rows = np.arange(n_nodes)
    return sparse.csr_matrix((np.ones(n_nodes), (rows, 3 * rows + 2)), shape=(n_nodes, 3 * n_nodes))


def _fixed_u_dofs(grid: StructuredGrid) -> np.ndarray:
    return (grid.gamma1_nodes()[:, None] * 3 + np.arange(3)).ravel()


def _fiber_modulus(grid: StructuredGrid, eff: EffectiveCoefficients,
                   young: Optional[Expression]) -> np.ndarray:
    """E(x3) at the quadrature points; the constant E_o unless a profile is given."""
    rule = element_rule(grid.spacing)
    if young is None:
        if not math.isfinite(eff.E_o) or eff.E_o < 0:
            raise PreconditionError(f"E_o must be finite and non-negative, got {eff.E_o}")
        return np.full((grid.n_elements, rule.n_points), eff.E_o)
    values = young.at_points(quadrature_points(grid, rule))
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise PreconditionError(f"Young profile {young.text!r} must be finite and non-negative")
    return values


def assemble_limit_system(grid: StructuredGrid, base: LameCoefficients, eff: EffectiveCoefficients,
                          f: BodyForce, weight: Optional[WeightField] = None,
                          young: Optional[Expression] = None, threads: int = 1) -> LimitSystem:
    """Assemble the coupled (u, v3) system of the critical and soft regimes.

    When gamma = 0 and E = 0 the v3 block vanishes identically; it is
    dropped and v3 is reported as zero.
    """
    if not math.isfinite(eff.gamma) or eff.gamma < 0:
        raise RegimeError(f"The coupled limit needs a finite gamma >= 0, got {eff.gamma}; use the stiff solver")
    weight = weight or WeightField()
    n = grid.n_nodes
    stiffness = assemble_elasticity(grid, base.lam, base.mu, threads)
    load = f.load_vector(grid)
    fixed_u = _fixed_u_dofs(grid)

    w = weight.at_quadrature(grid)
    coupling = 2.0 * math.pi * eff.gamma * eff.A33 * w
    fiber = math.pi * _fiber_modulus(grid, eff, young) * w
    if not np.any(coupling) and not np.any(fiber):
        logger.warning("gamma = 0 and E = 0: the v3 block is singular and is dropped (v3 = 0)")
        return LimitSystem(matrix=stiffness, rhs=load, fixed=fixed_u, n_u=3 * n, has_v3=False)

    mass = assemble_scalar(grid, coupling, "mass", threads)
    axial = assemble_scalar(grid, fiber, "axial", threads)
    select = _selection_u3(n)
    matrix = sparse.bmat([
        [stiffness + select.T @ mass @ select, -(select.T @ mass)],
        [-(mass @ select), mass + axial],
    ], format="csr")
    rhs = np.concatenate([load, np.zeros(n)])
    fixed = np.concatenate([fixed_u, 3 * n + grid.gamma1_nodes()])
    return LimitSystem(matrix=matrix, rhs=rhs, fixed=fixed, n_u=3 * n, has_v3=True)


def _solve_system(system: LimitSystem, rtol: float) -> Tuple[np.ndarray, SolveInfo, float]:
    x, info = solve_constrained(system.matrix, system.rhs, system.fixed, rtol=rtol)
    energy = float(x @ (system.matrix @ x))
    return x, info, energy


def _info_dict(info: SolveInfo) -> Dict:
    return {"iterations": info.iterations, "residual_norm": info.residual_norm,
            "residual_history": info.residual_history}


def solve_limit(grid: StructuredGrid, base: LameCoefficients, eff: EffectiveCoefficients, f: BodyForce,
                weight: Optional[WeightField] = None, young: Optional[Expression] = None,
                rtol: float = DEFAULT_RTOL, threads: int = 1) -> Tuple[LimitState, float]:
    """Minimize F(u, v3) - 2 int f . u over u = v3 = 0 on Gamma_1.

    Args:
        grid: structured grid of Omega
        base: matrix Lame coefficients
        eff: effective coefficients (finite gamma, E_o >= 0)
        f: body force
        weight: optional cross-section weight
        young: optional E(x3) profile replacing E_o
        rtol: CG relative tolerance
        threads: assembly workers

    Returns:
        (LimitState, F value at the minimizer)
    """
    start_time = time.time()
    system = assemble_limit_system(grid, base, eff, f, weight, young, threads)
    x, info, energy = _solve_system(system, rtol)
    n_u = system.n_u
    v3 = x[n_u:] if system.has_v3 else np.zeros(grid.n_nodes)
    state = LimitState(grid=grid, u=x[:n_u], v3=v3, info=_info_dict(info))
    logger.info(f"Limit solve completed in {time.time() - start_time:.2f} seconds (energy {energy:.6g})")
    return state, energy


def solve_elasticity(grid: StructuredGrid, base: LameCoefficients, f: BodyForce,
                     rtol: float = DEFAULT_RTOL, threads: int = 1) -> Tuple[np.ndarray, float, SolveInfo]:
    """Plain elasticity with u = 0 on Gamma_1; returns (u (N, 3), energy, info)."""
    stiffness = assemble_elasticity(grid, base.lam, base.mu, threads)
    x, info = solve_constrained(stiffness, f.load_vector(grid), _fixed_u_dofs(grid), rtol=rtol)
    return x.reshape(grid.n_nodes, 3), float(x @ (stiffness @ x)), info


def solve_stiff_limit(grid: StructuredGrid, base: LameCoefficients, eff: EffectiveCoefficients, f: BodyForce,
                      weight: Optional[WeightField] = None, young: Optional[Expression] = None,
                      rtol: float = DEFAULT_RTOL, threads: int = 1) -> Tuple[LimitState, float]:
    """Minimize int sigma(u):e(u) + pi int E w (e33(u))^2 - 2 int f . u; v3 = u3."""
    start_time = time.time()
    weight = weight or WeightField()
    stiffness = assemble_elasticity(grid, base.lam, base.mu, threads)
    fiber = math.pi * _fiber_modulus(grid, eff, young) * weight.at_quadrature(grid)
    if np.any(fiber):
        select = _selection_u3(grid.n_nodes)
        stiffness = (stiffness + select.T @ assemble_scalar(grid, fiber, "axial", threads) @ select).tocsr()
    load = f.load_vector(grid)
    x, info = solve_constrained(stiffness, load, _fixed_u_dofs(grid), rtol=rtol)
    energy = float(x @ (stiffness @ x))
    u = x.reshape(grid.n_nodes, 3)
    state = LimitState(grid=grid, u=u, v3=u[:, 2].copy(), info=_info_dict(info))
    logger.info(f"Stiff limit solve completed in {time.time() - start_time:.2f} seconds (energy {energy:.6g})")
    return state, energy


def solve_conjectural_limit(grid: StructuredGrid, base: LameCoefficients, eff: EffectiveCoefficients,
                            f: BodyForce, rtol: float = DEFAULT_RTOL, threads: int = 1) -> Tuple[LimitState, float]:
    """gamma = 0 candidate: u and v3 decouple, v3 carries no load and stays 0."""
    logger.warning("Solving the conjectural gamma = 0 functional; results are not covered by the convergence theory")
    u, energy, info = solve_elasticity(grid, base, f, rtol, threads)
    return LimitState(grid=grid, u=u, v3=np.zeros(grid.n_nodes), info=_info_dict(info)), energy


def limit_energy_terms(state: LimitState, base: LameCoefficients, eff: EffectiveCoefficients,
                       weight: Optional[WeightField] = None, young: Optional[Expression] = None) -> Dict[str, float]:
    """Elastic, coupling and fiber parts of F(u, v) by 2x2x2 Gauss quadrature.

    With gamma = inf the state is read as the stiff functional (v3 = u3,
    no coupling term).
    """
    grid = state.grid
    rule = element_rule(grid.spacing)
    weight = weight or WeightField()
    w = weight.at_quadrature(grid)

    grad_u = nodal_gradients_at_quadrature(grid, state.u, rule)
    elastic = float(np.einsum("q,eq->", rule.weights, strain_energy_density(grad_u, base.lam, base.mu)))

    v = state.v_nodal()
    if math.isinf(eff.gamma):
        v[:, 2] = state.u[:, 2]
        coupling = 0.0
    else:
        diff = nodal_values_at_quadrature(grid, v - state.u, rule)
        quadratic = np.einsum("eqi,i,eqi->eq", diff, np.diag(eff.A), diff)
        coupling = 2.0 * math.pi * eff.gamma * float(np.einsum("q,eq,eq->", rule.weights, w, quadratic))

    modulus = _fiber_modulus(grid, eff, young)
    d3v3 = np.einsum("ea,qa->eq", v[grid.element_nodes(), 2], rule.gradients[:, :, 2])
    fiber = math.pi * float(np.einsum("q,eq,eq,eq->", rule.weights, modulus, w, d3v3 ** 2))
    return {"elastic": elastic, "coupling": coupling, "fiber": fiber, "flexion": 0.0,
            "total": elastic + coupling + fiber}


def limit_energy(state: LimitState, base: LameCoefficients, eff: EffectiveCoefficients,
                 weight: Optional[WeightField] = None, young: Optional[Expression] = None) -> float:
    """F(u, v) of a state satisfying the Gamma_1 constraints."""
    state.check_gamma1()
    return limit_energy_terms(state, base, eff, weight, young)["total"]


def load_work(state: LimitState, f: BodyForce) -> float:
    """int f . u for the discrete u."""
    return float(f.load_vector(state.grid) @ state.u.reshape(-1))


def objective(state: LimitState, base: LameCoefficients, eff: EffectiveCoefficients, f: BodyForce,
              weight: Optional[WeightField] = None, young: Optional[Expression] = None) -> float:
    return limit_energy(state, base, eff, weight, young) - 2.0 * load_work(state, f)


def el_residual(state: LimitState, base: LameCoefficients, eff: EffectiveCoefficients, f: BodyForce,
                weight: Optional[WeightField] = None, young: Optional[Expression] = None,
                threads: int = 1) -> Dict[str, float]:
    """Discrete Euler-Lagrange residual b - K x on the free dofs, split per block.

    The u block holds the momentum balance with its traction-free natural
    conditions; the v3 block holds the fiber equation with e33(v) = 0 on
    Gamma_2. Norms are Euclidean in the dual (load) space.
    """
    system = assemble_limit_system(state.grid, base, eff, f, weight, young, threads)
    x = state.vector(include_v3=system.has_v3)
    residual = system.rhs - system.matrix @ x
    residual[system.fixed] = 0.0
    load_norm = float(np.linalg.norm(np.delete(system.rhs, system.fixed)))
    u_norm = float(np.linalg.norm(residual[:system.n_u]))
    v_norm = float(np.linalg.norm(residual[system.n_u:]))
    total = float(np.linalg.norm(residual))
    return {
        "residual_u": u_norm,
        "residual_v": v_norm,
        "residual_total": total,
        "load_norm": load_norm,
        "relative": total / load_norm if load_norm > 0 else total,
    }


def manufactured_load(grid: StructuredGrid, base: LameCoefficients,
                      grad_exact: Callable[[np.ndarray], np.ndarray]) -> BodyForce:
    """Load b_i = int sigma(u_exact):e(phi_i) so that the solve returns the Ritz projection of u_exact.

    grad_exact maps (n, 3) points to (n, 3, 3) gradients du_i/dx_j.
    """
    rule = element_rule(grid.spacing)
    points = quadrature_points(grid, rule)
    grad = np.asarray(grad_exact(points.reshape(-1, 3)), dtype=float).reshape(grid.n_elements, rule.n_points, 3, 3)
    strain = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    trace = np.trace(strain, axis1=-2, axis2=-1)
    stress = base.lam * trace[..., None, None] * np.eye(3) + 2.0 * base.mu * strain
    contributions = np.einsum("q,eqij,qaj->eai", rule.weights, stress, rule.gradients)
    load = assemble_vector(vector_dofs(grid.element_nodes()), contributions.reshape(grid.n_elements, 24),
                           3 * grid.n_nodes)
    return BodyForce.from_load_vector(load)


def energy_report(state: LimitState, base: LameCoefficients, eff: EffectiveCoefficients, f: BodyForce,
                  weight: Optional[WeightField] = None, young: Optional[Expression] = None,
                  flexion_terms: Optional[Dict[str, float]] = None) -> Dict:
    """EnergyReport JSON for a solved limit state."""
    terms = flexion_terms if flexion_terms is not None else limit_energy_terms(state, base, eff, weight, young)
    return {
        "energy_total": terms["total"],
        "energy_elastic": terms["elastic"],
        "energy_coupling": terms["coupling"],
        "energy_fiber": terms["fiber"],
        "energy_flexion": terms["flexion"],
        "residual_norm": state.info.get("residual_norm", 0.0),
        "iterations": state.info.get("iterations", 0),
    }


# Flexion regime: v_alpha(x) = sum N2_a(x1, x2) H_h(x3) with Hermite h in
# (bottom value, bottom slope, top value, top slope); global dof of
# component alpha at node n with type t is 3N + 4n + 2 alpha + t.

FLEXION_ORDERS = (2, 2, 4)


@dataclass
class FlexionBasis:
    rule_weights: np.ndarray
    trilinear: np.ndarray
    trilinear_gradients: np.ndarray
    values: np.ndarray
    second: np.ndarray
    corner: np.ndarray
    kind: np.ndarray


def flexion_basis(grid: StructuredGrid) -> FlexionBasis:
    rule = element_rule(grid.spacing, FLEXION_ORDERS)
    n2 = bilinear_values(rule.points[:, :2])
    h = hermite_values(rule.points[:, 2], grid.hz)
    h2 = hermite_second_derivatives(rule.points[:, 2], grid.hz)
    values = (n2[:, :, None] * h[:, None, :]).reshape(rule.n_points, 16)
    second = (n2[:, :, None] * h2[:, None, :]).reshape(rule.n_points, 16)
    a2, hermite = np.divmod(np.arange(16), 4)
    # trilinear corner holding basis b, and whether it is a value (0) or slope (1)
    corner = a2 + 4 * (hermite // 2)
    kind = hermite % 2
    return FlexionBasis(rule.weights, rule.values, rule.gradients, values, second, corner, kind)


def _flexion_dofs(grid: StructuredGrid, basis: FlexionBasis, alpha: int) -> np.ndarray:
    nodes = grid.element_nodes()[:, basis.corner]
    return 3 * grid.n_nodes + 4 * nodes + 2 * alpha + basis.kind[None, :]


def assemble_flexion_system(grid: StructuredGrid, base: LameCoefficients, E_1: float, gamma: float,
                            A: np.ndarray, f: BodyForce, threads: int = 1) -> LimitSystem:
    """Quadratic form of the flexion functional over (u, v1, d3 v1, v2, d3 v2)."""
    if not E_1 > 0:
        raise PreconditionError(f"E_1 must be positive, got {E_1}")
    if not (0.0 < gamma < math.inf):
        raise RegimeError(f"The flexion solver needs 0 < gamma < inf, got {gamma}")
    n = grid.n_nodes
    size = 7 * n
    basis = flexion_basis(grid)
    w = basis.rule_weights
    mass_vv = np.einsum("q,qa,qb->ab", w, basis.values, basis.values)
    bend_vv = np.einsum("q,qa,qb->ab", w, basis.second, basis.second)
    mass_uv = np.einsum("q,qa,qb->ab", w, basis.trilinear, basis.values)
    penalty = 2.0 * math.pi * gamma * np.diag(A)

    stiffness = assemble_elasticity(grid, base.lam, base.mu, threads)
    scalar_mass = assemble_scalar(grid, 1.0, "mass", threads)
    u_block = stiffness + sparse.kron(scalar_mass, sparse.diags(penalty), format="csr")
    blocks = [sparse.bmat([[u_block, None], [None, sparse.csr_matrix((4 * n, 4 * n))]], format="csr")]

    nodes = grid.element_nodes()
    for alpha in (0, 1):
        v_dofs = _flexion_dofs(grid, basis, alpha)
        u_dofs = nodes * 3 + alpha
        vv = penalty[alpha] * mass_vv + 0.25 * math.pi * E_1 * bend_vv
        uv = -penalty[alpha] * mass_uv
        blocks.append(assemble_matrix(v_dofs, v_dofs, lambda s, e, vv=vv: np.broadcast_to(vv, (e - s, 16, 16)),
                                      (size, size), threads))
        coupling = assemble_matrix(u_dofs, v_dofs, lambda s, e, uv=uv: np.broadcast_to(uv, (e - s, 8, 16)),
                                   (size, size), threads)
        blocks.append(coupling)
        blocks.append(coupling.T.tocsr())

    matrix = blocks[0]
    for block in blocks[1:]:
        matrix = matrix + block
    rhs = np.concatenate([f.load_vector(grid), np.zeros(4 * n)])
    bottom = grid.gamma1_nodes()
    fixed = np.concatenate([_fixed_u_dofs(grid), 3 * n + 4 * bottom, 3 * n + 4 * bottom + 2])
    return LimitSystem(matrix=matrix.tocsr(), rhs=rhs, fixed=fixed, n_u=3 * n, has_v3=False)


def solve_flexion_limit(grid: StructuredGrid, base: LameCoefficients, E_1: float, gamma: float, A: np.ndarray,
                        f: BodyForce, frozen_u: Optional[np.ndarray] = None, rtol: float = DEFAULT_RTOL,
                        threads: int = 1) -> Tuple[LimitState, float]:
    """Minimize the flexion functional; v3 = 0 and only the values of v vanish on Gamma_1.

    With frozen_u the displacement is prescribed and only the Hermite
    unknowns are solved for.
    """
    start_time = time.time()
    system = assemble_flexion_system(grid, base, E_1, gamma, A, f, threads)
    n_u = system.n_u
    if frozen_u is None:
        x, info, energy = _solve_system(system, rtol)
    else:
        x = np.zeros(len(system.rhs))
        x[:n_u] = np.asarray(frozen_u, dtype=float).reshape(-1)
        v_dofs = np.setdiff1d(np.arange(n_u, len(system.rhs)), system.fixed)
        block = system.matrix[v_dofs][:, v_dofs].tocsr()
        rhs = -(system.matrix[v_dofs][:, :n_u] @ x[:n_u])
        x[v_dofs], info = pcg(block, rhs, rtol=rtol)
        energy = float(x @ (system.matrix @ x))
    state = LimitState(grid=grid, u=x[:n_u], v3=np.zeros(grid.n_nodes),
                       flexion=x[n_u:].reshape(grid.n_nodes, 4), info=_info_dict(info))
    logger.info(f"Flexion solve completed in {time.time() - start_time:.2f} seconds (energy {energy:.6g})")
    return state, energy


def flexion_energy_terms(state: LimitState, base: LameCoefficients, E_1: float, gamma: float,
                         A: np.ndarray) -> Dict[str, float]:
    """Elastic, coupling and bending parts of the flexion functional by quadrature."""
    grid = state.grid
    basis = flexion_basis(grid)
    w = basis.rule_weights
    nodes = grid.element_nodes()
    flexion = state.flexion if state.flexion is not None else np.zeros((grid.n_nodes, 4))

    u_elements = state.u[nodes]  # (e, 8, 3)
    grad_u = np.einsum("eai,qaj->eqij", u_elements, basis.trilinear_gradients)
    elastic = float(np.einsum("q,eq->", w, strain_energy_density(grad_u, base.lam, base.mu)))
    u_q = np.einsum("eai,qa->eqi", u_elements, basis.trilinear)

    coupling = 0.0
    bending = 0.0
    corner_nodes = nodes[:, basis.corner]
    for alpha in (0, 1):
        coefficients = flexion[corner_nodes, 2 * alpha + basis.kind[None, :]]  # (e, 16)
        v_q = coefficients @ basis.values.T
        v2_q = coefficients @ basis.second.T
        coupling += A[alpha, alpha] * float(np.einsum("q,eq->", w, (v_q - u_q[:, :, alpha]) ** 2))
        bending += float(np.einsum("q,eq->", w, v2_q ** 2))
    coupling += A[2, 2] * float(np.einsum("q,eq->", w, u_q[:, :, 2] ** 2))
    coupling *= 2.0 * math.pi * gamma
    bending *= 0.25 * math.pi * E_1
    return {"elastic": elastic, "coupling": coupling, "fiber": 0.0, "flexion": bending,
            "total": elastic + coupling + bending}
