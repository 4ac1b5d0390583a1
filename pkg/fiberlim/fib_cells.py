"""Exterior cell solutions around one fiber and their energies.

The plane fields w1, w2 solve the Navier system outside the unit disk
with w = 0 on the unit circle and grow like -ln|y| in their own
direction; w_log = -ln|y| is the antiplane (harmonic) field. Energies
of annuli are integrated in polar coordinates with t = ln|y|, where the
integrands are smooth and the leading part is linear in t.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .fib_errors import CellDomainError, FitError, PreconditionError, QuadratureAccuracyError
from .fib_fem import gauss_legendre
from .fib_geometry import FiberLayout
from .fib_material import LameCoefficients, kappa

logger = logging.getLogger(__name__)

FIELD_KINDS = ("w1", "w2", "w_log")
BOUNDARY_TOLERANCE = 1e-12
PANEL_CHUNK = 16
POINTS_PER_PANEL = 4


@dataclass(frozen=True)
class PlanePoint:
    y1: float
    y2: float

    @property
    def norm(self) -> float:
        return math.hypot(self.y1, self.y2)


@dataclass(frozen=True)
class CellField:
    """One of the three closed-form exterior fields.

    printed_form=True selects the historical coefficients whose
    diagonal components carry the opposite sign on the 1/|y|^2 terms and
    whose w2 first component lacks kappa in the 1/|y|^4 term. That form
    violates equilibrium and is kept only for comparison.
    """
    kind: str
    kappa: float = 2.0
    printed_form: bool = False

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise PreconditionError(f"Unknown cell field {self.kind!r}; expected one of {FIELD_KINDS}")

    @classmethod
    def for_material(cls, kind: str, base: LameCoefficients, printed_form: bool = False) -> "CellField":
        return cls(kind=kind, kappa=kappa(base), printed_form=printed_form)

    @property
    def index(self) -> int:
        """Direction m: 1, 2 or 3 (antiplane)."""
        return {"w1": 1, "w2": 2, "w_log": 3}[self.kind]


def _coords(y) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(y, PlanePoint):
        return np.asarray(y.y1, dtype=float), np.asarray(y.y2, dtype=float)
    y = np.asarray(y, dtype=float)
    return y[..., 0], y[..., 1]


def _check_exterior(y1, y2, strict: bool):
    q = y1 * y1 + y2 * y2
    if strict:
        bad = q <= 1.0
    else:
        bad = q < 1.0 - BOUNDARY_TOLERANCE
    if np.any(bad):
        where = "outside the closed unit disk" if strict else "outside the open unit disk"
        raise CellDomainError(f"Cell fields are defined {where}; got |y|^2 = {float(np.min(q))}")


def _coefficients(field: CellField) -> Tuple[float, float, float]:
    """(c_d, c_p1, c_p2) of the first-direction template.

    comp1 = -ln|y| + c_d (d/q - d/q^2), comp2 = c_p1 p/q - c_p2 p/q^2
    with q = |y|^2, d = y1^2 - y2^2, p = y1 y2.
    """
    k = field.kappa
    if not field.printed_form:
        return 0.5 / k, 1.0 / k, 1.0 / k
    if field.kind == "w1":
        return -0.5 / k, 1.0 / k, 1.0 / k
    return -0.5 / k, 1.0 / k, 1.0


def _template(y1, y2, c_d, c_p1, c_p2):
    """Values (..., 2) and gradients (..., 2, 2) of the first-direction template."""
    q = y1 * y1 + y2 * y2
    d = y1 * y1 - y2 * y2
    p = y1 * y2
    q2 = q * q
    q3 = q2 * q

    values = np.stack([
        -0.5 * np.log(q) + c_d * (d / q - d / q2),
        c_p1 * p / q - c_p2 * p / q2,
    ], axis=-1)

    d1_comp1 = -y1 / q + c_d * ((2 * y1 / q - 2 * d * y1 / q2) - (2 * y1 / q2 - 4 * d * y1 / q3))
    d2_comp1 = -y2 / q + c_d * ((-2 * y2 / q - 2 * d * y2 / q2) - (-2 * y2 / q2 - 4 * d * y2 / q3))
    d1_comp2 = c_p1 * (y2 / q - 2 * p * y1 / q2) - c_p2 * (y2 / q2 - 4 * p * y1 / q3)
    d2_comp2 = c_p1 * (y1 / q - 2 * p * y2 / q2) - c_p2 * (y1 / q2 - 4 * p * y2 / q3)
    gradients = np.stack([
        np.stack([d1_comp1, d2_comp1], axis=-1),
        np.stack([d1_comp2, d2_comp2], axis=-1),
    ], axis=-2)
    return values, gradients


def _plane_field(field: CellField, y1, y2):
    c_d, c_p1, c_p2 = _coefficients(field)
    if field.kind == "w1":
        return _template(y1, y2, c_d, c_p1, c_p2)
    # w2(y) = S w1(S y) with S the exchange of axes
    values, gradients = _template(y2, y1, c_d, c_p1, c_p2)
    return values[..., ::-1], gradients[..., ::-1, ::-1]


def eval_w(field: CellField, y) -> np.ndarray:
    """Closed-form value: a 2-vector for w1, w2 and a scalar for w_log.

    Accepts a PlanePoint or an array with last axis (y1, y2).
    """
    y1, y2 = _coords(y)
    _check_exterior(y1, y2, strict=False)
    if field.kind == "w_log":
        return -0.5 * np.log(y1 * y1 + y2 * y2)
    values, _ = _plane_field(field, y1, y2)
    return values


def eval_grad_w(field: CellField, y) -> np.ndarray:
    """Analytic gradient: (..., 2, 2) [component, derivative] or (..., 2) for w_log."""
    y1, y2 = _coords(y)
    _check_exterior(y1, y2, strict=False)
    if field.kind == "w_log":
        q = y1 * y1 + y2 * y2
        return np.stack([-y1 / q, -y2 / q], axis=-1)
    _, gradients = _plane_field(field, y1, y2)
    return gradients


def eval_stress(field: CellField, y, base: LameCoefficients) -> np.ndarray:
    """Plane-strain stress (..., 2, 2); for w_log the antiplane shear mu grad w."""
    y1, y2 = _coords(y)
    _check_exterior(y1, y2, strict=True)
    gradients = eval_grad_w(field, y)
    if field.kind == "w_log":
        return base.mu * gradients
    strain = 0.5 * (gradients + np.swapaxes(gradients, -1, -2))
    trace = strain[..., 0, 0] + strain[..., 1, 1]
    return base.lam * trace[..., None, None] * np.eye(2) + 2.0 * base.mu * strain


def log_flux(R: float, n_theta: int = 64) -> float:
    """Flux of w_log through the circle of radius R, normal pointing to the origin."""
    if R < 1.0:
        raise CellDomainError(f"Flux circle must have R >= 1, got {R}")
    theta, weights = gauss_legendre(n_theta, 0.0, 2.0 * math.pi)
    y = np.column_stack([R * np.cos(theta), R * np.sin(theta)])
    gradients = eval_grad_w(CellField("w_log"), y)
    inward = -y / R
    return math.fsum(weights * R * np.sum(gradients * inward, axis=-1))


def embedded_gradient(m: int, y1, y2, field_kappa: float, printed_form: bool = False) -> np.ndarray:
    """(..., 3, 3) gradient of w^m embedded in 3D (x3 derivatives vanish)."""
    shape = np.shape(y1)
    gradient = np.zeros(shape + (3, 3))
    if m == 3:
        q = y1 * y1 + y2 * y2
        gradient[..., 2, 0] = -y1 / q
        gradient[..., 2, 1] = -y2 / q
    else:
        kind = "w1" if m == 1 else "w2"
        _, plane = _plane_field(CellField(kind, field_kappa, printed_form), y1, y2)
        gradient[..., :2, :2] = plane
    return gradient


def energy_density(grad_m: np.ndarray, grad_l: np.ndarray, base: LameCoefficients) -> np.ndarray:
    """sigma(u^m):e(u^l) from (..., 3, 3) displacement gradients."""
    strain_m = 0.5 * (grad_m + np.swapaxes(grad_m, -1, -2))
    strain_l = 0.5 * (grad_l + np.swapaxes(grad_l, -1, -2))
    trace_m = np.trace(strain_m, axis1=-2, axis2=-1)
    trace_l = np.trace(strain_l, axis1=-2, axis2=-1)
    return base.lam * trace_m * trace_l + 2.0 * base.mu * np.sum(strain_m * strain_l, axis=(-2, -1))


def _check_indices(m: int, l: int):
    if m not in (1, 2, 3) or l not in (1, 2, 3):
        raise PreconditionError(f"Field indices must be in {{1, 2, 3}}, got ({m}, {l})")


def _polar_panels(t_start: float, t_stop: float, n_panels: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Composite Gauss nodes/weights in t, grouped in fixed-size panel chunks."""
    edges = np.linspace(t_start, t_stop, n_panels + 1)
    chunks = []
    for first in range(0, n_panels, PANEL_CHUNK):
        last = min(first + PANEL_CHUNK, n_panels)
        nodes, weights = [], []
        for i in range(first, last):
            t, w = gauss_legendre(POINTS_PER_PANEL, edges[i], edges[i + 1])
            nodes.append(t)
            weights.append(w)
        chunks.append((np.concatenate(nodes), np.concatenate(weights)))
    return chunks


def polar_integral(integrand, t_ranges: Sequence[Tuple[float, float]], n_r: int, n_theta: int,
                   threads: int = 1) -> float:
    """Integrate integrand(R, theta) over annuli given in t = ln R.

    integrand receives broadcastable arrays R (nt, 1) and theta (1, nθ)
    and returns the area density; the Jacobian R^2 dt dtheta is applied
    here. Panel chunks are fixed, so the compensated sum does not
    depend on the worker count.
    """
    theta, theta_weights = gauss_legendre(n_theta, 0.0, 2.0 * math.pi)
    tasks = []
    for t_start, t_stop in t_ranges:
        tasks.extend(_polar_panels(t_start, t_stop, n_r))

    def evaluate(task):
        t, t_weights = task
        R = np.exp(t)[:, None]
        density = integrand(R, theta[None, :])
        return (density * (R * R) * t_weights[:, None] * theta_weights[None, :]).ravel()

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        pieces = list(executor.map(evaluate, tasks))
    return math.fsum(np.concatenate(pieces))


def _checked(compute, n_r: int, n_theta: int, tol: float, label: str) -> float:
    coarse = compute(n_r, n_theta)
    refined = compute(2 * n_r, 2 * n_theta)
    if abs(refined - coarse) > tol * max(abs(refined), 1.0):
        raise QuadratureAccuracyError(
            f"{label}: quadrature changed from {coarse!r} to {refined!r} when doubling (tolerance {tol})",
            coarse, refined)
    return refined


def annulus_energy(m: int, l: int, R: float, base: LameCoefficients, n_r: int = 128, n_theta: int = 64,
                   embedded: bool = False, tol: float = 1e-8, threads: int = 1) -> float:
    """(1/ln R) * integral over 1 < |y| < R of sigma(w^m):e(w^l).

    Index 3 stands for w_log; for m = l = 3 the integrand is |grad w|^2
    unless embedded=True, which gives the 3D energy mu |grad w|^2.
    The value is recomputed with doubled counts and must agree to tol.

    Args:
        m, l: field indices in {1, 2, 3}
        R: outer radius, > 1
        base: Lame coefficients (kappa of the fields follows from them)
        n_r: panels in t = ln r (4 Gauss points each)
        n_theta: Gauss points in theta
        embedded: use mu |grad w|^2 for the (3, 3) pair
        tol: relative agreement required under doubling
        threads: quadrature workers

    Returns:
        The normalized annulus energy
    """
    _check_indices(m, l)
    if not R > 1.0:
        raise PreconditionError(f"Annulus needs R > 1, got {R}")
    field_kappa = kappa(base)
    log_R = math.log(R)
    scale = 1.0 / base.mu if (m == l == 3 and not embedded) else 1.0

    def integrand(radius, theta):
        y1 = radius * np.cos(theta)
        y2 = radius * np.sin(theta)
        grad_m = embedded_gradient(m, y1, y2, field_kappa)
        grad_l = grad_m if l == m else embedded_gradient(l, y1, y2, field_kappa)
        return scale * energy_density(grad_m, grad_l, base)

    def compute(panels, angles):
        return polar_integral(integrand, [(0.0, log_R)], panels, angles, threads) / log_R

    start_time = time.time()
    value = _checked(compute, n_r, n_theta, tol, f"annulus_energy({m},{l},R={R:g})")
    logger.debug(f"annulus_energy({m},{l},R={R:g}) = {value:.10g} in {time.time() - start_time:.3f} seconds")
    return value


def lemma_limit(m: int, l: int, base: LameCoefficients, embedded: bool = False) -> float:
    """Limit of annulus_energy as R -> infinity."""
    _check_indices(m, l)
    if m != l:
        return 0.0
    if m == 3:
        return 2.0 * math.pi * (base.mu if embedded else 1.0)
    k = kappa(base)
    return 2.0 * math.pi * base.mu * (1.0 + k) / k


def fit_log_limit(R_grid: Sequence[float], values: Sequence[float]) -> Tuple[float, float]:
    """Least-squares fit values ~ a + b / ln R; returns (a, b)."""
    R_grid = np.asarray(R_grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(np.unique(R_grid)) < 2 or len(R_grid) != len(values):
        raise FitError(f"Fitting a + b/ln R needs at least two distinct radii, got {R_grid.tolist()}")
    if np.any(R_grid <= 1.0):
        raise FitError("All radii must exceed 1")
    design = np.column_stack([np.ones_like(R_grid), 1.0 / np.log(R_grid)])
    (a, b), *_ = np.linalg.lstsq(design, values, rcond=None)
    return float(a), float(b)


def plateau_radius(s: float, r: float = 0.0) -> float:
    """Radius up to which the truncation stays 1: s/2, or the fiber radius when that is larger."""
    return max(0.5 * s, r)


def truncation_phi(R, s: float, r: float = 0.0):
    """1 on R <= rho, 0 on R >= s, (s^2 - R^2) / (s^2 - rho^2) in between, rho = max(s/2, r).

    With r <= s/2 the ramp is -4/(3 s^2) (R^2 - s^2).
    """
    R = np.asarray(R, dtype=float)
    rho = plateau_radius(s, r)
    ramp = (s * s - R * R) / (s * s - rho * rho)
    result = np.where(R <= rho, 1.0, np.where(R >= s, 0.0, ramp))
    return result if result.ndim else float(result)


def truncation_phi_slope(R, s: float, r: float = 0.0):
    R = np.asarray(R, dtype=float)
    rho = plateau_radius(s, r)
    return np.where((R > rho) & (R < s), -2.0 * R / (s * s - rho * rho), 0.0)


def _scaled_parts(m: int, X1, X2, r: float, field_kappa: float):
    """Value (..., 3) and gradient (..., 3, 3) of e_m - w^m(X/r)/ln r outside the fiber."""
    log_r = math.log(r)
    y1, y2 = X1 / r, X2 / r
    value = np.zeros(np.shape(X1) + (3,))
    value[..., m - 1] = 1.0
    if m == 3:
        value[..., 2] -= -0.5 * np.log(y1 * y1 + y2 * y2) / log_r
    else:
        kind = "w1" if m == 1 else "w2"
        plane, _ = _plane_field(CellField(kind, field_kappa), y1, y2)
        value[..., :2] -= plane / log_r
    gradient = -embedded_gradient(m, y1, y2, field_kappa) / (r * log_r)
    return value, gradient


def corrector_z(x, m: int, layout: FiberLayout, base: LameCoefficients) -> np.ndarray:
    """Truncated corrector phi(R) (e_m - w^m((x - k eps)/r)/ln r) around the nearest fiber.

    Equals e_m on the fiber and vanishes once R >= s. Accepts a 3-vector
    or an (n, 3) array of points.
    """
    if m not in (1, 2, 3):
        raise PreconditionError(f"Corrector index must be in {{1, 2, 3}}, got {m}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    points = np.atleast_2d(x)
    _, X1, X2 = layout.nearest_center(points[:, 0], points[:, 1])
    R = np.hypot(X1, X2)

    z = np.zeros((len(points), 3))
    inside = R <= layout.r
    z[inside, m - 1] = 1.0
    annulus = (~inside) & (R < layout.s)
    if np.any(annulus):
        value, _ = _scaled_parts(m, X1[annulus], X2[annulus], layout.r, kappa(base))
        z[annulus] = truncation_phi(R[annulus], layout.s, layout.r)[:, None] * value
    return z[0] if single else z


def corrector_gradient(m: int, X1, X2, layout: FiberLayout, field_kappa: float) -> np.ndarray:
    """(..., 3, 3) gradient of z^m at planar offsets X from the fiber axis (R > r)."""
    R = np.hypot(X1, X2)
    value, gradient = _scaled_parts(m, X1, X2, layout.r, field_kappa)
    phi = truncation_phi(R, layout.s, layout.r)
    slope = truncation_phi_slope(R, layout.s, layout.r)
    radial = np.stack([X1 / R, X2 / R, np.zeros_like(R)], axis=-1)
    return phi[..., None, None] * gradient + slope[..., None, None] * value[..., :, None] * radial[..., None, :]


def predicted_corrector_energy(m: int, l: int, gamma: float, base: LameCoefficients, volume: float) -> float:
    """Limit of integral sigma(z^m):e(z^l) over Omega of the given volume."""
    _check_indices(m, l)
    if m != l:
        return 0.0
    if m == 3:
        return 2.0 * math.pi * gamma * base.mu * volume
    k = kappa(base)
    return 2.0 * math.pi * gamma * base.mu * (1.0 + k) / k * volume


def corrector_energy_numeric(m: int, l: int, layout: FiberLayout, base: LameCoefficients,
                             n_r: int = 128, n_theta: int = 64, tol: float = 1e-8, threads: int = 1) -> float:
    """integral over Omega of sigma(z^m):e(z^l) by polar quadrature around each fiber.

    z vanishes in gradient inside the fibers and outside the disks of
    radius s, so each fiber contributes the same annulus integral over
    r < R < s (split at the kink R = max(s/2, r)); the total is that value times
    the fiber count and the length L.
    """
    _check_indices(m, l)
    if not layout.r < layout.s:
        raise PreconditionError(f"Truncation radius s={layout.s} must exceed r={layout.r}")
    field_kappa = kappa(base)

    def integrand(radius, theta):
        X1 = radius * np.cos(theta)
        X2 = radius * np.sin(theta)
        grad_m = corrector_gradient(m, X1, X2, layout, field_kappa)
        grad_l = grad_m if l == m else corrector_gradient(l, X1, X2, layout, field_kappa)
        return energy_density(grad_m, grad_l, base)

    rho = plateau_radius(layout.s, layout.r)
    t_ranges = [(math.log(layout.r), math.log(rho)), (math.log(rho), math.log(layout.s))]
    if rho <= layout.r:
        t_ranges = [(math.log(layout.r), math.log(layout.s))]

    def compute(panels, angles):
        return polar_integral(integrand, t_ranges, panels, angles, threads)

    start_time = time.time()
    per_fiber = _checked(compute, n_r, n_theta, tol, f"corrector_energy({m},{l},r={layout.r:g})")
    logger.info(f"Corrector energy ({m},{l}) for r={layout.r:g} computed in {time.time() - start_time:.2f} seconds")
    return per_fiber * layout.n_fibers * layout.L


def gradient_bound_constant(m: int, r: float, s: float, field_kappa: float = 2.0,
                            n_samples: int = 64, n_theta: int = 64) -> float:
    """max over r <= R <= s of R^2 ln^2(r) |d w_eps^m / dx|^2 on a log-spaced sample grid."""
    radii = np.geomspace(r, s, n_samples)[:, None]
    theta = np.linspace(0.0, 2.0 * math.pi, n_theta, endpoint=False)[None, :]
    X1, X2 = radii * np.cos(theta), radii * np.sin(theta)
    # w_eps = w^m(X/r)/ln r
    gradient = embedded_gradient(m, X1 / r, X2 / r, field_kappa) / (r * math.log(r))
    bound = radii ** 2 * math.log(r) ** 2 * np.sum(gradient * gradient, axis=(-2, -1))
    return float(np.max(bound))
