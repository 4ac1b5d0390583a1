"""Constants of the homogenized laws and regime classification.

Everything here is a pure function of immutable inputs. The scaling
families are classified by extrapolating the defining sequences

    gamma   = -1 / (eps^2 ln r)
    lambda_o = lambda_eps r^2 / eps^2,  mu_o = mu_eps r^2 / eps^2
    lambda_1 = lambda_eps r^4 / eps^2,  mu_1 = mu_eps r^4 / eps^2

over a decreasing list of eps samples.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fib_errors import ClassificationError, MaterialError, PreconditionError, RegimeError
from .fib_expr import FAMILY_VARIABLES, Expression

# Limit extrapolation thresholds
FINITE_TOLERANCE = 1e-6
INFINITE_THRESHOLD = 1e6


class RegimeTag(str, Enum):
    CRITICAL = "Critical"
    SOFT = "Soft"
    STIFF = "StiffGammaInfinite"
    FLEXION = "Flexion"
    GAMMA_ZERO = "GammaZeroConjectural"
    UNSUPPORTED = "Unsupported"


@dataclass(frozen=True)
class LameCoefficients:
    lam: float
    mu: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and math.isfinite(self.mu)):
            raise MaterialError(f"Lame coefficients must be finite, got lambda={self.lam}, mu={self.mu}")
        if self.mu <= 0:
            raise MaterialError(f"mu must be positive, got {self.mu}")
        if self.lam < 0:
            raise MaterialError(f"lambda must be non-negative, got {self.lam}")

    @property
    def kappa(self) -> float:
        return kappa(self)

    def to_dict(self) -> Dict:
        return {"lambda": self.lam, "mu": self.mu}


@dataclass(frozen=True)
class TransverseCoefficients:
    gamma_star: float
    lambda_o_star: float
    mu_o_star: float
    E_o_star: float

    def to_dict(self) -> Dict:
        return {
            "gamma_star": self.gamma_star,
            "lambda_o_star": self.lambda_o_star,
            "mu_o_star": self.mu_o_star,
            "E_o_star": self.E_o_star,
        }


@dataclass
class EffectiveCoefficients:
    gamma: float
    kappa: float
    A: np.ndarray
    E_o: float
    E_1: Optional[float] = None
    gamma_star: Optional[float] = None
    lambda_o_star: Optional[float] = None
    mu_o_star: Optional[float] = None
    E_o_star: Optional[float] = None

    @property
    def A11(self) -> float:
        return float(self.A[0, 0])

    @property
    def A33(self) -> float:
        return float(self.A[2, 2])

    def to_dict(self) -> Dict:
        return {
            "gamma": _json_scalar(self.gamma),
            "kappa": self.kappa,
            "A11": self.A11,
            "A33": self.A33,
            "E_o": _json_scalar(self.E_o),
            "E_1": self.E_1,
            "gamma_star": self.gamma_star,
            "E_o_star": self.E_o_star,
        }


@dataclass
class ScalingFamily:
    """Closed-form rules eps -> r_eps and eps -> (lambda_eps, mu_eps)."""
    radius_rule: Callable[[float], float]
    lame_rule: Callable[[float], Tuple[float, float]]
    name: str = "family"

    @classmethod
    def from_expressions(cls, radius: str, lam: str, mu: str, name: str = "family") -> "ScalingFamily":
        """Build a family from expression strings in the variables eps and r."""
        radius_expr = Expression(radius, FAMILY_VARIABLES)
        lam_expr = Expression(lam, FAMILY_VARIABLES)
        mu_expr = Expression(mu, FAMILY_VARIABLES)

        def radius_rule(eps: float) -> float:
            return float(radius_expr(eps=eps, r=0.0))

        def lame_rule(eps: float) -> Tuple[float, float]:
            r = radius_rule(eps)
            return float(lam_expr(eps=eps, r=r)), float(mu_expr(eps=eps, r=r))

        return cls(radius_rule=radius_rule, lame_rule=lame_rule, name=name)


@dataclass
class Regime:
    tag: RegimeTag
    gamma: float
    lambda_o: float
    mu_o: float
    lambda_1: float
    mu_1: float
    diagnostics: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "tag": self.tag.value,
            "gamma": _json_scalar(self.gamma),
            "lambda_o": _json_scalar(self.lambda_o),
            "mu_o": _json_scalar(self.mu_o),
            "lambda_1": _json_scalar(self.lambda_1),
            "mu_1": _json_scalar(self.mu_1),
            "diagnostics": self.diagnostics,
        }


def _json_scalar(value: Optional[float]):
    # JSON has no infinity
    if value is not None and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def kappa(base: LameCoefficients) -> float:
    """Plane-strain constant (lambda + 3 mu) / (lambda + mu), in (1, 3]."""
    return (base.lam + 3.0 * base.mu) / (base.lam + base.mu)


def lame_from_kappa(kappa_value: float, mu: float = 1.0) -> LameCoefficients:
    """Inverse of kappa for a given mu: lambda = mu (3 - kappa) / (kappa - 1)."""
    if not 1.0 < kappa_value <= 3.0:
        raise MaterialError(f"kappa must lie in (1, 3], got {kappa_value}")
    return LameCoefficients(lam=mu * (3.0 - kappa_value) / (kappa_value - 1.0), mu=mu)


def coupling_matrix(base: LameCoefficients) -> np.ndarray:
    """Diagonal matrix diag(mu(1+k)/k, mu(1+k)/k, mu) weighting v - u."""
    k = kappa(base)
    a = base.mu * (1.0 + k) / k
    return np.diag([a, a, base.mu])


def young_effective(lambda_o: float, mu_o: float) -> float:
    """Young modulus mu(3 lambda + 2 mu) / (lambda + mu) of the limit fiber phase."""
    if not mu_o > 0:
        raise MaterialError(f"mu_o must be positive, got {mu_o}")
    if lambda_o < 0:
        raise MaterialError(f"lambda_o must be non-negative, got {lambda_o}")
    return mu_o * (3.0 * lambda_o + 2.0 * mu_o) / (lambda_o + mu_o)


def flexion_young(lambda_1: float, mu_1: float) -> float:
    return young_effective(lambda_1, mu_1)


def _check_radius(r: float):
    if not 0.0 < r < 1.0:
        raise MaterialError(f"fiber radius must satisfy 0 < r < 1, got {r}")


def gamma_of(eps: float, r: float) -> float:
    """Capacity ratio -1 / (eps^2 ln r)."""
    _check_radius(r)
    if eps <= 0:
        raise MaterialError(f"eps must be positive, got {eps}")
    return -1.0 / (eps * eps * math.log(r))


def transverse_coefficients(eps: float, r: float, lame_eps: LameCoefficients) -> TransverseCoefficients:
    """Per-eps coefficients of the transverse (torus) arrangement."""
    _check_radius(r)
    if eps <= 0:
        raise MaterialError(f"eps must be positive, got {eps}")
    gamma_star = -1.0 / (eps * math.log(r))
    lambda_o_star = lame_eps.lam * r * r / eps
    mu_o_star = lame_eps.mu * r * r / eps
    return TransverseCoefficients(
        gamma_star=gamma_star,
        lambda_o_star=lambda_o_star,
        mu_o_star=mu_o_star,
        E_o_star=young_effective(lambda_o_star, mu_o_star),
    )


def fiber_lame_for(tag: RegimeTag, eps: float, r: float, targets: Tuple[float, float]) -> LameCoefficients:
    """Fiber Lame coefficients that realize the requested limit constants.

    Args:
        tag: Critical (targets are lambda_o, mu_o) or Flexion (lambda_1, mu_1)
        eps: cell size
        r: fiber radius, below eps / 2
        targets: the limit pair to reproduce

    Returns:
        LameCoefficients of the fiber material at this eps
    """
    if not 0.0 < r < eps / 2.0:
        raise MaterialError(f"fiber radius must satisfy 0 < r < eps/2, got r={r}, eps={eps}")
    lam_target, mu_target = targets
    if tag == RegimeTag.CRITICAL:
        scale = eps * eps / (r * r)
    elif tag == RegimeTag.FLEXION:
        scale = eps * eps / r ** 4
    else:
        raise RegimeError(f"No inverse scaling for regime {RegimeTag(tag).value}")
    return LameCoefficients(lam=lam_target * scale, mu=mu_target * scale)


def regime_from_limits(gamma: float, lambda_o: float, mu_o: float,
                       lambda_1: Optional[float] = None, mu_1: Optional[float] = None) -> RegimeTag:
    """Tag a set of limit constants. Limits are floats; inf marks divergence."""
    if gamma == 0:
        return RegimeTag.GAMMA_ZERO
    if math.isfinite(lambda_o) and math.isfinite(mu_o):
        if mu_o > 0:
            return RegimeTag.CRITICAL if math.isfinite(gamma) else RegimeTag.STIFF
        if lambda_o == 0:
            return RegimeTag.SOFT if math.isfinite(gamma) else RegimeTag.STIFF
        # lambda_o > 0 with mu_o = 0 breaks mu_eps >= c
        return RegimeTag.UNSUPPORTED
    if math.isinf(lambda_o) and math.isinf(mu_o) and lambda_1 is not None and mu_1 is not None:
        if math.isfinite(lambda_1) and math.isfinite(mu_1) and mu_1 > 0 and lambda_1 >= 0:
            return RegimeTag.FLEXION
    return RegimeTag.UNSUPPORTED


def effective_coefficients(base: LameCoefficients, gamma: float, lambda_o: float, mu_o: float,
                           lambda_1: Optional[float] = None, mu_1: Optional[float] = None,
                           transverse: Optional[TransverseCoefficients] = None) -> EffectiveCoefficients:
    """Assemble the full coefficient set of the homogenized law."""
    if gamma < 0:
        raise MaterialError(f"gamma must be non-negative, got {gamma}")
    if math.isfinite(mu_o) and mu_o > 0:
        E_o = young_effective(lambda_o, mu_o)
    elif mu_o == 0 and lambda_o == 0:
        # soft fibers carry no axial stiffness in the limit
        E_o = 0.0
    elif math.isinf(mu_o):
        E_o = math.inf
    else:
        raise MaterialError(f"Unsupported limit pair lambda_o={lambda_o}, mu_o={mu_o}")
    E_1 = flexion_young(lambda_1, mu_1) if lambda_1 is not None and mu_1 is not None else None
    coefficients = EffectiveCoefficients(
        gamma=gamma,
        kappa=kappa(base),
        A=coupling_matrix(base),
        E_o=E_o,
        E_1=E_1,
    )
    if transverse is not None:
        coefficients.gamma_star = transverse.gamma_star
        coefficients.lambda_o_star = transverse.lambda_o_star
        coefficients.mu_o_star = transverse.mu_o_star
        coefficients.E_o_star = transverse.E_o_star
    return coefficients


@dataclass
class Extrapolation:
    limit: float
    status: str  # "finite", "zero" or "infinite"
    extrapolants: List[float]

    @property
    def value(self) -> float:
        if self.status == "infinite":
            return math.inf
        if self.status == "zero":
            return 0.0
        return self.limit


def extrapolate_limit(eps: Sequence[float], values: Sequence[float]) -> Extrapolation:
    """Extrapolate value(eps) -> a + b eps to eps = 0.

    The fit uses the two smallest samples. Successive pairwise
    extrapolants must move monotonically (differences below the finite
    tolerance are ignored), otherwise the family is inconsistent.
    """
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    extrapolants = []
    for i in range(len(eps) - 1):
        e1, e2 = eps[i + 1], eps[i]
        v1, v2 = values[i + 1], values[i]
        slope = (v2 - v1) / (e2 - e1)
        extrapolants.append(float(v1 - slope * e1))
    limit = extrapolants[-1]
    smallest_value = float(values[-1])

    if abs(smallest_value) >= INFINITE_THRESHOLD or abs(limit) >= INFINITE_THRESHOLD or not math.isfinite(limit):
        return Extrapolation(limit=limit, status="infinite", extrapolants=extrapolants)

    scale = max(1.0, float(np.max(np.abs(values))))
    steps = np.diff(extrapolants)
    significant = steps[np.abs(steps) > FINITE_TOLERANCE * scale]
    if len(significant) and not (np.all(significant > 0) or np.all(significant < 0)):
        raise ClassificationError(
            "Non-monotone extrapolants; family is inconsistent",
            diagnostics={"eps": eps.tolist(), "values": values.tolist(), "extrapolants": extrapolants},
        )
    if abs(limit) <= FINITE_TOLERANCE * scale:
        return Extrapolation(limit=limit, status="zero", extrapolants=extrapolants)
    return Extrapolation(limit=limit, status="finite", extrapolants=extrapolants)


def classify_regime(family: ScalingFamily, eps_samples: Sequence[float]) -> Regime:
    """Classify a scaling family by extrapolating its limit constants.

    Args:
        family: radius and Lame rules
        eps_samples: strictly decreasing eps values inside the family's validity

    Returns:
        Regime with the tag and the extrapolated limits (inf when divergent)
    """
    eps_samples = [float(e) for e in eps_samples]
    if len(eps_samples) < 2:
        raise PreconditionError("classify_regime needs at least two eps samples")
    if any(b >= a for a, b in zip(eps_samples, eps_samples[1:])):
        raise PreconditionError(f"eps samples must be strictly decreasing, got {eps_samples}")

    sequences = {"gamma": [], "lambda_o": [], "mu_o": [], "lambda_1": [], "mu_1": []}
    for eps in eps_samples:
        r = family.radius_rule(eps)
        lam, mu = family.lame_rule(eps)
        if not (math.isfinite(r) and 0.0 < r < eps / 2.0):
            raise ClassificationError(
                f"Radius r={r} at eps={eps} is outside 0 < r < eps/2",
                diagnostics={"family": family.name, "eps": eps, "r": r},
            )
        if not (math.isfinite(lam) and math.isfinite(mu)) or mu <= 0 or lam < 0:
            raise ClassificationError(
                f"Invalid fiber Lame pair ({lam}, {mu}) at eps={eps}",
                diagnostics={"family": family.name, "eps": eps, "lambda": lam, "mu": mu},
            )
        eps2 = eps * eps
        sequences["gamma"].append(-1.0 / (eps2 * math.log(r)))
        sequences["lambda_o"].append(lam * r * r / eps2)
        sequences["mu_o"].append(mu * r * r / eps2)
        sequences["lambda_1"].append(lam * r ** 4 / eps2)
        sequences["mu_1"].append(mu * r ** 4 / eps2)

    limits = {}
    diagnostics = {"family": family.name, "eps": eps_samples}
    for name, values in sequences.items():
        try:
            result = extrapolate_limit(eps_samples, values)
        except ClassificationError as error:
            error.diagnostics.update({"family": family.name, "quantity": name})
            raise
        limits[name] = result.value
        diagnostics[name] = {"status": result.status, "extrapolants": result.extrapolants}

    tag = regime_from_limits(limits["gamma"], limits["lambda_o"], limits["mu_o"],
                             limits["lambda_1"], limits["mu_1"])
    return Regime(
        tag=tag,
        gamma=limits["gamma"],
        lambda_o=limits["lambda_o"],
        mu_o=limits["mu_o"],
        lambda_1=limits["lambda_1"],
        mu_1=limits["mu_1"],
        diagnostics=diagnostics,
    )
