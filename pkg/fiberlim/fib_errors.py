"""Exception hierarchy shared by the library and the command line.

Every error carries the process exit code the CLI reports for it:
2 for configuration problems, 3 for numerical failures and 4 for
regime refusals. A FiberLimError outside these branches exits with 1.
"""
from typing import Dict, List, Optional


class FiberLimError(Exception):
    # fallback for errors not raised through a subclass
    exit_code = 1


class ConfigError(FiberLimError):
    """Malformed or inconsistent scenario input."""
    exit_code = 2


class PreconditionError(ConfigError):
    """A documented precondition of an operation does not hold."""


class MaterialError(ConfigError, ValueError):
    """Invalid material constants (mu <= 0, lambda < 0, r >= 1, ...)."""


class CellDomainError(ConfigError, ValueError):
    """Cell field evaluated inside the unit disk."""


class ExpressionError(ConfigError):
    """Expression text that the grammar rejects."""


class NumericalError(FiberLimError):
    exit_code = 3


class QuadratureAccuracyError(NumericalError):
    def __init__(self, message: str, coarse: float, refined: float):
        super().__init__(message)
        self.coarse = coarse
        self.refined = refined


class SolverConvergenceError(NumericalError):
    def __init__(self, message: str, residual_history: Optional[List[float]] = None):
        super().__init__(message)
        self.residual_history = residual_history or []


class ResolutionError(NumericalError):
    """Fiber radius spanned by too few grid elements."""


class EmptyLayoutError(NumericalError):
    """No periodic cell fits inside the cross-section."""


class FitError(NumericalError):
    """Too few distinct samples for a least-squares limit fit."""


class ClassificationError(NumericalError):
    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RegimeError(FiberLimError):
    """Requested solver does not apply to the scenario's regime."""
    exit_code = 4


class ConjecturalRegimeError(RegimeError):
    """gamma = 0 limit requested without explicit opt-in."""
