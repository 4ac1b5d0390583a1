"""Scenario configuration and output writers."""
import csv
import json
import logging
import math
import os
import sys
from typing import Dict, Iterable, List, Optional, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .fib_errors import ConfigError, ExpressionError
from .fib_expr import FAMILY_VARIABLES, Expression, parse_vector
from .fib_material import (EffectiveCoefficients, LameCoefficients, RegimeTag, effective_coefficients,
                           regime_from_limits)

logger = logging.getLogger(__name__)

NODAL_COLUMNS = ["x", "y", "z", "u1", "u2", "u3", "v3"]


def _infinity(value):
    # JSON has no infinity literal
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class MaterialConfig(_Section):
    lam: float = Field(default=1.0, alias="lambda", ge=0)
    mu: float = Field(default=1.0, gt=0)

    def lame(self) -> LameCoefficients:
        return LameCoefficients(lam=self.lam, mu=self.mu)


class LimitConfig(_Section):
    gamma: float = Field(default=2.0, ge=0)
    lambda_o: float = 1.0
    mu_o: float = 1.0
    lambda_1: Optional[float] = None
    mu_1: Optional[float] = None
    weight: Optional[str] = None
    young_profile: Optional[str] = None

    @field_validator("gamma", "lambda_o", "mu_o", mode="before")
    @classmethod
    def parse_infinity(cls, value):
        return _infinity(value)

    @field_validator("weight", "young_profile")
    @classmethod
    def check_expression(cls, value):
        if value is not None:
            try:
                Expression(value)
            except ExpressionError as e:
                raise ValueError(str(e))
        return value

    def tag(self) -> RegimeTag:
        return regime_from_limits(self.gamma, self.lambda_o, self.mu_o, self.lambda_1, self.mu_1)


class GeometryConfig(_Section):
    a: float = Field(default=1.0, gt=0)
    b: float = Field(default=1.0, gt=0)
    L: float = Field(default=1.0, gt=0)


class GridConfig(_Section):
    elements: List[int] = Field(default_factory=lambda: [8, 8, 8], min_length=3, max_length=3)

    @field_validator("elements")
    @classmethod
    def check_positive(cls, value):
        if min(value) < 1:
            raise ValueError(f"element counts must be positive, got {value}")
        return value


class LoadConfig(_Section):
    f: List[str] = Field(default_factory=lambda: ["0", "0", "1"], min_length=3, max_length=3)

    @field_validator("f")
    @classmethod
    def check_fields(cls, value):
        try:
            parse_vector(value)
        except ExpressionError as e:
            raise ValueError(str(e))
        return value


class SweepConfig(_Section):
    """eps values of the fine solves; radius and fiber Lame rules in eps and r."""
    epsilons: List[float] = Field(default_factory=lambda: [0.5, 0.354])
    radius: Optional[str] = None
    fiber_lambda: Optional[str] = None
    fiber_mu: Optional[str] = None

    @field_validator("radius", "fiber_lambda", "fiber_mu")
    @classmethod
    def check_family_expression(cls, value):
        if value is not None:
            try:
                Expression(value, FAMILY_VARIABLES)
            except ExpressionError as e:
                raise ValueError(str(e))
        return value


class RecoveryConfig(_Section):
    """Smooth pair (u, v) for the recovery-sequence check."""
    u: List[str] = Field(default_factory=lambda: ["0", "0", "x3^2"], min_length=3, max_length=3)
    v: List[str] = Field(default_factory=lambda: ["0", "0", "x3"], min_length=3, max_length=3)

    @field_validator("u", "v")
    @classmethod
    def check_fields(cls, value):
        try:
            parse_vector(value)
        except ExpressionError as e:
            raise ValueError(str(e))
        return value


class CellConfig(_Section):
    R_grid: List[float] = Field(default_factory=lambda: [1e2, 1e3, 1e4, 1e6])
    kappas: List[float] = Field(default_factory=lambda: [2.0])
    n_r: int = Field(default=128, ge=4)
    n_theta: int = Field(default=64, ge=8)
    tol: float = Field(default=1e-8, gt=0)
    corrector_radii: List[float] = Field(default_factory=lambda: [1e-4, 1e-6, 1e-8])
    corrector_epsilon: float = Field(default=16.0, gt=0)
    corrector_side: float = Field(default=24.0, gt=0)


class FamilyConfig(_Section):
    name: str
    radius: str
    lam: str = Field(alias="lambda")
    mu: str
    eps_samples: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])

    @model_validator(mode="after")
    def check_expressions(self):
        try:
            for text in (self.radius, self.lam, self.mu):
                Expression(text, FAMILY_VARIABLES)
        except ExpressionError as e:
            raise ValueError(str(e))
        return self


class FineConfig(_Section):
    elements: List[int] = Field(default_factory=lambda: [56, 56, 8], min_length=3, max_length=3)
    rtol: float = Field(default=1e-10, gt=0)


class Scenario(_Section):
    name: str = "scenario"
    regime: RegimeTag = RegimeTag.CRITICAL
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    out: str = "out"
    material: MaterialConfig = Field(default_factory=MaterialConfig)
    limit: LimitConfig = Field(default_factory=LimitConfig)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    load: LoadConfig = Field(default_factory=LoadConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    recovery: RecoveryConfig = Field(default_factory=RecoveryConfig)
    cell: CellConfig = Field(default_factory=CellConfig)
    fine: FineConfig = Field(default_factory=FineConfig)
    families: List[FamilyConfig] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_regime(self):
        tag = self.limit.tag()
        if tag != self.regime:
            raise ValueError(f"regime {self.regime.value} is inconsistent with the limit constants (they give {tag.value})")
        return self

    def base(self) -> LameCoefficients:
        return self.material.lame()

    def effective(self) -> EffectiveCoefficients:
        limit = self.limit
        return effective_coefficients(
            self.base(),
            limit.gamma,
            limit.lambda_o,
            limit.mu_o,
            limit.lambda_1,
            limit.mu_1,
        )


def _read_document(path: str) -> Dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    if path.endswith(".json"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Malformed JSON in {path}: {e}")
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as toml_error:
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            raise ConfigError(f"Malformed TOML in {path}: {toml_error}")


def load_scenario(path: str, overrides: Optional[Dict] = None) -> Scenario:
    """Read a TOML (or JSON) scenario and validate it.

    Args:
        path: config file
        overrides: top-level keys replacing file values (command-line flags)

    Returns:
        Validated Scenario
    """
    document = _read_document(path)
    if overrides:
        document.update({key: value for key, value in overrides.items() if value is not None})
    try:
        scenario = Scenario.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"Invalid scenario {path}: {e}")
    logger.info(f"Loaded scenario {scenario.name!r} ({scenario.regime.value}) from {path}")
    return scenario


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return value
    return value


def write_json(path: str, data: Dict):
    """UTF-8 JSON with sorted keys, two-space indent and a trailing newline."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(_jsonable(data), sort_keys=True, indent=2))
        f.write("\n")


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return value


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]):
    """RFC 4180 CSV (CRLF line ends); floats written with repr."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])


def write_nodal_table(path: str, table: np.ndarray):
    """Rows x, y, z, u1, u2, u3, v3."""
    write_csv(path, NODAL_COLUMNS, np.asarray(table, dtype=float).tolist())


def vector_function(texts: Sequence[str]):
    """Closed-form 3-field from expressions, mapping (n, 3) points to (n, 3)."""
    components = parse_vector(texts)

    def function(points):
        points = np.asarray(points, dtype=float)
        return np.stack([c.at_points(points) for c in components], axis=-1)

    return function
