"""Experiment configuration (JSON), validated before anything runs.

Unknown keys are rejected at every level. :func:`load_config` returns a fully
checked :class:`ExperimentConfig`; any problem surfaces as
:class:`ConfigError` so the CLI can exit without touching the output
directory.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ParameterError
from .increments import Guards
from .models import ProcessSpec
from .qvar import ConvergenceRule
from .simulation import QuadratureRule, QuadratureSpec


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProcessConfig(_Strict):
    kind: Literal["tri", "nth", "fbm"]
    H: float
    K: Optional[float] = None
    order: Optional[int] = None

    @model_validator(mode="after")
    def _check(self):
        self.to_spec()
        return self

    def to_spec(self) -> ProcessSpec:
        if self.kind == "tri":
            return ProcessSpec.tri(self.H, self.K)
        if self.kind == "fbm":
            if self.order not in (None, 1):
                raise ParameterError("kind 'fbm' implies order 1")
            if self.K is not None:
                raise ParameterError("K is only meaningful for tri-fBm")
            return ProcessSpec.fbm(self.H)
        if self.K is not None:
            raise ParameterError("K is only meaningful for tri-fBm")
        return ProcessSpec.nth(self.H, self.order)


class LevelRange(_Strict):
    min: int = Field(0, ge=0)
    max: int = Field(10, ge=0)

    @model_validator(mode="after")
    def _order(self):
        if self.min > self.max:
            raise ValueError(f"levels.min={self.min} exceeds levels.max={self.max}")
        return self

    def values(self):
        return list(range(self.min, self.max + 1))


class GuardConfig(_Strict):
    mean_level: int = Field(22, ge=0)
    variance_level: int = Field(13, ge=0)
    double_sum: int = Field(20, ge=0)
    matrix_level: int = Field(12, ge=0)
    simulation_level: int = Field(11, ge=0)

    def to_guards(self):
        return Guards(**self.model_dump())


class CovTableConfig(_Strict):
    s: List[float] = Field(default_factory=lambda: [0.25 * i for i in range(9)])
    t: List[float] = Field(default_factory=lambda: [0.25 * i for i in range(9)])

    @model_validator(mode="after")
    def _nonneg(self):
        if any(x < 0 for x in self.s + self.t):
            raise ValueError("cov_table times must be nonnegative")
        return self


class BoundCell(_Strict):
    m: int = Field(ge=0)
    n: int = Field(ge=0)
    j: int = Field(ge=1)
    k: int = Field(ge=1)

    @model_validator(mode="after")
    def _range(self):
        if self.j > 1 << self.m or self.k > 1 << self.n:
            raise ValueError(f"cell (j={self.j}, k={self.k}) outside the 2^m x 2^n grid")
        return self


class BoundsConfig(_Strict):
    """Grid for the bound battery; ``cell`` switches to a single-cell report."""

    H: List[float] = Field(default_factory=lambda: [0.2, 0.35, 0.5, 0.65, 0.8])
    K: List[float] = Field(default_factory=lambda: [0.2, 0.35, 0.5, 0.65, 0.8])
    m: List[int] = Field(default_factory=lambda: list(range(1, 9)))
    n: List[int] = Field(default_factory=lambda: list(range(1, 9)))
    rel_tol: float = Field(1e-12, ge=0)
    cell: Optional[BoundCell] = None

    @model_validator(mode="after")
    def _ranges(self):
        for h in self.H:
            for k in self.K:
                ProcessSpec.tri(h, k)
        if any(x < 0 for x in self.m + self.n):
            raise ValueError("bounds levels must be nonnegative")
        return self


class AmnConfig(_Strict):
    max_level: int = Field(10, ge=0)
    scheme: Literal["unit", "self_similar"] = "unit"
    row: int = Field(8, ge=0)


class QuadratureConfig(_Strict):
    node_count: int = 512
    s_max: Optional[float] = None
    rule: QuadratureRule = QuadratureRule.MIDPOINT_LOG

    def to_spec(self):
        return QuadratureSpec(node_count=self.node_count, s_max=self.s_max, rule=self.rule)

    @model_validator(mode="after")
    def _check(self):
        self.to_spec()
        return self


class SimulationConfig(_Strict):
    level: int = Field(8, ge=0)
    generator: Literal["cholesky", "lei_nualart"] = "cholesky"
    quadrature: QuadratureConfig = Field(default_factory=QuadratureConfig)


class AsymptoticsConfig(_Strict):
    t: List[float] = Field(default_factory=lambda: [10.0, 100.0, 1000.0, 10000.0])
    dps: int = Field(60, ge=20)

    @model_validator(mode="after")
    def _range(self):
        if any(not 1 < x <= 1e4 for x in self.t):
            raise ValueError("asymptotics t values must lie in (1, 1e4]")
        return self


class ClassificationConfig(_Strict):
    factor: float = Field(1.2, gt=1)
    band: List[float] = Field(default_factory=lambda: [0.95, 1.05], min_length=2, max_length=2)
    window: int = Field(3, ge=1)

    def to_rule(self):
        return ConvergenceRule(factor=self.factor, band=tuple(self.band), window=self.window)


class ExperimentConfig(_Strict):
    process: ProcessConfig
    horizon: float = Field(1.0, gt=0)
    levels: LevelRange = Field(default_factory=LevelRange)
    alphas: List[float] = Field(default_factory=lambda: [1.0])
    num_paths: int = Field(0, ge=0)
    seed: int = Field(0, ge=0, lt=2**64)
    guards: GuardConfig = Field(default_factory=GuardConfig)
    output_dir: str = "qvarlab-out"
    format: Literal["csv", "json"] = "csv"
    classification: ClassificationConfig = Field(default_factory=ClassificationConfig)
    cov_table: CovTableConfig = Field(default_factory=CovTableConfig)
    bounds: BoundsConfig = Field(default_factory=BoundsConfig)
    amn: AmnConfig = Field(default_factory=AmnConfig)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    asymptotics: AsymptoticsConfig = Field(default_factory=AsymptoticsConfig)

    @property
    def spec(self) -> ProcessSpec:
        return self.process.to_spec()


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read and validate a JSON config; ``overrides`` replace top-level keys."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def json_schema():
    return ExperimentConfig.model_json_schema()
