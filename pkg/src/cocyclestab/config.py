"""Run configuration: one JSON document per run, validated before any computation."""

from __future__ import annotations

import json
import os
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import zoo
from .cocycle import cocycle_from_dict
from .errors import ConfigError
from .experiments import ExperimentConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExperimentSection(_Strict):
    horizon: int = Field(2000, ge=1)
    space_horizon: int = Field(100, ge=1)
    block_length: int | None = Field(None, ge=1)
    n_blocks: int = Field(4, ge=1)
    j_index: int = Field(1, ge=1)
    y_index: int = Field(2, ge=2)
    census_lengths: list[int] = [1, 2, 4, 8, 16, 32, 64]
    include_zero: bool = True
    n_samples: int = Field(10_000, ge=100)


class Thresholds(_Strict):
    chi: float = Field(0.1, gt=0, lt=1)
    tau: float | None = Field(None, gt=0)
    kappa: float = Field(0.001, gt=0)
    delta: float = Field(0.1, gt=0)
    K_threshold: float = Field(10.0, gt=1)


class RunSection(_Strict):
    n_trials: int = Field(200, ge=30)
    epsilon_list: list[float] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
    seed: int = Field(0, ge=0)

    @field_validator("epsilon_list")
    @classmethod
    def _decreasing(cls, v):
        if not v:
            raise ValueError("must not be empty")
        if any(not 0 < e < 1 for e in v):
            raise ValueError("every value must lie in (0, 1)")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("values must be strictly decreasing")
        return v


class RunConfig(_Strict):
    cocycle: dict | None = None
    experiment: ExperimentSection = ExperimentSection()
    thresholds: Thresholds = Thresholds()
    run: RunSection = RunSection()
    workers: int | None = Field(None, ge=1)

    @field_validator("cocycle")
    @classmethod
    def _cocycle(cls, v):
        if v is None:
            return v
        if set(v) == {"zoo"}:
            name = v["zoo"]
            if name not in zoo.ZOO:
                raise ValueError(f"unknown zoo cocycle {name!r}; choose from {sorted(zoo.ZOO)}")
            v = zoo.ZOO[name]()
        try:
            cocycle_from_dict(v)
        except (ConfigError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(str(exc)) from exc
        return v

    @model_validator(mode="after")
    def _indices(self):
        if self.cocycle is not None:
            d = int(self.cocycle["d"])
            if self.experiment.j_index >= d:
                raise ValueError(f"experiment.j_index must be below d = {d}")
        return self

    @property
    def n_workers(self) -> int:
        return self.workers or os.cpu_count() or 1

    def experiment_config(self) -> ExperimentConfig:
        if self.cocycle is None:
            raise ConfigError("cocycle: required for this subcommand")
        e, t, r = self.experiment, self.thresholds, self.run
        return ExperimentConfig(
            cocycle=self.cocycle, epsilon_list=tuple(r.epsilon_list), n_trials=r.n_trials, seed=r.seed,
            horizon=e.horizon, space_horizon=e.space_horizon, block_length=e.block_length,
            n_blocks=e.n_blocks, j_index=e.j_index, y_index=e.y_index, chi=t.chi, tau=t.tau,
            kappa=t.kappa, delta=t.delta, K_threshold=t.K_threshold,
            census_lengths=tuple(e.census_lengths), include_zero=e.include_zero, workers=self.n_workers)


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"field {loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and validate a JSON config; errors carry a line or field location."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: line 1: top level must be a JSON object")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_format_validation(exc)}") from exc


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read config ({exc.strerror})") from exc
    return parse_config(text, str(p))
