"""Experiment configuration: TOML (or JSON) files validated with pydantic.

Grammar (TOML)::

    experiment = "threshold-table"   # optional; the CLI subcommand decides

    [system]
    degrees   = [{3 = 1.0}]          # one coefficient map per user class
    loads     = [0.9]                # G_k, one per class
    success   = [{kind = "slotted-aloha"}]   # one per receiver class
    routing   = [[1.0]]              # K x J
    partition = [1.0]                # F_j

    [coupling]
    L = 40
    w = [1, 2, 3, 4]
    mode = "punctured"               # or "circular"

    [numeric]
    tol = 1e-8
    max_iter = 100000
    step = 1e-4
    search = "scan"                  # scan | refine | bisect

    [table]      degrees = [3, 4, 5, 6]
    [potential]  loads = [], p_points = 201, samples = 8
    [region]     policy = "complete-sharing", grid_step = 0.01, G_max = 2.0
    [bounds]     envelopes = [[[1, 1], 2]]
    [simulate]   T = 10000, rounds = 20, seed = 0
    [output]     dir = ".", format = "csv"

Unknown keys are errors.  ``--set section.key=value`` overrides take a TOML
value (``--set coupling.w=[2]``); bare words fall back to strings.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

EXPERIMENTS = ("threshold-table", "potential-report", "region-2d", "bounds-check", "simulate", "evolve")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemSection(_Section):
    degrees: list[dict[int, float]] = Field(default_factory=lambda: [{3: 1.0}])
    loads: list[float] | None = None
    success: list[dict[str, Any]] = Field(default_factory=lambda: [{"kind": "slotted-aloha"}])
    routing: list[list[float]] | None = None
    partition: list[float] | None = None

    @field_validator("degrees")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("at least one user class is required")
        return v

    @field_validator("loads")
    @classmethod
    def _loads(cls, v):
        if v is not None and not v:
            raise ValueError("load list is empty")
        if v is not None and any(g < 0 for g in v):
            raise ValueError("loads must be non-negative")
        return v


class CouplingSection(_Section):
    L: int = Field(40, ge=1)
    w: list[int] = Field(default_factory=lambda: [1])
    mode: Literal["punctured", "circular"] = "punctured"

    @field_validator("w", mode="before")
    @classmethod
    def _listify(cls, v):
        return [v] if isinstance(v, int) else v

    @model_validator(mode="after")
    def _windows_fit(self):
        bad = [w for w in self.w if not 1 <= w <= self.L]
        if not self.w or bad:
            raise ValueError(f"windows must satisfy 1 <= w <= L = {self.L}, got {self.w}")
        return self


class NumericSection(_Section):
    tol: float = Field(1e-8, gt=0)
    max_iter: int | None = Field(None, ge=1)
    step: float = Field(1e-4, gt=0)
    search: Literal["scan", "refine", "bisect"] = "scan"
    G_lo: float = Field(0.0, ge=0)
    G_hi: float | None = None


class TableSection(_Section):
    degrees: list[int] = Field(default_factory=lambda: [3, 4, 5, 6])


class PotentialSection(_Section):
    loads: list[float] = Field(default_factory=list)
    p_points: int = Field(201, ge=2)
    samples: int = Field(8, ge=1)


class RegionSection(_Section):
    policy: Literal["complete-sharing", "reservation"] = "complete-sharing"
    grid_step: float = Field(0.01, gt=0)
    G_max: float = Field(2.0, gt=0)
    search: Literal["scan", "bisect"] = "scan"


class BoundsSection(_Section):
    envelopes: list[tuple[list[int], int]] = Field(default_factory=list)


class SimulateSection(_Section):
    T: int = Field(10_000, ge=1)
    rounds: int = Field(20, ge=1)
    seed: int = 0


class OutputSection(_Section):
    dir: str = "."
    format: Literal["csv", "json"] = "csv"


class ExperimentConfig(_Section):
    experiment: Literal[EXPERIMENTS] | None = None  # type: ignore[valid-type]
    system: SystemSection = Field(default_factory=SystemSection)
    coupling: CouplingSection = Field(default_factory=CouplingSection)
    numeric: NumericSection = Field(default_factory=NumericSection)
    table: TableSection = Field(default_factory=TableSection)
    potential: PotentialSection = Field(default_factory=PotentialSection)
    region: RegionSection = Field(default_factory=RegionSection)
    bounds: BoundsSection = Field(default_factory=BoundsSection)
    simulate: SimulateSection = Field(default_factory=SimulateSection)
    output: OutputSection = Field(default_factory=OutputSection)

    def resolved(self) -> dict:
        return json.loads(self.model_dump_json())


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} walks into a non-table value")
        node[parts[-1]] = _parse_value(value.strip())
    return raw


def read_raw(path: str | Path | None) -> dict:
    if path is None:
        return {}
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path=None, overrides=(), experiment: str | None = None) -> ExperimentConfig:
    """Read, override and validate; raises :class:`ConfigError` with field paths on failure."""
    raw = apply_overrides(read_raw(path), overrides)
    if experiment is not None:
        if raw.get("experiment") not in (None, experiment):
            raise ConfigError(f"config declares experiment {raw['experiment']!r}, command runs {experiment!r}")
        raw["experiment"] = experiment
    if raw.get("experiment") == "threshold-table":
        # tables default to the four window columns
        raw.setdefault("coupling", {}).setdefault("w", [1, 2, 3, 4])
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        lines = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines)) from exc
