"""Declarative Monte Carlo scenarios and their TOML documents.

A document has an optional ``[defaults]`` table and one or more
``[[scenario]]`` tables. Any scenario key set to an array among ``n``,
``dependence`` and ``tau2`` expands into the Cartesian grid of its values;
grid point ``g`` gets seed ``seed + g``.
"""

import itertools

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from lrspatial.errors import ScenarioError
from lrspatial.model import ModelKind

GRID_KEYS = ("n", "dependence", "tau2")


class EstimatorSpec(BaseModel):
    """A model kind plus its rank; written ``"LSLM:200"`` or ``"SLM"``."""

    model_config = ConfigDict(frozen=True)

    kind: ModelKind
    L: Optional[int] = Field(None, ge=1)

    @model_validator(mode="before")
    @classmethod
    def parse_label(cls, value: Any) -> Any:
        if isinstance(value, str):
            kind, _, rank = value.partition(":")
            return {"kind": kind.strip().upper(), "L": int(rank) if rank else None}
        return value

    @model_validator(mode="after")
    def check_rank(self) -> "EstimatorSpec":
        if self.kind.is_lowrank and self.L is None:
            raise ValueError(f"{self.kind.value} needs a rank, e.g. '{self.kind.value}:200'.")
        if not self.kind.is_lowrank and self.L is not None:
            raise ValueError(f"{self.kind.value} takes no rank.")
        if self.kind in (ModelKind.SDM, ModelKind.SAC):
            raise ValueError(f"{self.kind.value} has no full-rank estimator.")
        return self

    @property
    def label(self) -> str:
        return self.kind.value if self.L is None else f"{self.kind.value}_{self.L}"


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    dgp: Literal["SLM-noise", "SEM-noise"] = "SLM-noise"
    n: int = Field(500, ge=3)
    true_beta: Tuple[float, float, float] = (1.0, 2.0, 0.5)
    dependence: float = Field(0.6, gt=-1.0, lt=1.0)
    tau2: float = Field(0.0, ge=0.0)
    replications: int = Field(200, ge=1)
    estimators: List[EstimatorSpec] = Field(min_length=1)
    seed: int = 0
    which: Literal["LA", "LM"] = "LA"
    bootstrap: int = Field(0, ge=0, description="Bootstrap replicates per fit; 0 disables.")
    level: float = Field(0.95, gt=0.0, lt=1.0)

    @field_validator("estimators", mode="before")
    @classmethod
    def split_estimators(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [part for part in value.replace(",", " ").split() if part]
        return value

    @property
    def max_rank(self) -> int:
        ranks = [spec.L for spec in self.estimators if spec.L is not None]
        return min(max(ranks), self.n) if ranks else 0


def _describe(error: ValidationError) -> str:
    first = error.errors()[0]
    field = ".".join(str(part) for part in first["loc"]) or "scenario"
    return f"field '{field}': {first['msg']}"


def _expand(entry: Dict[str, Any]) -> List[Dict[str, Any]]:
    grid = {k: entry[k] for k in GRID_KEYS if isinstance(entry.get(k), list)}
    if not grid:
        return [entry]
    expanded = []
    keys = list(grid)
    for index, values in enumerate(itertools.product(*(grid[k] for k in keys))):
        point = dict(entry)
        point.update(zip(keys, values))
        point["seed"] = int(entry.get("seed", 0)) + index
        suffix = "-".join(f"{k}{v}" for k, v in zip(keys, values))
        point["id"] = f"{entry.get('id', 'scenario')}-{suffix}"
        expanded.append(point)
    return expanded


def parse_scenarios(document: Dict[str, Any]) -> List[Scenario]:
    defaults = document.get("defaults", {})
    entries = document.get("scenario", [])
    unknown = set(document) - {"defaults", "scenario"}
    if unknown:
        raise ScenarioError(f"unknown top-level table(s): {', '.join(sorted(unknown))}.")
    if not entries:
        raise ScenarioError("document defines no [[scenario]] tables.")
    scenarios = []
    for position, entry in enumerate(entries):
        merged = {**defaults, **entry}
        name = str(merged.get("id", f"#{position}"))
        for point in _expand(merged):
            try:
                scenarios.append(Scenario.model_validate(point))
            except ValidationError as e:
                raise ScenarioError(_describe(e), name) from e
    return scenarios


def load_scenarios(path: Union[str, Path]) -> List[Scenario]:
    try:
        with open(path, "rb") as f:
            document = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"{path}: {e}") from e
    return parse_scenarios(document)


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario document shipped with the package."""
    filename = name if name.endswith(".toml") else f"{name}.toml"
    path = resources.files("lrspatial").joinpath("resources", "scenarios", filename)
    if not path.is_file():
        raise ScenarioError(f"no bundled scenario document named '{name}'.")
    return Path(str(path))
