"""Declarative run configuration (YAML documents validated by pydantic).

Dimensionless runs give couplings, fields and rates in rad per unit time
and times in the matching unit. A run becomes physical when it sets
``potential.j_plateau_hz`` or a ``planner`` section: frequencies are then
entered as ordinary frequencies (``*_hz`` keys), rates in 1/s and times in
seconds, and everything is converted at the boundary.
"""
from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import InvalidSpecError

SCAN_AXES = ("L", "r_b", "gamma_over_j0", "variant", "b_over_nj_bar")
PRESETS = ("fig2_small", "figS1", "figS2_bench", "fig3_cut")


class ConfigError(InvalidSpecError):
    """Invalid configuration document; ``errors`` lists (key path, message)."""

    def __init__(self, message: str, errors: list[tuple[str, str]] | None = None):
        super().__init__(message)
        self.errors = errors or []


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LatticeConfig(_Strict):
    lengths: list[int] = Field(min_length=1, max_length=2)
    dimension: int | None = None
    boundary: Literal["open", "periodic"] = "open"

    @model_validator(mode="after")
    def _dimension_matches(self):
        if self.dimension is not None and self.dimension != len(self.lengths):
            raise ValueError(f"dimension {self.dimension} does not match lengths {self.lengths}")
        if any(n < 1 for n in self.lengths):
            raise ValueError("lengths must be >= 1")
        return self


class PotentialConfig(_Strict):
    kind: Literal["soft-core-vdw", "sharp-cutoff"] = "soft-core-vdw"
    r_b: float | None = Field(default=None, gt=0)
    j_plateau: float | None = Field(default=None, gt=0)
    j_plateau_hz: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _one_strength(self):
        if self.j_plateau is not None and self.j_plateau_hz is not None:
            raise ValueError("give j_plateau or j_plateau_hz, not both")
        return self


class PlannerConfig(_Strict):
    species: str
    f: float = Field(gt=0, lt=0.25)
    omega_hz: float | None = Field(default=None, gt=0)
    r_b: float | None = Field(default=None, gt=0)
    dissipation: bool = True

    @model_validator(mode="after")
    def _one_input(self):
        if (self.omega_hz is None) == (self.r_b is None):
            raise ValueError("give exactly one of omega_hz or r_b")
        return self


class ModelConfig(_Strict):
    variant: str
    transverse_field: float | None = Field(default=None, ge=0)
    transverse_field_hz: float | None = Field(default=None, ge=0)
    b_over_nj_bar: float | None = Field(default=None, gt=0)
    detuning_compensation: bool = False
    echo_pulse: bool = False
    include_longitudinal: bool = False

    @field_validator("variant")
    @classmethod
    def _known_variant(cls, v):
        from .models import canonical_variant

        return canonical_variant(v)

    @model_validator(mode="after")
    def _one_field(self):
        given = [k for k in ("transverse_field", "transverse_field_hz", "b_over_nj_bar") if getattr(self, k) is not None]
        if len(given) > 1:
            raise ValueError(f"give at most one of {given}")
        return self


class DissipationConfig(_Strict):
    gamma_minus: float = Field(default=0.0, ge=0)
    gamma_d: float = Field(default=0.0, ge=0)
    gamma_minus_over_j0: float | None = Field(default=None, ge=0)
    gamma_d_over_j0: float | None = Field(default=None, ge=0)


class EnsembleConfig(_Strict):
    n_traj: int = Field(default=1000, ge=1)
    dt: float = Field(default=0.02, gt=0)
    t_max: float = Field(default=1.0, gt=0)
    sample_stride: int = Field(default=1, ge=1)
    master_seed: int = Field(default=0, ge=0, lt=2**64)
    initial_axis: Literal["x", "y", "z"] = "z"
    block_size: int = Field(default=250, ge=1)
    estimator: Literal["classical", "diagonal_corrected"] = "classical"
    # largest allowed max|Omega| dt; dt is subdivided (recording grid kept) to meet it
    max_field_dt: float | None = Field(default=None, gt=0)


class OutputConfig(_Strict):
    timeseries: str = "timeseries.csv"
    summary: str = "summary.json"
    scan: str = "scan.csv"
    series_dir: str = "series"
    benchmark: str = "benchmark.json"
    plan: str = "plan.json"
    overlay: str = "overlay.csv"


class ScanConfig(_Strict):
    axes: dict[str, list[Union[float, str]]]
    save_series: bool = False

    @field_validator("axes")
    @classmethod
    def _known_axes(cls, axes):
        unknown = sorted(set(axes) - set(SCAN_AXES))
        if unknown:
            raise ValueError(f"unknown scan axes {unknown}; expected a subset of {list(SCAN_AXES)}")
        for name, values in axes.items():
            if not values:
                raise ValueError(f"scan axis {name!r} is empty")
        return axes


class BenchmarkConfig(_Strict):
    tolerance_db: float = Field(default=0.5, gt=0)
    tolerance_steps: int = Field(default=2, ge=0)
    z_max: float = Field(default=3.0, gt=0)


class PlanConfig(_Strict):
    species: str
    f: float = Field(gt=0, lt=0.25)
    n: int | None = Field(default=None, gt=0)
    quantum_defect: float | None = Field(default=None, ge=0)
    omega_hz: float | None = Field(default=None, gt=0)
    r_b: float | None = Field(default=None, gt=0)
    overlay_r_b: list[float] | None = None
    require_drive: bool = True

    @model_validator(mode="after")
    def _one_input(self):
        if (self.omega_hz is None) == (self.r_b is None):
            raise ValueError("give exactly one of omega_hz or r_b")
        return self


class RunConfig(_Strict):
    solver: Literal["dtwa", "exact", "ising_closed_form"] = "dtwa"
    lattice: LatticeConfig
    potential: PotentialConfig | None = None
    planner: PlannerConfig | None = None
    model: ModelConfig
    dissipation: DissipationConfig = Field(default_factory=DissipationConfig)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    outputs: OutputConfig = Field(default_factory=OutputConfig)
    scan: ScanConfig | None = None
    benchmark: BenchmarkConfig = Field(default_factory=BenchmarkConfig)

    @model_validator(mode="after")
    def _consistent_units(self):
        pot = self.potential or PotentialConfig()
        if self.planner is None and self.potential is None:
            raise ValueError("a potential section (or a planner section) is required")
        if self.planner is not None and (pot.r_b is not None or pot.j_plateau is not None or pot.j_plateau_hz is not None):
            raise ValueError("planner-derived runs take r_b and the plateau coupling from the planner")
        if self.planner is None and pot.r_b is None:
            raise ValueError("potential.r_b is required")
        physical = self.physical
        if physical and self.model.transverse_field is not None:
            raise ValueError("physical runs give the drive as model.transverse_field_hz or b_over_nj_bar")
        if not physical and self.model.transverse_field_hz is not None:
            raise ValueError("model.transverse_field_hz needs potential.j_plateau_hz or a planner section")
        return self

    @property
    def physical(self) -> bool:
        return self.planner is not None or (self.potential is not None and self.potential.j_plateau_hz is not None)


class PlanDocument(_Strict):
    plan: PlanConfig
    lattice: LatticeConfig | None = None
    outputs: OutputConfig = Field(default_factory=OutputConfig)


def _format_errors(exc: ValidationError) -> list[tuple[str, str]]:
    out = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append((path, err["msg"]))
    return out


def parse_config(data: dict, model=RunConfig):
    """Validate a raw mapping; raises :class:`ConfigError` with key paths."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        errors = _format_errors(exc)
        lines = "\n".join(f"  {path}: {msg}" for path, msg in errors)
        raise ConfigError(f"invalid configuration:\n{lines}", errors) from None
    except InvalidSpecError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


def _load_yaml(text: str, source: str) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError(f"{source}: YAML syntax error{where}: {getattr(exc, 'problem', exc)}") from None
    return {} if data is None else data


def load_config(path, model=RunConfig):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from None
    return parse_config(_load_yaml(text, str(path)), model)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("rydsqueeze").joinpath(f"presets/{name}.yaml").read_text()


def load_preset(name: str, model=RunConfig):
    return parse_config(_load_yaml(preset_text(name), name), model)


def config_echo(cfg: BaseModel) -> dict:
    """Plain-data copy of a validated config, with non-finite floats as strings."""
    return _finite(cfg.model_dump(mode="python"))


def _finite(obj):
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj
