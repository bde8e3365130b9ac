"""Scenario configuration: pydantic models, loading, overrides and provenance."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)


def _project_root() -> Path:
    """Best-effort project root for dev environments."""
    return Path(__file__).resolve().parents[2]


def scenarios_dir() -> Path:
    """Return the folder holding the bundled scenarios."""
    return _project_root() / "scenarios"


class _Model(BaseModel):
    model_config = ConfigDict(populate_by_name=True, extra="forbid")


class GridConfig(_Model):
    n: int = 128
    length: float = Field(16.0, alias="L", gt=0)
    lattice_factor: int = Field(4, alias="lattice-factor", ge=1)
    markers: int = Field(512, ge=16, le=4096)

    @field_validator("n")
    @classmethod
    def _power_of_two(cls, v: int) -> int:
        if v < 16 or v & (v - 1):
            raise ValueError("n must be a power of two >= 16")
        return v

    @property
    def h(self) -> float:
        return self.length / self.n


class LawPreset(_Model):
    """Selector among the bundled constitutive laws plus their parameters."""

    pressure: Literal["gamma", "proportional"] = "gamma"
    a: float = 1.0
    gamma: float = Field(1.4, gt=0)
    kappa: float = Field(1.0, gt=0)
    viscosity: Literal["constant", "affine"] = "constant"
    mu: float = Field(1.0, gt=0)
    epsilon: float = 0.0
    bulk: Literal["constant", "power"] = "constant"
    b: float = Field(0.0, ge=0)
    beta: float = 1.0
    rho_ref: float = Field(1.0, alias="rho-ref", gt=0)
    band: tuple[float, float] | None = None
    nu_resolution: int = Field(2000, alias="nu-resolution", ge=16)

    @model_validator(mode="after")
    def _band_contains_reference(self) -> LawPreset:
        if self.band is not None:
            lo, hi = self.band
            if not (0 < lo < self.rho_ref < hi):
                raise ValueError("band must satisfy 0 < lo < rho-ref < hi")
        return self


class ProfileConfig(_Model):
    base: float | None = Field(None, gt=0)
    cusp: float = 0.0
    anchor_angle: float = Field(0.0, alias="anchor-angle")


class HarmonicConfig(_Model):
    mode: int = Field(..., ge=2)
    amplitude: float
    phase: float = 0.0


class PatchConfig(_Model):
    shape: Literal["circle", "ellipse", "star"] = "circle"
    center: tuple[float, float] | None = None
    radius: float = Field(1.0, gt=0)
    semi_axes: tuple[float, float] = Field((1.0, 0.5), alias="semi-axes")
    harmonics: list[HarmonicConfig] = Field(default_factory=list)
    inside: ProfileConfig = Field(default_factory=ProfileConfig)
    outside: ProfileConfig = Field(default_factory=ProfileConfig)
    alpha: float = Field(0.5, gt=0, lt=1)

    @field_validator("semi_axes")
    @classmethod
    def _positive_axes(cls, v: tuple[float, float]) -> tuple[float, float]:
        if min(v) <= 0:
            raise ValueError("semi-axes must be positive")
        return v


class GaussianTerm(_Model):
    amplitude: float
    width: float = Field(0.5, gt=0)
    center: tuple[float, float] | None = None


class VelocityConfig(_Model):
    mode: Literal["elliptic", "target"] = "elliptic"
    vortices: list[GaussianTerm] = Field(default_factory=list)
    potentials: list[GaussianTerm] = Field(default_factory=list)
    delta: float = Field(0.1, gt=0, lt=1)
    cg_tol: float = Field(1e-8, alias="cg-tol", gt=0)
    cg_maxiter: int = Field(2000, alias="cg-maxiter", ge=1)


class ForceConfig(_Model):
    kind: Literal["manufactured-shear"] = "manufactured-shear"
    amplitude: float = 0.1
    mode: int = Field(1, ge=1)


class StepConfig(_Model):
    dt: float | None = Field(None, gt=0)
    adaptive: bool = True
    cfl: float = Field(0.4, gt=0, le=0.9)
    dt_max: float = Field(1e-2, alias="dt-max", gt=0)
    mu_split: float | None = Field(None, alias="mu-split", gt=0)
    dealias: bool = True
    force: ForceConfig | None = None
    frozen_velocity: bool = Field(False, alias="frozen-velocity")
    flux: Literal["direct", "zero"] = "direct"

    @model_validator(mode="after")
    def _dt_available(self) -> StepConfig:
        if not self.adaptive and self.dt is None:
            raise ValueError("dt is required when adaptive is false")
        return self


class RunConfig(_Model):
    end_time: float = Field(1.0, alias="end-time", gt=0)
    max_steps: int | None = Field(None, alias="max-steps", ge=1)
    record_every: int = Field(10, alias="record-every", ge=1)
    checkpoint_every: int = Field(0, alias="checkpoint-every", ge=0)
    seed: int = Field(0, ge=0)
    restart_from: str | None = Field(None, alias="restart-from")
    jump_norms: list[float | Literal["inf"]] = Field(default_factory=lambda: [4.0, "inf"], alias="jump-norms")

    @field_validator("jump_norms")
    @classmethod
    def _valid_norms(cls, v: list) -> list:
        for p in v:
            if p != "inf" and p < 1:
                raise ValueError("jump norm exponents must be >= 1 or 'inf'")
        return v


class ProbeConfig(_Model):
    radius_cells: float = Field(6.0, alias="radius-cells", gt=2)
    exponent: float = Field(1.0, gt=0, le=1)
    pair_budget: int = Field(100_000, alias="pair-budget", ge=100)
    record_pair_budget: int = Field(20_000, alias="record-pair-budget", ge=100)
    band_cells: float = Field(3.0, alias="band-cells", ge=0)
    alpha: float | None = Field(None, gt=0, lt=1)


class DiagnosticsConfig(_Model):
    identities: bool = True
    jumps: bool = True
    holder: bool = True
    hoff2: bool = True


class ChecksConfig(_Model):
    energy: float = 0.02
    flux: float = 0.05
    vorticity: float = 0.05
    jumps: float = 0.10
    lagrangian_mass: float = Field(0.01, alias="lagrangian-mass")
    hoff2: float = 0.05


class OutputConfig(_Model):
    directory: str = "runs/default"
    heatmaps: bool = False
    log_level: str = Field("INFO", alias="log-level")
    log_file: str = Field("patchflow.log", alias="log-file")


class ScenarioConfig(_Model):
    name: str = "scenario"
    grid: GridConfig = Field(default_factory=GridConfig)
    laws: LawPreset = Field(default_factory=LawPreset)
    patch: PatchConfig = Field(default_factory=PatchConfig)
    velocity: VelocityConfig = Field(default_factory=VelocityConfig)
    step: StepConfig = Field(default_factory=StepConfig)
    run: RunConfig = Field(default_factory=RunConfig)
    probes: ProbeConfig = Field(default_factory=ProbeConfig)
    monitors: dict[str, float] = Field(default_factory=dict)
    diagnostics: DiagnosticsConfig = Field(default_factory=DiagnosticsConfig)
    checks: ChecksConfig = Field(default_factory=ChecksConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @property
    def alpha(self) -> float:
        return self.probes.alpha if self.probes.alpha is not None else self.patch.alpha

    @property
    def jump_exponents(self) -> list[float]:
        return [math.inf if p == "inf" else float(p) for p in self.run.jump_norms]


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err.get("loc", ()))
        parts.append(f"{loc}: {err.get('msg', 'invalid')}")
    return "; ".join(parts)


def parse_scenario(data: dict, overrides: dict | None = None) -> ScenarioConfig:
    """Validate raw scenario data, applying dotted-key overrides first."""
    merged = json.loads(json.dumps(data))
    for dotted, value in (overrides or {}).items():
        node = merged
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    try:
        return ScenarioConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {_format_validation_error(e)}") from e


def load_scenario(path: str | Path, overrides: dict | None = None) -> ScenarioConfig:
    """Read a JSON scenario file and return the validated configuration.

    Args:
        path: scenario file; a bare name is looked up in the bundled scenarios.
        overrides: dotted keys (``"grid.n"``) replacing values before validation.
    """
    candidate = Path(path).expanduser()
    if not candidate.exists() and not candidate.suffix:
        bundled = scenarios_dir() / f"{candidate.name}.json"
        if bundled.exists():
            candidate = bundled
    try:
        raw = candidate.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Invalid configuration: cannot read {candidate}: {e}") from e
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid configuration: {candidate} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("Invalid configuration: top level must be an object")
    cfg = parse_scenario(data, overrides)
    logger.debug("Loaded scenario name=%s path=%s", cfg.name, candidate)
    return cfg


def config_hash(cfg: ScenarioConfig) -> str:
    """Return the sha256 of the canonical JSON form of ``cfg``."""
    canonical = json.dumps(cfg.model_dump(by_alias=True, mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def get_log_level(cfg: ScenarioConfig | None = None) -> str:
    """Return the configured log level, honoring PATCHFLOW_LOG_LEVEL overrides."""
    override = os.environ.get("PATCHFLOW_LOG_LEVEL")
    if override:
        return override.strip()
    value = (cfg.output.log_level if cfg is not None else "").strip()
    return value or "INFO"


def get_out_dir(cfg: ScenarioConfig | None = None, cli_value: str | None = None) -> Path:
    """Return the output directory: CLI flag, then PATCHFLOW_OUT_DIR, then the scenario."""
    raw = cli_value or os.environ.get("PATCHFLOW_OUT_DIR") or (cfg.output.directory if cfg else "runs/default")
    return Path(raw).expanduser()


def get_log_path(cfg: ScenarioConfig | None = None, out_dir: Path | None = None) -> Path | None:
    """Return the log file path, honoring PATCHFLOW_LOG_PATH overrides."""
    override = os.environ.get("PATCHFLOW_LOG_PATH")
    if override:
        return Path(override).expanduser()
    name = (cfg.output.log_file if cfg is not None else "").strip()
    if not name:
        return None
    candidate = Path(name).expanduser()
    if not candidate.is_absolute() and out_dir is not None:
        candidate = out_dir / candidate
    return candidate
