"""Configuration management using Pydantic."""

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from enclab.core.exceptions import ConfigurationError


Vec3 = Tuple[float, float, float]


class MediumSpec(BaseModel):
    """Two-layer background: speed² gamma_plus above x3=0, gamma_minus below."""

    gamma_plus: float = Field(default=4.0, gt=0, description="Speed squared of the upper layer")
    gamma_minus: float = Field(default=1.0, gt=0, description="Speed squared of the lower layer")
    homogeneous: bool = Field(default=False, description="Admit gamma_plus == gamma_minus")

    model_config = {"frozen": True}

    @model_validator(mode='after')
    def validate_regime(self) -> 'MediumSpec':
        """Only the total-reflection regime (and its homogeneous limit) is modelled."""
        if self.homogeneous:
            if not math.isclose(self.gamma_plus, self.gamma_minus, rel_tol=0.0, abs_tol=0.0):
                raise ValueError('homogeneous medium requires gamma_plus == gamma_minus')
        elif not self.gamma_plus > self.gamma_minus:
            raise ValueError(
                'gamma_plus must exceed gamma_minus (total-reflection regime); '
                'use MediumSpec.homogeneous(gamma) for equal speeds'
            )
        return self

    @classmethod
    def homogeneous_medium(cls, gamma: float) -> 'MediumSpec':
        """Equal speeds on both sides of the interface."""
        return cls(gamma_plus=gamma, gamma_minus=gamma, homogeneous=True)

    @property
    def a0(self) -> float:
        """sqrt(gamma_minus / gamma_plus)."""
        return math.sqrt(self.gamma_minus / self.gamma_plus)

    @property
    def theta0(self) -> float:
        """Critical angle, sin(theta0) = a0."""
        return math.asin(self.a0)

    @property
    def speed_plus(self) -> float:
        return math.sqrt(self.gamma_plus)

    @property
    def speed_minus(self) -> float:
        return math.sqrt(self.gamma_minus)

    @property
    def max_speed(self) -> float:
        return max(self.speed_plus, self.speed_minus)


class BallSpec(BaseModel):
    """Closed ball B in the upper half-space."""

    center: Vec3 = Field(default=(0.0, 0.0, 3.0), description="Center p")
    radius: float = Field(default=1.0, gt=0, description="Radius eta")

    model_config = {"frozen": True}

    @model_validator(mode='after')
    def validate_upper(self) -> 'BallSpec':
        if self.center[2] - self.radius <= 0:
            raise ValueError('ball closure must lie strictly in the upper half-space (p3 - eta > 0)')
        return self


class ShapeSpec(BaseModel):
    """Geometry of the inclusion D."""

    kind: Literal["ball", "ellipsoid", "union_of_balls"] = "ball"
    center: Vec3 = Field(default=(0.0, 0.0, -2.0), description="Center (ball, ellipsoid)")
    radius: float = Field(default=0.5, gt=0, description="Radius (ball)")
    semi_axes: Vec3 = Field(default=(0.5, 0.5, 0.5), description="Semi-axes (ellipsoid)")
    centers: List[Vec3] = Field(default_factory=list, description="Centers (union_of_balls)")
    radii: List[float] = Field(default_factory=list, description="Radii (union_of_balls)")

    model_config = {"frozen": True}

    @model_validator(mode='after')
    def validate_shape(self) -> 'ShapeSpec':
        if self.kind == "ellipsoid" and min(self.semi_axes) <= 0:
            raise ValueError('semi_axes must be positive')
        if self.kind == "union_of_balls":
            if not self.centers or len(self.centers) != len(self.radii):
                raise ValueError('union_of_balls needs matching non-empty centers and radii')
            if min(self.radii) <= 0:
                raise ValueError('radii must be positive')
        return self


class InclusionSpec(BaseModel):
    """Inclusion D with perturbation h (scalar or diagonal) added to gamma_0 inside D."""

    shape: ShapeSpec = Field(default_factory=ShapeSpec)
    h_value: Union[float, Vec3] = Field(default=-0.5, description="Scalar or diagonal perturbation")
    sign_class: Literal["A_plus", "A_minus"] = "A_minus"

    model_config = {"frozen": True}

    @property
    def h_diag(self) -> Tuple[float, float, float]:
        if isinstance(self.h_value, (int, float)):
            return (float(self.h_value),) * 3
        return tuple(float(v) for v in self.h_value)

    @property
    def is_null(self) -> bool:
        return all(v == 0.0 for v in self.h_diag)

    @model_validator(mode='after')
    def validate_sign(self) -> 'InclusionSpec':
        h = self.h_diag
        if self.is_null:
            return self
        if self.sign_class == "A_plus" and min(h) <= 0:
            raise ValueError('sign_class A_plus requires h positive definite')
        if self.sign_class == "A_minus" and max(h) >= 0:
            raise ValueError('sign_class A_minus requires -h positive definite')
        return self


class SourceSpec(BaseModel):
    """Initial velocity f = f0 * bump(|x - p| / eta) supported on the closed ball B."""

    ball: BallSpec = Field(default_factory=BallSpec)
    amplitude: float = Field(default=1.0, description="f0, nonzero")
    plateau: float = Field(default=0.6, gt=0, lt=1, description="Fraction of the radius where f = f0")

    model_config = {"frozen": True}

    @field_validator('amplitude')
    @classmethod
    def validate_amplitude(cls, v):
        if v == 0:
            raise ValueError('amplitude must be nonzero')
        return v


class GridConfig(BaseModel):
    """Finite-difference grid and time stepping."""

    cells: int = Field(default=128, ge=24, description="Cells along the longest box axis (sponge included)")
    spacing: Optional[float] = Field(default=None, gt=0, description="Explicit spacing; overrides cells")
    sponge_cells: int = Field(default=16, ge=4, description="Width of each sponge layer in cells")
    sponge_strength: float = Field(default=3.0, gt=0, description="Peak damping in units of c_max / h")
    margin: float = Field(default=0.2, ge=0, description="Relative margin between objects and the sponge")
    cfl: float = Field(default=0.5, gt=0, le=0.9, description="dt = cfl * h / (sqrt(3) c_max)")
    dt: Optional[float] = Field(default=None, gt=0, description="Explicit time step; validated against CFL")
    duration: Optional[float] = Field(default=None, gt=0, description="Absolute observation time T")
    duration_factor: float = Field(default=1.5, gt=0, description="T = factor * 2 l(D,B) when duration unset")
    energy_stride: int = Field(default=10, ge=1, description="Steps between energy samples")
    receivers: List[Vec3] = Field(default_factory=list, description="Extra probe points")
    box_lower: Optional[Vec3] = Field(default=None, description="Physical box corner; automatic when unset")
    box_upper: Optional[Vec3] = Field(default=None, description="Physical box corner; automatic when unset")

    @model_validator(mode='after')
    def validate_box(self) -> 'GridConfig':
        if (self.box_lower is None) != (self.box_upper is None):
            raise ValueError('box_lower and box_upper must be given together')
        if self.box_lower is not None and any(
            lo >= hi for lo, hi in zip(self.box_lower, self.box_upper)
        ):
            raise ValueError('box_lower must be below box_upper')
        if self.spacing is None and self.cells < 2 * self.sponge_cells + 8:
            raise ValueError('cells must leave at least 8 physical cells between the sponge layers')
        return self


class TauLadderConfig(BaseModel):
    """Geometric ladder tau_j = tau0 * ratio**j."""

    tau0: float = Field(default=0.4, gt=0)
    ratio: float = Field(default=1.25, gt=1)
    count: int = Field(default=15, ge=2)
    samples_per_efold: int = Field(default=8, ge=2, description="Caps tau_max so tau_max * dt <= 1/samples")


class FitConfig(BaseModel):
    """Decay-rate regression."""

    window: float = Field(default=0.4, gt=0, le=1, description="Top fraction of the ladder used")
    log_tau: bool = Field(default=True, description="Include a log(tau) regressor")
    min_rows: int = Field(default=6, ge=3)
    censor_factor: float = Field(default=1.0, gt=0, description="Floor = factor * accumulated round-off estimate")


class KernelConfig(BaseModel):
    """Quadrature controls for the two-layer fundamental solution."""

    tau_min: float = Field(default=5.0, gt=0)
    rtol: float = Field(default=1.0e-4, gt=0, description="Relative tolerance of the adaptive z'-quadrature")
    max_refinements: int = Field(default=3, ge=0)
    sigma_nodes: int = Field(default=16, ge=4, description="Gauss nodes per sigma panel")
    branch_nodes: int = Field(default=16, ge=4, description="Gauss nodes per branch-integral panel")
    radial_nodes: int = Field(default=16, ge=4, description="Gauss nodes per radial z' panel")
    angular_nodes: int = Field(default=32, ge=8, description="Trapezoid nodes in the z' angle")
    window_scale: float = Field(default=4.0, gt=0, description="c in r_in = c * max(1, 1/sqrt(tau lambda_min))")
    taus: List[float] = Field(default_factory=lambda: [20.0, 40.0, 80.0, 160.0])
    energy_kernel: Literal["quadrature", "asymptotic"] = "quadrature"
    energy_nodes: int = Field(default=4, ge=2, description="Radial/angular density of the D and B node rules")


class OpticsConfig(BaseModel):
    """Geometry validations."""

    multistarts: int = Field(default=32, ge=1)
    rel_tol: float = Field(default=1.0e-8, gt=0)
    scan_pairs: int = Field(default=200, ge=1)
    scan_grid: int = Field(default=400, ge=16)
    scan_triples: int = Field(default=100000, ge=100)


class RegionConfig(BaseModel):
    """Probe box for the region estimate E(D; B, gamma_plus, gamma_minus)."""

    lower: Vec3 = Field(default=(-3.0, -3.0, -5.0))
    upper: Vec3 = Field(default=(3.0, 3.0, -0.05))
    points: Tuple[int, int, int] = Field(default=(25, 25, 25))

    @model_validator(mode='after')
    def validate_box(self) -> 'RegionConfig':
        if self.upper[2] >= 0:
            raise ValueError('region probes must lie in the lower half-space')
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError('region lower corner must be below the upper corner')
        return self


class LoggingConfig(BaseModel):
    """Logging configuration."""

    level: str = Field(default="INFO", description="Log level")
    format: str = Field(default="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    file: Optional[str] = Field(default=None, description="Log file path")
    rotation: bool = Field(default=True, description="Enable log rotation")

    @field_validator('level')
    @classmethod
    def validate_level(cls, v):
        if v.upper() not in ['DEBUG', 'INFO', 'WARNING', 'ERROR']:
            raise ValueError('level must be one of DEBUG, INFO, WARNING, ERROR')
        return v.upper()


class OutputConfig(BaseModel):
    """Where artifacts go."""

    directory: str = Field(default="./out")


class ExperimentConfig(BaseModel):
    """Main experiment configuration."""

    name: str = Field(default="coaxial")
    seed: int = Field(default=0, ge=0)
    threads: int = Field(default=1, ge=1)
    medium: MediumSpec = Field(default_factory=MediumSpec)
    inclusion: InclusionSpec = Field(default_factory=InclusionSpec)
    source: SourceSpec = Field(default_factory=SourceSpec)
    grid: GridConfig = Field(default_factory=GridConfig)
    tau_ladder: TauLadderConfig = Field(default_factory=TauLadderConfig)
    fit: FitConfig = Field(default_factory=FitConfig)
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    optics: OpticsConfig = Field(default_factory=OpticsConfig)
    region: RegionConfig = Field(default_factory=RegionConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode='after')
    def validate_config(self) -> 'ExperimentConfig':
        """Validate cross-section consistency."""
        from enclab.optics.shapes import build_shape

        shape = build_shape(self.inclusion.shape)
        lo, hi = shape.bounding_box()
        if hi[2] >= 0:
            raise ValueError('inclusion closure must lie strictly in the lower half-space')
        gamma_in = [self.medium.gamma_minus + h for h in self.inclusion.h_diag]
        if min(gamma_in) <= 0:
            raise ValueError('gamma_minus + h must stay positive definite inside D')
        return self


class RuntimeSettings(BaseSettings):
    """Environment overrides (ENCLAB_LOG_LEVEL, ENCLAB_THREADS, ENCLAB_OUT)."""

    model_config = SettingsConfigDict(env_prefix="ENCLAB_", env_file=".env", extra="ignore")

    log_level: Optional[str] = None
    threads: Optional[int] = None
    out: Optional[str] = None


HASH_EXCLUDE = {"logging", "output", "threads"}


def config_hash(config: ExperimentConfig) -> str:
    """Short SHA-256 of the physics-relevant part of the config."""
    payload = config.model_dump(mode="json", exclude=HASH_EXCLUDE)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _locate(node: Optional[yaml.Node], loc: Tuple[Any, ...]) -> Optional[int]:
    """1-based line of the deepest YAML node reachable along a pydantic error location."""
    line = None
    for key in loc:
        if node is None:
            break
        line = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            match = None
            for key_node, value_node in node.value:
                if key_node.value == str(key):
                    match = value_node
                    line = key_node.start_mark.line + 1
                    break
            node = match
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            node = None
    if node is not None:
        line = node.start_mark.line + 1
    return line


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate YAML text."""
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text) or {}
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else None
        raise ConfigurationError(f"YAML syntax error: {e.problem}", line=line) from e

    if not isinstance(data, dict):
        raise ConfigurationError("top level of the config must be a mapping", line=1)

    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = tuple(first.get("loc", ()))
        where = ".".join(str(p) for p in loc) or "<root>"
        raise ConfigurationError(f"{where}: {first.get('msg')}", line=_locate(root, loc)) from e


def load_config(config_path: str) -> ExperimentConfig:
    """Load configuration from YAML file."""
    config_file = Path(config_path)
    if not config_file.exists():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    with open(config_file, 'r') as f:
        return parse_config(f.read())
