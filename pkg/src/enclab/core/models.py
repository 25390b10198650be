"""Data models for the enclosure laboratory."""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np


class Contrast(str, Enum):
    """Speed contrast of the inclusion, read off the indicator sign."""
    A_PLUS = "A_plus"
    A_MINUS = "A_minus"
    INDETERMINATE = "indeterminate"


class MediumTag(str, Enum):
    """Which coefficient a wave run used."""
    PERTURBED = "perturbed"
    BACKGROUND = "background"


@dataclass
class RefractionSolution:
    """Fermat minimizer z'(x, y) of the two-layer travel time."""
    x: np.ndarray
    y: np.ndarray
    z_prime: np.ndarray
    l_value: float
    theta_minus: float
    theta_plus: float
    hessian: np.ndarray
    det_h: float
    snell_residual: float = 0.0

    @property
    def z_tilde(self) -> np.ndarray:
        """Interface point embedded in R^3."""
        return np.array([self.z_prime[0], self.z_prime[1], 0.0])

    @property
    def lambda_min(self) -> float:
        """Smallest Hessian eigenvalue."""
        return float(np.linalg.eigvalsh(self.hessian)[0])


@dataclass
class OpticalDistance:
    """l(D, B) with its attaining pair."""
    l_value: float
    x_star: np.ndarray
    y_star: np.ndarray
    z_prime: np.ndarray
    starts: int
    refinements: int


@dataclass
class KernelValue:
    """Kernel value carried as mantissa * exp(-tau * scale).

    ``phi`` and ``grad`` are mantissas; ``scale`` is a time so that values far
    below the double-precision range keep an exact logarithm.
    """
    tau: float
    phi: float
    grad: Optional[np.ndarray] = None
    scale: float = 0.0
    smooth: float = 0.0
    branch: float = 0.0
    error_estimate: float = 0.0
    nodes: int = 0
    imag_residue: float = 0.0

    @property
    def value(self) -> float:
        """phi in linear scale (may underflow)."""
        return self.phi * math.exp(-self.tau * self.scale)

    @property
    def gradient(self) -> Optional[np.ndarray]:
        if self.grad is None:
            return None
        return self.grad * math.exp(-self.tau * self.scale)

    def log_abs(self) -> float:
        """log|phi| without underflow."""
        if self.phi == 0.0:
            return -math.inf
        return math.log(abs(self.phi)) - self.tau * self.scale

    def log_grad_norm(self) -> float:
        """log|grad phi| without underflow."""
        if self.grad is None:
            raise ValueError("kernel value carries no gradient")
        norm = float(np.linalg.norm(self.grad))
        if norm == 0.0:
            return -math.inf
        return math.log(norm) - self.tau * self.scale


@dataclass
class RegionHistory:
    """Field samples on the node box enclosing the closure of D (plus one cell)."""
    origin: np.ndarray
    spacing: float
    samples: np.ndarray
    inside: np.ndarray
    gamma0: np.ndarray
    h_diag: Tuple[float, float, float]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.samples.shape[1:])


@dataclass
class WaveRun:
    """Discretized solution of the wave equation sampled on B."""
    tag: MediumTag
    spacing: float
    dt: float
    duration: float
    n_steps: int
    nodes: np.ndarray
    weights: np.ndarray
    source: np.ndarray
    traces: np.ndarray
    config_hash: str = ""
    receivers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    receiver_traces: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    region: Optional[RegionHistory] = None
    energy_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    energy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sponge_contact_time: float = math.inf
    box_lower: Optional[np.ndarray] = None
    box_upper: Optional[np.ndarray] = None

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])


@dataclass
class IndicatorRow:
    """One tau of the indicator curve."""
    tau: float
    value: float
    scaled: float
    rate: float
    censored: bool
    floor: float
    w_energy: float
    v_energy: float
    lower: float = math.nan
    upper: float = math.nan


@dataclass
class IndicatorCurve:
    """Indicator table with metadata."""
    rows: List[IndicatorRow]
    duration: float
    l_reference: float
    config_hash: str
    sign_class: str = ""
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def taus(self) -> np.ndarray:
        return np.array([r.tau for r in self.rows])

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.rows])

    def window(self, fraction: float) -> List[IndicatorRow]:
        """Top ``fraction`` of the ladder (by count), censored rows included."""
        n = len(self.rows)
        keep = max(1, int(math.ceil(fraction * n)))
        return sorted(self.rows, key=lambda r: r.tau)[n - keep:]

    def uncensored(self) -> List[IndicatorRow]:
        return [r for r in self.rows if not r.censored]


@dataclass
class FitReport:
    """Decay-rate regression result."""
    l_hat: float
    stderr: float
    slope: float
    intercept: float
    log_tau_coef: Optional[float]
    residual_rms: float
    tau_low: float
    tau_high: float
    rows_used: int
    window: float
    duration: float
    regime_violation: bool
    config_hash: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "l_hat": self.l_hat,
            "stderr": self.stderr,
            "slope": self.slope,
            "intercept": self.intercept,
            "log_tau_coef": self.log_tau_coef,
            "residual_rms": self.residual_rms,
            "tau_low": self.tau_low,
            "tau_high": self.tau_high,
            "rows_used": self.rows_used,
            "window": self.window,
            "duration": self.duration,
            "regime_violation": self.regime_violation,
            "config_hash": self.config_hash,
        }


@dataclass
class RegionResult:
    """Enclosure region estimate on a probe grid."""
    points: np.ndarray
    member: np.ndarray
    grid_shape: Tuple[int, int, int]
    threshold: float
    l_value: float
    containment: Optional[float] = None
    euclidean_agreement: Optional[float] = None
    config_hash: str = ""

    @property
    def member_fraction(self) -> float:
        return float(np.mean(self.member)) if self.member.size else 0.0


@dataclass
class CheckResult:
    """Outcome of an acceptance check."""
    name: str
    passed: bool
    detail: str = ""
    metrics: Dict[str, Any] = field(default_factory=dict)
    elapsed: float = 0.0
