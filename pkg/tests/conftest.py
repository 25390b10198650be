"""Shared fixtures: media, the coaxial configuration and a tiny solver grid."""

import math

import numpy as np
import pytest

from enclab.core.config import ExperimentConfig, GridConfig, InclusionSpec, MediumSpec
from enclab.core.models import MediumTag, WaveRun


COAXIAL_YAML = """\
name: coaxial
seed: 0
medium:
  gamma_plus: 4.0
  gamma_minus: 1.0
inclusion:
  shape:
    kind: ball
    center: [0.0, 0.0, -2.0]
    radius: 0.5
  h_value: -0.5
  sign_class: A_minus
source:
  ball:
    center: [0.0, 0.0, 3.0]
    radius: 1.0
"""


@pytest.fixture
def medium():
    """gamma_plus = 4, gamma_minus = 1 (a0 = 1/2, theta0 = pi/6)."""
    return MediumSpec(gamma_plus=4.0, gamma_minus=1.0)


@pytest.fixture
def homogeneous():
    return MediumSpec.homogeneous_medium(1.0)


@pytest.fixture
def coaxial():
    return ExperimentConfig()


@pytest.fixture
def tiny_config():
    """Coaxial experiment on a 32-cell grid observed for one time unit."""
    grid = GridConfig(cells=32, sponge_cells=4, duration=1.0, energy_stride=1)
    return ExperimentConfig(grid=grid)


@pytest.fixture
def null_config(tiny_config):
    inclusion = InclusionSpec(shape=tiny_config.inclusion.shape, h_value=0.0)
    return tiny_config.model_copy(update={"inclusion": inclusion})


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(COAXIAL_YAML)
    return path


def synthetic_run(signal, dt=1e-3, duration=2.0, tag=MediumTag.PERTURBED, config_hash="0123456789abcdef"):
    """Single-node run whose trace is signal(t), with f * weight = 1."""
    n_steps = int(round(duration / dt))
    t = np.arange(n_steps + 1) * dt
    return WaveRun(
        tag=tag,
        spacing=0.1,
        dt=dt,
        duration=n_steps * dt,
        n_steps=n_steps,
        nodes=np.array([[0.0, 0.0, 3.0]]),
        weights=np.array([1.0]),
        source=np.array([1.0]),
        traces=np.asarray(signal(t), dtype=float).reshape(-1, 1),
        config_hash=config_hash,
    )


@pytest.fixture
def make_run():
    return synthetic_run


@pytest.fixture
def axial_pair():
    """x below, y above on the x3 axis: l = 1 + 1 = 2 for gamma_plus = 4, gamma_minus = 1."""
    return np.array([0.0, 0.0, -1.0]), np.array([0.0, 0.0, 2.0])


@pytest.fixture
def axial_phi0(medium):
    """Leading-order amplitude E0 / (8 pi gamma_+ gamma_- sqrt(det H) |x - z~| |z~ - y|) for the axial pair."""
    e0 = 4.0 * medium.speed_minus / (1.0 + medium.a0)
    det_h = (1.0 / medium.speed_minus + 1.0 / (2.0 * medium.speed_plus)) ** 2
    return e0 / (1.0 * 2.0) / (8.0 * math.pi * medium.gamma_plus * medium.gamma_minus * math.sqrt(det_h))
