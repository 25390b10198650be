"""Configuration loading, validation diagnostics and hashing."""

import math

import pytest

from enclab.core.config import (
    ExperimentConfig, GridConfig, InclusionSpec, MediumSpec, RuntimeSettings,
    config_hash, load_config, parse_config,
)
from enclab.core.exceptions import ConfigurationError


def test_default_config_is_coaxial(coaxial):
    assert coaxial.medium.a0 == pytest.approx(0.5)
    assert coaxial.medium.theta0 == pytest.approx(math.pi / 6)
    assert math.sin(coaxial.medium.theta0) == pytest.approx(coaxial.medium.a0, abs=1e-15)
    assert coaxial.inclusion.h_diag == (-0.5, -0.5, -0.5)


def test_load_config_from_file(config_file):
    config = load_config(str(config_file))
    assert config.name == "coaxial"
    assert config.source.ball.center == (0.0, 0.0, 3.0)


def test_missing_file_raises():
    with pytest.raises(FileNotFoundError):
        load_config("/nonexistent/enclab.yaml")


def test_validation_error_reports_line():
    text = "name: bad\nmedium:\n  gamma_plus: 4.0\n  gamma_minus: -1.0\n"
    with pytest.raises(ConfigurationError) as info:
        parse_config(text)
    assert info.value.line == 4
    assert "gamma_minus" in str(info.value)


def test_yaml_syntax_error_reports_line():
    with pytest.raises(ConfigurationError) as info:
        parse_config("name: bad\nmedium: [1.0, 2.0\n")
    assert info.value.line is not None


def test_reversed_contrast_is_rejected():
    with pytest.raises(ConfigurationError):
        parse_config("medium:\n  gamma_plus: 1.0\n  gamma_minus: 4.0\n")


def test_homogeneous_medium_only_through_constructor():
    m = MediumSpec.homogeneous_medium(2.0)
    assert m.a0 == 1.0
    assert m.theta0 == pytest.approx(math.pi / 2)
    with pytest.raises(ValueError):
        MediumSpec(gamma_plus=2.0, gamma_minus=2.0)


@pytest.mark.parametrize("h_value,sign_class", [
    (0.5, "A_minus"),
    (-0.5, "A_plus"),
    ((1.0, -1.0, 1.0), "A_plus"),
])
def test_sign_class_must_match_perturbation(h_value, sign_class):
    with pytest.raises(ValueError):
        InclusionSpec(h_value=h_value, sign_class=sign_class)


def test_null_perturbation_accepts_either_class():
    assert InclusionSpec(h_value=0.0, sign_class="A_plus").is_null
    assert InclusionSpec(h_value=0.0, sign_class="A_minus").is_null


def test_inclusion_must_stay_below_interface():
    with pytest.raises(ConfigurationError):
        parse_config("inclusion:\n  shape:\n    kind: ball\n    center: [0.0, 0.0, -0.2]\n    radius: 0.5\n")


def test_ellipticity_inside_inclusion():
    with pytest.raises(ValueError):
        ExperimentConfig(inclusion=InclusionSpec(h_value=-1.5))


def test_grid_needs_room_between_sponges():
    with pytest.raises(ValueError):
        GridConfig(cells=30, sponge_cells=16)


def test_hash_ignores_logging_and_threads(coaxial):
    other = coaxial.model_copy(update={"threads": 8})
    assert config_hash(other) == config_hash(coaxial)
    assert len(config_hash(coaxial)) == 16


def test_hash_changes_with_physics(coaxial):
    other = coaxial.model_copy(update={"seed": 1})
    assert config_hash(other) != config_hash(coaxial)


def test_runtime_settings_from_environment(monkeypatch):
    monkeypatch.setenv("ENCLAB_THREADS", "3")
    monkeypatch.setenv("ENCLAB_LOG_LEVEL", "DEBUG")
    settings = RuntimeSettings()
    assert settings.threads == 3
    assert settings.log_level == "DEBUG"
