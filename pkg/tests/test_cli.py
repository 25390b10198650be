"""Command-line entry point and engine wiring."""

import json

import pytest

from enclab.core.engine import COMMAND_CHECKS, ExperimentEngine, background_hash, commands
from enclab.main import EXIT_ERROR, build_parser, main


def test_commands_are_registered():
    assert set(COMMAND_CHECKS) <= set(commands.list())


def test_parser_rejects_unknown_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["unknown"])


def test_optics_command(config_file, tmp_path):
    out = tmp_path / "out"
    code = main(["optics", "--config", str(config_file), "--out", str(out), "--seed", "3"])
    assert code == 0
    summary = json.loads((out / "optics.json").read_text())
    assert summary["l_DB"] == pytest.approx(2.5, abs=1e-6)
    assert len(summary["config_hash"]) == 16
    assert (out / "optics.csv").exists()


def test_missing_config(tmp_path):
    assert main(["optics", "--config", str(tmp_path / "absent.yaml")]) == EXIT_ERROR


def test_invalid_config(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("medium:\n  gamma_plus: 1.0\n  gamma_minus: 4.0\n")
    assert main(["optics", "--config", str(path)]) == EXIT_ERROR


def test_sweep_needs_paths(config_file, tmp_path):
    assert main(["sweep", "--config", str(config_file), "--out", str(tmp_path)]) == EXIT_ERROR


def test_environment_output_directory(config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("ENCLAB_OUT", str(tmp_path / "env_out"))
    assert main(["optics", "--config", str(config_file)]) == 0
    assert (tmp_path / "env_out" / "optics.json").exists()


class TestEngine:

    def test_background_shared_across_perturbations(self, coaxial, tmp_path):
        engine = ExperimentEngine(coaxial, out_dir=str(tmp_path))
        softer = engine.variant(-0.5, "A_minus")
        stiffer = engine.variant(0.5, "A_plus")
        assert background_hash(softer) == background_hash(stiffer)
        assert engine.config_hash != ExperimentEngine(stiffer).config_hash

    def test_explicit_duration(self, tiny_config, tmp_path):
        engine = ExperimentEngine(tiny_config, out_dir=str(tmp_path))
        assert engine.duration() == 1.0

    def test_seeded_streams(self, coaxial, tmp_path):
        a = ExperimentEngine(coaxial, out_dir=str(tmp_path)).rng(2).normal(size=4)
        b = ExperimentEngine(coaxial, out_dir=str(tmp_path)).rng(2).normal(size=4)
        assert (a == b).all()

    def test_json_carries_hash(self, coaxial, tmp_path):
        engine = ExperimentEngine(coaxial, out_dir=str(tmp_path))
        payload = json.loads(engine.write_json("x.json", {"value": 1}).read_text())
        assert payload == {"config_hash": engine.config_hash, "value": 1}
