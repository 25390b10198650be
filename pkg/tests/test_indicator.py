"""Indicator values, censoring, energy bounds and the curve artifact."""

import math

import numpy as np
import pytest

from enclab.core.config import TauLadderConfig
from enclab.core.exceptions import ArtifactError, ConfigMismatchError, DomainError
from enclab.core.models import IndicatorCurve, IndicatorRow, MediumTag
from enclab.indicator.functional import (
    check_compatible, field_energy, fit_slack, gradient_energy, indicator_curve, indicator_value,
    noise_floor, quadratic_bounds, read_curve, tau_ladder, write_curve,
)
from enclab.solver.wave import WaveSolver, simulate_run


def pair(make_run, signal):
    perturbed = make_run(signal)
    background = make_run(lambda t: np.zeros_like(t), tag=MediumTag.BACKGROUND)
    return perturbed, background


class TestTauLadder:

    def test_capped_by_time_step(self):
        cfg = TauLadderConfig(tau0=1.0, ratio=2.0, count=10, samples_per_efold=8)
        np.testing.assert_allclose(tau_ladder(cfg, dt=0.01), [1.0, 2.0, 4.0, 8.0])

    def test_uncapped(self):
        cfg = TauLadderConfig(tau0=1.0, ratio=2.0, count=5)
        assert len(tau_ladder(cfg)) == 5

    def test_nothing_admissible(self):
        cfg = TauLadderConfig(tau0=1.0, ratio=2.0, count=10, samples_per_efold=8)
        with pytest.raises(DomainError):
            tau_ladder(cfg, dt=0.2)


class TestIndicatorValue:

    def test_exponential_difference(self, make_run):
        perturbed, background = pair(make_run, lambda t: np.exp(-t))
        tau = 2.0
        exact = (1.0 - math.exp(-(tau + 1.0) * perturbed.duration)) / (tau + 1.0)
        assert indicator_value(perturbed, background, tau) == pytest.approx(exact, abs=1e-10)

    def test_mask_removes_nodes(self, make_run):
        perturbed, background = pair(make_run, lambda t: np.exp(-t))
        assert indicator_value(perturbed, background, 2.0, mask=np.array([False])) == 0.0

    def test_mismatched_runs(self, make_run):
        perturbed = make_run(np.sin)
        background = make_run(np.sin, dt=2e-3, tag=MediumTag.BACKGROUND)
        with pytest.raises(ConfigMismatchError):
            check_compatible(perturbed, background)

    def test_mismatched_hash(self, make_run):
        perturbed = make_run(np.sin)
        background = make_run(np.sin, tag=MediumTag.BACKGROUND, config_hash="fedcba9876543210")
        with pytest.raises(ConfigMismatchError):
            indicator_value(perturbed, background, 1.0)

    def test_floor_vanishes_for_identical_runs(self, make_run):
        perturbed = make_run(np.sin)
        background = make_run(np.sin, tag=MediumTag.BACKGROUND)
        assert noise_floor(perturbed, background, 1.0, 1.0) == 0.0

    def test_floor_scales_with_factor(self, make_run):
        perturbed, background = pair(make_run, lambda t: np.exp(-t))
        one = noise_floor(perturbed, background, 1.0, 1.0)
        assert one > 0
        assert noise_floor(perturbed, background, 1.0, 4.0) == pytest.approx(4.0 * one)


class TestNullPerturbation:

    def test_zero_and_censored(self, null_config):
        solver = WaveSolver(null_config, duration=1.0, config_hash="0123456789abcdef")
        perturbed = solver.run(MediumTag.PERTURBED)
        background = solver.run(MediumTag.BACKGROUND)
        curve = indicator_curve(perturbed, background, [1.0, 2.0, 4.0], l_reference=2.5)
        assert all(r.value == 0.0 for r in curve.rows)
        assert all(r.censored for r in curve.rows)
        assert curve.uncensored() == []


class TestQuadraticBounds:

    @pytest.fixture
    def linear_field(self):
        axis = 0.1 * np.arange(5)
        X1, _, _ = np.meshgrid(axis, axis, axis, indexing="ij")
        return X1, np.ones((5, 5, 5), dtype=bool), np.ones((5, 5, 5))

    def test_softer_inclusion(self, linear_field):
        field, inside, gamma0 = linear_field
        lower, upper = quadratic_bounds(field, 0.1, inside, gamma0, (-0.5, -0.5, -0.5))
        assert lower == pytest.approx(0.0625)
        assert upper == pytest.approx(0.125)

    def test_stiffer_inclusion(self, linear_field):
        field, inside, gamma0 = linear_field
        lower, upper = quadratic_bounds(field, 0.1, inside, gamma0, (1.0, 1.0, 1.0))
        assert lower == pytest.approx(-0.125)
        assert upper == pytest.approx(-0.0625)

    def test_null_direction_ignored(self, linear_field):
        field, inside, gamma0 = linear_field
        lower, upper = quadratic_bounds(field, 0.1, inside, gamma0, (0.0, -0.5, -0.5))
        assert lower == pytest.approx(0.0, abs=1e-20)
        assert upper == pytest.approx(0.0, abs=1e-20)


class TestEnergies:

    def test_field_energy_positive(self, tiny_config):
        run = simulate_run(tiny_config, 1.0, tag=MediumTag.BACKGROUND)
        assert field_energy(run, 1.0) >= 0.0

    def test_field_energy_needs_history(self, make_run):
        with pytest.raises(DomainError):
            field_energy(make_run(np.sin), 1.0)

    def test_gradient_energy_is_quadratic_in_source(self, coaxial):
        one = gradient_energy(coaxial, 20.0, route="asymptotic")
        two = gradient_energy(coaxial, 20.0, route="asymptotic", amplitude_scale=2.0)
        assert two.log_abs() - one.log_abs() == pytest.approx(math.log(4.0), abs=1e-10)

    def test_gradient_energy_decay_rate(self, coaxial):
        lo = gradient_energy(coaxial, 40.0, route="asymptotic")
        hi = gradient_energy(coaxial, 80.0, route="asymptotic")
        rate = -(hi.log_abs() - lo.log_abs()) / 40.0
        assert 4.9 < rate < 6.0

    def test_unknown_route(self, coaxial):
        with pytest.raises(DomainError):
            gradient_energy(coaxial, 20.0, route="spectral")


class TestCurve:

    @pytest.fixture
    def curve(self, make_run):
        perturbed, background = pair(make_run, lambda t: np.exp(-t))
        return indicator_curve(perturbed, background, [1.0, 2.0, 4.0], l_reference=2.5, sign_class="A_minus")

    def test_rows(self, curve):
        assert [r.tau for r in curve.rows] == [1.0, 2.0, 4.0]
        assert all(not r.censored for r in curve.rows)
        assert all(math.isnan(r.lower) for r in curve.rows)
        row = curve.rows[1]
        assert row.rate == pytest.approx(-math.log(row.value) / row.tau)
        assert row.scaled == pytest.approx(row.value * math.exp(row.tau * curve.duration))

    def test_taus_must_increase(self, make_run):
        perturbed, background = pair(make_run, np.sin)
        with pytest.raises(DomainError):
            indicator_curve(perturbed, background, [2.0, 1.0], l_reference=1.0)

    def test_write_and_read(self, curve, tmp_path):
        path = write_curve(curve, tmp_path / "curve.csv", fit_window=0.4)
        back = read_curve(path, expected_hash=curve.config_hash)
        assert back.sign_class == "A_minus"
        np.testing.assert_allclose(back.values, curve.values, rtol=1e-15)

    def test_read_hash_mismatch(self, curve, tmp_path):
        path = write_curve(curve, tmp_path / "curve.csv")
        with pytest.raises(ArtifactError):
            read_curve(path, expected_hash="fedcba9876543210")

    def test_missing_sidecar(self, curve, tmp_path):
        path = write_curve(curve, tmp_path / "curve.csv")
        path.with_suffix(".json").unlink()
        with pytest.raises(ArtifactError):
            read_curve(path)


def bracket_row(tau, value, lower, upper):
    return IndicatorRow(tau=tau, value=value, scaled=value, rate=0.0, censored=False,
                        floor=0.0, w_energy=0.0, v_energy=0.0, lower=lower, upper=upper)


class TestFitSlack:

    def test_no_violation(self):
        curve = IndicatorCurve(rows=[bracket_row(1.0, 0.5, 0.1, 1.0)], duration=2.0,
                               l_reference=1.0, config_hash="0123456789abcdef")
        assert fit_slack(curve) == (0.0, math.inf)

    def test_violation_rate(self):
        T = 1.0
        rows = [bracket_row(tau, 1.0 + 3.0 * math.exp(-tau * T) / tau, 0.0, 1.0) for tau in (2.0, 4.0, 8.0)]
        curve = IndicatorCurve(rows=rows, duration=T, l_reference=1.0, config_hash="0123456789abcdef")
        c, _ = fit_slack(curve)
        assert c == pytest.approx(3.0)
