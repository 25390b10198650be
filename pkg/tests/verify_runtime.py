"""Runtime verification script for the enclosure laboratory."""

import math
import sys
from pathlib import Path

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from enclab.core.config import ExperimentConfig, GridConfig, load_config
from enclab.core.logger import setup_logger, get_logger
from enclab.core.models import MediumTag
from enclab.indicator.functional import indicator_curve, tau_ladder
from enclab.kernel.green import phi_tau, phi_tau_asymptotic
from enclab.optics.geometry import optical_distance_sets
from enclab.optics.shapes import ball_from_spec, build_shape
from enclab.reconstruction.fit import classify_contrast
from enclab.reconstruction.region import emit_region
from enclab.solver.wave import WaveSolver


def verify_config():
    """Verify configuration loading."""
    print("Testing configuration loading...")

    try:
        config = load_config('config.yaml')
        print("✓ Configuration loaded successfully")
        print(f"  - Name: {config.name}")
        print(f"  - gamma_plus / gamma_minus: {config.medium.gamma_plus} / {config.medium.gamma_minus}")
        print(f"  - Critical angle: {math.degrees(config.medium.theta0):.2f} deg")
        print(f"  - Inclusion: {config.inclusion.shape.kind}, h = {config.inclusion.h_diag}")
        print(f"  - Grid cells: {config.grid.cells}, sponge {config.grid.sponge_cells}")
        return config
    except FileNotFoundError:
        print("✗ Configuration file not found")
        return None
    except Exception as e:
        print(f"✗ Configuration error: {e}")
        return None


def verify_logging(config):
    """Verify logging setup."""
    print("\nTesting logging setup...")

    try:
        setup_logger(level=config.logging.level)
        logger = get_logger()
        logger.info("✓ Logging initialized successfully")
        logger.debug("Debug message test")
        get_logger("verify").info("Child logger message test")
        return True
    except Exception as e:
        print(f"✗ Logging error: {e}")
        return False


def verify_optics(config):
    """Verify the optical distance of the configured pair of sets."""
    print("\nTesting optical distance...")

    try:
        ref = optical_distance_sets(
            build_shape(config.inclusion.shape),
            ball_from_spec(config.source.ball),
            config.medium,
            multistarts=8,
        )
        print(f"✓ l(D,B) = {ref.l_value:.8f}")
        print(f"  - Attained at x* = {np.round(ref.x_star, 4)}, y* = {np.round(ref.y_star, 4)}")
        return ref
    except Exception as e:
        print(f"✗ Optics error: {e}")
        return None


def verify_kernel(config):
    """Verify the two-layer kernel against its leading-order term."""
    print("\nTesting two-layer kernel...")

    try:
        x, y = np.array([0.0, 0.0, -1.0]), np.array([0.0, 0.0, 2.0])
        for tau in (20.0, 80.0):
            value = phi_tau(x, y, tau, config.medium, cfg=config.kernel)
            leading = phi_tau_asymptotic(x, y, tau, config.medium)
            ratio = math.exp(value.log_abs() - leading.log_abs())
            print(f"✓ tau = {tau:g}: Phi / leading term = {ratio:.4f} ({value.nodes} nodes)")
        return True
    except Exception as e:
        print(f"✗ Kernel error: {e}")
        return False


def verify_solver(config):
    """Verify a coarse pair of wave runs and the indicator built on them."""
    print("\nTesting wave solver and indicator...")

    try:
        coarse = config.model_copy(update={"grid": GridConfig(cells=32, sponge_cells=4)})
        solver = WaveSolver(coarse, duration=1.0, config_hash="0123456789abcdef")
        perturbed = solver.run(MediumTag.PERTURBED)
        background = solver.run(MediumTag.BACKGROUND)
        print(f"✓ Runs finished: {solver.n_steps} steps, dt = {solver.dt:.4g}, {perturbed.n_nodes} trace nodes")

        taus = tau_ladder(coarse.tau_ladder, perturbed.dt)
        curve = indicator_curve(perturbed, background, taus, l_reference=2.5)
        print(f"✓ Indicator curve: {len(curve.rows)} taus, {len(curve.uncensored())} uncensored")
        print(f"  - Contrast: {classify_contrast(curve).value}")
        return True
    except Exception as e:
        print(f"✗ Solver error: {e}")
        return False


def verify_region(config, ref):
    """Verify the region estimate with the reference distance."""
    print("\nTesting region estimate...")

    try:
        result = emit_region(ref.l_value, config, samples=500)
        print(f"✓ Region: {result.member_fraction:.1%} of probes, D containment {result.containment:.1%}")
        return result.containment == 1.0
    except Exception as e:
        print(f"✗ Region error: {e}")
        return False


def main():
    """Run all verification tests."""
    print("=" * 60)
    print("ENCLAB RUNTIME VERIFICATION")
    print("=" * 60)

    results = []

    # Test 1: Configuration
    config = verify_config()
    results.append(('Configuration', config is not None))

    if not config:
        print("\n✗ Cannot continue without valid configuration")
        return False

    # Test 2: Logging
    results.append(('Logging', verify_logging(config)))

    # Test 3: Optics
    ref = verify_optics(config)
    results.append(('Optical distance', ref is not None))

    # Test 4: Kernel
    results.append(('Two-layer kernel', verify_kernel(config)))

    # Test 5: Solver and indicator
    results.append(('Wave solver', verify_solver(config)))

    # Test 6: Region
    results.append(('Region estimate', ref is not None and verify_region(config, ref)))

    # Print summary
    print("\n" + "=" * 60)
    print("VERIFICATION SUMMARY")
    print("=" * 60)

    for test_name, passed in results:
        status = "✓ PASS" if passed else "✗ FAIL"
        print(f"{status}: {test_name}")

    all_passed = all(result for _, result in results)

    print("=" * 60)
    if all_passed:
        print("✓ ALL TESTS PASSED")
        print("\nTo run the full pipeline:")
        print("  python -m enclab.main reconstruct --config config.yaml")
        print("\nTo run the acceptance checks:")
        print("  python -m enclab.main verify --config config.yaml")
    else:
        print("✗ SOME TESTS FAILED")
        print("Please review the errors above.")

    print("=" * 60)

    return all_passed


if __name__ == "__main__":
    sys.exit(0 if main() else 1)
