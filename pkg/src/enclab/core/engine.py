"""Experiment engine: runs the pipeline and the commands built on it."""

import dataclasses
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from enclab.core.config import ExperimentConfig, InclusionSpec, MediumSpec, config_hash, load_config
from enclab.core.exceptions import EnclabError
from enclab.core.logger import get_logger, log_banner
from enclab.core.models import (
    CheckResult, Contrast, FitReport, IndicatorCurve, MediumTag, OpticalDistance, WaveRun,
)
from enclab.core.registry import get_registry_manager
from enclab.indicator.functional import indicator_curve, read_curve, tau_ladder, write_curve
from enclab.kernel.green import evaluate_batch, free_kernel, phi_tau, phi_tau_asymptotic
from enclab.optics.geometry import linear_growth_constant, optical_distance_sets, snell_point
from enclab.optics.shapes import ball_from_spec, build_shape
from enclab.reconstruction.fit import classify_contrast, decay_rate_fit, refit_consistency, write_fit_report
from enclab.reconstruction.region import emit_region
from enclab.solver.traces import read_history, read_traces, write_history, write_trace_summary, write_traces
from enclab.solver.wave import WaveSolver
from enclab.validation.checks import kernel_geometries, run_checks


commands = get_registry_manager().create_registry("commands")

# checks run by --check after each command
COMMAND_CHECKS: Dict[str, List[str]] = {
    "optics": ["fermat_oracle", "modified_path_scan"],
    "green": ["asymptotic_ratio", "supercritical_rate"],
    "simulate": [],
    "indicator": ["energy_rate", "energy_bracket"],
    "reconstruct": ["end_to_end"],
    "verify": [],
    "sweep": [],
}


def background_hash(config: ExperimentConfig) -> str:
    """Hash of everything the background run depends on (h removed)."""
    null = InclusionSpec(shape=config.inclusion.shape, h_value=0.0)
    return config_hash(config.model_copy(update={"inclusion": null}))


class ExperimentEngine:
    """Runs geometry, kernel, simulation, indicator and reconstruction for one config."""

    def __init__(self, config: ExperimentConfig, out_dir: Optional[str] = None, threads: Optional[int] = None):
        """Initialize the engine.

        Args:
            config: Validated experiment configuration
            out_dir: Artifact directory (defaults to ``output.directory``)
            threads: joblib workers (defaults to ``config.threads``)
        """
        self.config = config
        self.config_hash = config_hash(config)
        self.out_dir = Path(out_dir or config.output.directory)
        self.threads = threads or config.threads
        self.logger = get_logger("engine")

        # State
        self._reference: Optional[OpticalDistance] = None
        self._runs: Dict[Tuple[str, float], Tuple[WaveRun, WaveRun]] = {}
        self._backgrounds: Dict[Tuple[str, float], WaveRun] = {}
        self.results: Dict[str, Any] = {}
        self.checks: List[CheckResult] = []

    @classmethod
    def from_file(cls, path: str, **kwargs) -> "ExperimentEngine":
        return cls(load_config(path), **kwargs)

    @property
    def failed_checks(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def rng(self, stream: int = 0) -> np.random.Generator:
        """Seeded generator; independent streams per consumer."""
        return np.random.default_rng([self.config.seed, stream])

    def path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    # Pipeline

    def reference(self) -> OpticalDistance:
        """l(D, B) from the geometry module (cached)."""
        if self._reference is None:
            self._reference = optical_distance_sets(
                build_shape(self.config.inclusion.shape),
                ball_from_spec(self.config.source.ball),
                self.config.medium,
                multistarts=self.config.optics.multistarts,
                rel_tol=self.config.optics.rel_tol,
                rng=self.rng(1),
            )
        return self._reference

    def duration(self, factor: Optional[float] = None) -> float:
        """Observation time: explicit grid.duration, else factor * 2 l(D, B)."""
        if factor is None and self.config.grid.duration is not None:
            return self.config.grid.duration
        factor = factor if factor is not None else self.config.grid.duration_factor
        return factor * 2.0 * self.reference().l_value

    def variant(self, h_value: float, sign_class: str) -> ExperimentConfig:
        """Same experiment with another perturbation."""
        inclusion = InclusionSpec(shape=self.config.inclusion.shape, h_value=h_value, sign_class=sign_class)
        return self.config.model_copy(update={"inclusion": inclusion})

    def simulate(
        self,
        duration: Optional[float] = None,
        config: Optional[ExperimentConfig] = None,
    ) -> Tuple[WaveRun, WaveRun]:
        """Perturbed and background runs sharing one solver layout (cached per config and T)."""
        config = config or self.config
        T = duration if duration is not None else self.duration()
        digest = config_hash(config)
        key = (digest, T)
        if key in self._runs:
            return self._runs[key]

        interface = self.reference().z_prime
        solver = WaveSolver(config, T, interface_point=interface, config_hash=digest)
        bg_key = (background_hash(config), T)
        perturbed = solver.run(MediumTag.PERTURBED)
        cached = self._backgrounds.get(bg_key)
        if cached is not None and cached.dt == solver.dt and cached.spacing == solver.layout.spacing:
            background = self._rebind(cached, config, digest)
        else:
            background = solver.run(MediumTag.BACKGROUND)
            self._backgrounds[bg_key] = background
        self._runs[key] = (perturbed, background)
        return perturbed, background

    @staticmethod
    def _rebind(run: WaveRun, config: ExperimentConfig, digest: str) -> WaveRun:
        """Background run relabelled for a config that differs only in h."""
        region = run.region
        if region is not None:
            region = dataclasses.replace(region, h_diag=tuple(config.inclusion.h_diag))
        return dataclasses.replace(run, config_hash=digest, region=region)

    def curve(
        self,
        perturbed: WaveRun,
        background: WaveRun,
        sign_class: Optional[str] = None,
    ) -> IndicatorCurve:
        taus = tau_ladder(self.config.tau_ladder, perturbed.dt)
        curve = indicator_curve(
            perturbed, background, taus,
            l_reference=self.reference().l_value,
            censor_factor=self.config.fit.censor_factor,
            sign_class=sign_class or self.config.inclusion.sign_class,
        )
        curve.metadata.update({"name": self.config.name, "dt": perturbed.dt, "spacing": perturbed.spacing})
        return curve

    def fit(self, curve: IndicatorCurve) -> Tuple[FitReport, Contrast]:
        report = decay_rate_fit(curve, cfg=self.config.fit)
        return report, classify_contrast(curve, report.window, report.l_hat)

    # Commands

    def run_command(self, name: str, **options) -> Dict[str, Any]:
        """Run a registered command; with ``check=True`` also run its acceptance checks."""
        self.logger.info(f"command '{name}' ({self.config.name}, hash {self.config_hash})")
        result = commands.create(name, self, **options)
        self.results[name] = result
        if options.get("check") and name != "verify":
            self.run_checks(COMMAND_CHECKS.get(name, []))
        return result

    def run_checks(self, names: Optional[Sequence[str]] = None) -> List[CheckResult]:
        results = run_checks(self, names)
        self.checks.extend(results)
        frame = pd.DataFrame([
            {"config_hash": self.config_hash, "check": c.name, "passed": c.passed,
             "elapsed": c.elapsed, "detail": c.detail}
            for c in self.checks
        ])
        frame.to_csv(self.path("checks.csv"), index=False, float_format="%.17g")
        log_banner(
            self.logger,
            [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<20} {c.detail}" for c in results],
            title=f"ACCEPTANCE CHECKS ({len(results) - sum(c.passed for c in results)} failed)",
        )
        return results

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        payload = {"config_hash": self.config_hash, **payload}
        target = self.path(name)
        target.write_text(json.dumps(payload, sort_keys=True, indent=2, default=_jsonable))
        return target


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value)!r}")


@commands.register("optics")
def cmd_optics(engine: ExperimentEngine, **options) -> Dict[str, Any]:
    """l(D, B), the attaining pair, linear-growth constants and sample refraction points."""
    cfg = engine.config
    m = cfg.medium
    ref = engine.reference()
    shape = build_shape(cfg.inclusion.shape)
    ball = ball_from_spec(cfg.source.ball)
    delta1 = 1.0 if not m.homogeneous else 0.9
    c0, delta0 = linear_growth_constant(shape, ball, m, delta1, samples=2000, rng=engine.rng(2))

    rows = []
    rng = engine.rng(3)
    xs = shape.sample_interior(16, rng)
    ys = ball.sample_interior(16, rng)
    for x, y in zip(xs, ys):
        sol = snell_point(x, y, m)
        rows.append({
            "config_hash": engine.config_hash,
            "x1": x[0], "x2": x[1], "x3": x[2], "y1": y[0], "y2": y[1], "y3": y[2],
            "z1": sol.z_prime[0], "z2": sol.z_prime[1],
            "l": sol.l_value, "theta_minus": sol.theta_minus, "theta_plus": sol.theta_plus,
            "det_h": sol.det_h, "snell_residual": sol.snell_residual,
        })
    pd.DataFrame(rows).to_csv(engine.path("optics.csv"), index=False, float_format="%.17g")
    summary = {
        "l_DB": ref.l_value,
        "x_star": ref.x_star,
        "y_star": ref.y_star,
        "z_star": ref.z_prime,
        "c0": c0,
        "delta0": delta0,
        "delta1": delta1,
    }
    if m.homogeneous:
        summary["euclidean_distance"] = ref.l_value * m.speed_minus
    engine.write_json("optics.json", summary)
    engine.logger.info(f"l(D,B) = {ref.l_value:.8f}, c0 = {c0:.4g}, delta0 = {delta0:.4g}")
    return summary


@commands.register("green")
def cmd_green(engine: ExperimentEngine, **options) -> Dict[str, Any]:
    """Ratio table phi_tau / asymptotic over the kernel tau ladder, plus a homogeneous sanity row."""
    cfg = engine.config
    m = cfg.medium
    geometries = kernel_geometries(m)
    rows = [(x, y, tau) for x, y in geometries.values() for tau in cfg.kernel.taus]
    frame = evaluate_batch(rows, m, cfg.kernel, threads=engine.threads, k=1)
    frame.insert(0, "geometry", [name for name in geometries for _ in cfg.kernel.taus])
    ratios = []
    for (x, y, tau), log_phi in zip(rows, frame["log_abs_phi"]):
        asym = phi_tau_asymptotic(x, y, tau, m)
        ratios.append(math.exp(log_phi - asym.log_abs()) if np.isfinite(log_phi) else math.nan)
    frame["ratio"] = ratios
    frame.insert(0, "config_hash", engine.config_hash)

    x, y = geometries["axial"]
    tau = cfg.kernel.taus[0]
    homogeneous = MediumSpec.homogeneous_medium(m.gamma_minus)
    sanity = math.exp(phi_tau(x, y, tau, homogeneous, cfg=cfg.kernel).log_abs()
                      - free_kernel(x, y, tau, m.gamma_minus).log_abs())
    frame.to_csv(engine.path("green.csv"), index=False, float_format="%.17g")
    summary = {"homogeneous_ratio": sanity, "failed_rows": int((frame["status"] != "ok").sum())}
    engine.write_json("green.json", summary)
    engine.logger.info(f"green table: {len(frame)} rows, homogeneous ratio {sanity:.6f}")
    return summary


def _artifact_names(tag: MediumTag) -> Tuple[str, str, str]:
    return f"{tag.value}.trc", f"{tag.value}_summary.csv", f"{tag.value}_history.npz"


@commands.register("simulate")
def cmd_simulate(engine: ExperimentEngine, **options) -> Dict[str, Any]:
    """Perturbed and background runs written as trace files, summaries and histories."""
    perturbed, background = engine.simulate()
    for run in (perturbed, background):
        trc, summary, history = _artifact_names(run.tag)
        write_traces(run, engine.path(trc))
        write_trace_summary(run, engine.path(summary))
        write_history(run, engine.path(history))
    return {
        "duration": perturbed.duration,
        "dt": perturbed.dt,
        "spacing": perturbed.spacing,
        "n_steps": perturbed.n_steps,
        "n_nodes": perturbed.n_nodes,
    }


def _load_runs(engine: ExperimentEngine) -> Tuple[WaveRun, WaveRun]:
    runs = []
    for tag in (MediumTag.PERTURBED, MediumTag.BACKGROUND):
        trc, _, history = _artifact_names(tag)
        run = read_traces(engine.path(trc), tag=tag, expected_hash=engine.config_hash)
        runs.append(read_history(run, engine.path(history)))
    return runs[0], runs[1]


@commands.register("indicator")
def cmd_indicator(engine: ExperimentEngine, **options) -> Dict[str, Any]:
    """Indicator curve from stored runs (or fresh ones when none are on disk)."""
    if engine.path(_artifact_names(MediumTag.PERTURBED)[0]).exists():
        perturbed, background = _load_runs(engine)
    else:
        perturbed, background = engine.simulate()
    curve = engine.curve(perturbed, background)
    write_curve(curve, engine.path("indicator.csv"), fit_window=engine.config.fit.window)
    return {"rows": len(curve.rows), "censored": sum(r.censored for r in curve.rows)}


@commands.register("reconstruct")
def cmd_reconstruct(engine: ExperimentEngine, **options) -> Dict[str, Any]:
    """Decay-rate fit, contrast class and region estimate."""
    path = engine.path("indicator.csv")
    if path.exists():
        curve = read_curve(path, expected_hash=engine.config_hash)
    else:
        curve = engine.curve(*engine.simulate())
        write_curve(curve, path, fit_window=engine.config.fit.window)
    report, contrast = engine.fit(curve)
    extra: Dict[str, Any] = {"l_reference": curve.l_reference}
    try:
        _, _, consistent = refit_consistency(curve, engine.config.fit)
        extra["refit_consistent"] = consistent
    except EnclabError as e:
        extra["refit_consistent"] = None
        engine.logger.warning(f"refit consistency skipped: {e}")
    write_fit_report(report, engine.path("fit.json"), contrast, extra)
    region = emit_region(
        report.l_hat, engine.config, out_dir=engine.out_dir,
        threads=engine.threads, config_hash=engine.config_hash,
    )
    return {
        "l_hat": report.l_hat,
        "stderr": report.stderr,
        "regime_violation": report.regime_violation,
        "contrast": contrast.value,
        "region_containment": region.containment,
    }


@commands.register("verify")
def cmd_verify(engine: ExperimentEngine, only: Optional[Sequence[str]] = None, **options) -> Dict[str, Any]:
    """Run the acceptance checks (all, or those named in ``only``)."""
    results = engine.run_checks(only)
    return {c.name: c.passed for c in results}


def _sweep_one(path: str, out_root: str, threads: int) -> Dict[str, Any]:
    engine = ExperimentEngine.from_file(path, threads=threads)
    engine.out_dir = Path(out_root) / engine.config.name
    try:
        summary = cmd_reconstruct(engine)
        return {"config": path, "name": engine.config.name, "config_hash": engine.config_hash,
                "status": "ok", **summary}
    except EnclabError as e:
        return {"config": path, "name": engine.config.name, "config_hash": engine.config_hash,
                "status": f"error: {e}"}


@commands.register("sweep")
def cmd_sweep(engine: ExperimentEngine, paths: Sequence[str] = (), **options) -> Dict[str, Any]:
    """Fan independent config files out over joblib workers; one summary row each."""
    if not paths:
        raise EnclabError("sweep needs at least one config path")
    records = Parallel(n_jobs=engine.threads)(
        delayed(_sweep_one)(p, str(engine.out_dir), 1) for p in paths
    )
    frame = pd.DataFrame.from_records(records)
    frame.to_csv(engine.path("sweep.csv"), index=False, float_format="%.17g")
    failed = int((frame["status"] != "ok").sum())
    engine.logger.info(f"sweep: {len(frame)} configs, {failed} failed")
    return {"configs": len(frame), "failed": failed}
