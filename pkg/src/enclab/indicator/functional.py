"""Indicator function I_f(tau, T) and the energy functionals that bracket it.

The indicator is computed from the difference of the perturbed and background
traces, so the matched background run cancels the stencil bias before the
Laplace transform is taken.
"""

import json
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.integrate import simpson
from scipy.special import logsumexp

from enclab.core.config import ExperimentConfig, KernelConfig, MediumSpec, TauLadderConfig
from enclab.core.exceptions import ArtifactError, ConfigMismatchError, DomainError
from enclab.core.logger import get_logger
from enclab.core.models import IndicatorCurve, IndicatorRow, KernelValue, WaveRun
from enclab.kernel.green import interface_field, phi_tau_asymptotic, window_radii
from enclab.optics.geometry import snell_point, snell_points
from enclab.optics.shapes import ball_from_spec, build_shape
from enclab.solver.wave import laplace_region, laplace_trace


logger = get_logger("indicator")

EPS = float(np.finfo(float).eps)

PathLike = Union[str, Path]


def tau_ladder(cfg: TauLadderConfig, dt: Optional[float] = None) -> np.ndarray:
    """Geometric ladder tau0 * ratio**j, capped so that tau * dt <= 1/samples_per_efold."""
    taus = cfg.tau0 * cfg.ratio ** np.arange(cfg.count)
    if dt is not None:
        cap = 1.0 / (cfg.samples_per_efold * dt)
        kept = taus[taus <= cap]
        if len(kept) < len(taus):
            logger.warning(
                f"tau ladder capped at {cap:.4g} (dt={dt:.4g}); "
                f"dropped {len(taus) - len(kept)} of {len(taus)} values"
            )
        taus = kept
    if len(taus) < 2:
        raise DomainError("tau ladder has fewer than two admissible values; refine dt or lower tau0")
    return taus


def check_compatible(perturbed: WaveRun, background: WaveRun) -> None:
    """Both runs must share grid, time step, duration and source sampling.

    Raises:
        ConfigMismatchError: naming the first field that differs
    """
    checks = [
        ("spacing", perturbed.spacing == background.spacing),
        ("dt", perturbed.dt == background.dt),
        ("duration", perturbed.duration == background.duration),
        ("n_steps", perturbed.n_steps == background.n_steps),
        ("nodes", perturbed.nodes.shape == background.nodes.shape
         and np.array_equal(perturbed.nodes, background.nodes)),
        ("source", np.array_equal(perturbed.source, background.source)),
        ("config_hash", perturbed.config_hash == background.config_hash),
    ]
    for name, ok in checks:
        if not ok:
            raise ConfigMismatchError(f"perturbed and background runs differ in {name}")


def _difference_signal(perturbed: WaveRun, background: WaveRun, mask: Optional[np.ndarray]) -> np.ndarray:
    fw = perturbed.source * perturbed.weights
    if mask is not None:
        fw = np.where(mask, fw, 0.0)
    return (perturbed.traces - background.traces) @ fw


def indicator_value(
    perturbed: WaveRun,
    background: WaveRun,
    tau: float,
    mask: Optional[np.ndarray] = None,
) -> float:
    """I_f(tau, T) = int_B f (w - v) dx.

    Args:
        perturbed: Run with the inclusion
        background: Matched run without it
        tau: Laplace parameter
        mask: Optional subset of B nodes (restricts f)
    """
    check_compatible(perturbed, background)
    if not tau > 0:
        raise DomainError("tau must be positive")
    t = perturbed.times
    signal = _difference_signal(perturbed, background, mask)
    return float(simpson(np.exp(-tau * t) * signal, x=t))


def noise_floor(perturbed: WaveRun, background: WaveRun, tau: float, factor: float) -> float:
    """Accumulated round-off in the difference traces, Laplace-weighted.

    Before the discrete domain of influence of D reaches B the two runs are
    bitwise identical, so only samples from the first nonzero difference on
    contribute.
    """
    t = perturbed.times
    diff = _difference_signal(perturbed, background, None)
    nonzero = np.nonzero(diff != 0.0)[0]
    if len(nonzero) == 0:
        return 0.0
    start = nonzero[0]
    fw = np.abs(perturbed.source * perturbed.weights)
    magnitude = (np.abs(perturbed.traces) + np.abs(background.traces)) @ fw
    magnitude[:start] = 0.0
    integral = float(simpson(np.exp(-tau * t) * magnitude, x=t))
    return factor * EPS * math.sqrt(perturbed.n_steps) * integral


def _gradients(field: np.ndarray, spacing: float) -> List[np.ndarray]:
    return np.gradient(field, spacing, edge_order=2)


def quadratic_bounds(
    field: np.ndarray,
    spacing: float,
    inside: np.ndarray,
    gamma0: np.ndarray,
    h_diag: Sequence[float],
) -> Tuple[float, float]:
    """Midpoint quadrature over D of the two quadratic forms bracketing I_f.

    lower = int_D (gamma0 I - gamma) grad v . grad v
    upper = int_D gamma0 (gamma0 I - gamma) gamma^{-1} grad v . grad v

    with gamma = gamma0 I + diag(h) on D.
    """
    grads = _gradients(field, spacing)
    cell = spacing ** 3
    lower = 0.0
    upper = 0.0
    for j, g in enumerate(grads):
        h = float(h_diag[j])
        if h == 0.0:
            continue
        sq = g[inside] ** 2
        g0 = gamma0[inside]
        lower += float(np.sum(-h * sq)) * cell
        upper += float(np.sum(g0 * (-h) / (g0 + h) * sq)) * cell
    return lower, upper


def field_energy(run: WaveRun, tau: float) -> float:
    """int_D |grad v|^2 from the region history of a background run."""
    if run.region is None:
        raise DomainError("run carries no region history")
    field = laplace_region(run, tau)
    grads = _gradients(field, run.region.spacing)
    inside = run.region.inside
    return float(sum(np.sum(g[inside] ** 2) for g in grads)) * run.region.spacing ** 3


def _source_kernel(ys: np.ndarray, fw: np.ndarray, tau: float, m: MediumSpec):
    """z' -> sum_q f_q w_q exp(-tau |z~' - y_q|/c_+)/|z~' - y_q| as (mantissa, exponent time)."""
    def upper(zs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        diff = zs[:, None, :] - ys[None, :, :2]
        r = np.sqrt(np.sum(diff * diff, axis=2) + ys[None, :, 2] ** 2)
        times = r / m.speed_plus
        base = np.min(times, axis=1)
        mant = np.sum(fw[None, :] * np.exp(-tau * (times - base[:, None])) / r, axis=1)
        return mant, base
    return upper


def _gradient_quadrature(
    x: np.ndarray,
    p: np.ndarray,
    ys: np.ndarray,
    fw: np.ndarray,
    tau: float,
    m: MediumSpec,
    cfg: KernelConfig,
) -> Tuple[np.ndarray, float]:
    sol = snell_point(x, p, m)
    z_nodes, _ = snell_points(np.broadcast_to(x, ys.shape), ys, m)
    spread = float(np.max(np.linalg.norm(z_nodes - sol.z_prime, axis=1)))
    r_in, r_out = window_radii(sol.lambda_min, tau, m, cfg)
    kv = interface_field(
        x, tau, m, _source_kernel(ys, fw, tau, m), sol.z_prime,
        r_in + spread, r_out + spread, k=1, cfg=cfg,
    )
    return kv.grad, kv.scale


def _gradient_asymptotic(
    x: np.ndarray,
    ys: np.ndarray,
    fw: np.ndarray,
    tau: float,
    m: MediumSpec,
) -> Tuple[np.ndarray, float]:
    values = [phi_tau_asymptotic(x, y, tau, m, k=1) for y in ys]
    base = min(v.scale for v in values)
    grad = np.zeros(3)
    for v, weight in zip(values, fw):
        grad += weight * v.grad * math.exp(-tau * (v.scale - base))
    return grad, base


def gradient_energy(
    config: ExperimentConfig,
    tau: float,
    route: Optional[str] = None,
    threads: int = 1,
    amplitude_scale: float = 1.0,
) -> KernelValue:
    """int_D |grad v|^2 with v(x) = int_B Phi_tau(x, y) f(y) dy (continuum kernel route).

    Args:
        config: Experiment configuration (medium, D, B, f, kernel controls)
        tau: Laplace parameter
        route: ``quadrature`` (phi_tau z'-integral) or ``asymptotic``
            (leading-order kernel); defaults to ``kernel.energy_kernel``
        threads: joblib workers over D nodes
        amplitude_scale: Multiplier on f

    Returns:
        KernelValue with the energy as mantissa * exp(-tau * scale)
    """
    route = route or config.kernel.energy_kernel
    m = config.medium
    shape = build_shape(config.inclusion.shape)
    ball = ball_from_spec(config.source.ball)
    n = config.kernel.energy_nodes
    xs, wx = shape.quadrature(n)
    ys, wy = ball.quadrature(n)
    f = amplitude_scale * config.source.amplitude * ball.bump(ys, config.source.plateau)
    keep = f != 0.0
    ys, fw = ys[keep], (f * wy)[keep]

    if route == "quadrature":
        results = Parallel(n_jobs=threads)(
            delayed(_gradient_quadrature)(x, ball.center, ys, fw, tau, m, config.kernel) for x in xs
        )
    elif route == "asymptotic":
        results = Parallel(n_jobs=threads)(
            delayed(_gradient_asymptotic)(x, ys, fw, tau, m) for x in xs
        )
    else:
        raise DomainError(f"unknown energy route: {route}")

    logs = np.array([
        math.log(w) + 2.0 * (math.log(np.linalg.norm(g)) - tau * s) if np.linalg.norm(g) > 0 else -math.inf
        for (g, s), w in zip(results, wx)
    ])
    log_energy = float(logsumexp(logs))
    scale = -log_energy / tau
    logger.debug(f"gradient energy ({route}) at tau={tau:g}: log = {log_energy:.6f}")
    return KernelValue(tau=tau, phi=1.0, scale=scale, nodes=len(xs) * len(ys))


def indicator_curve(
    perturbed: WaveRun,
    background: WaveRun,
    taus: Sequence[float],
    l_reference: float,
    censor_factor: float = 1.0,
    sign_class: str = "",
) -> IndicatorCurve:
    """Indicator table over a tau ladder with bounds and censoring flags."""
    check_compatible(perturbed, background)
    taus = np.asarray(taus, dtype=float)
    if np.any(np.diff(taus) <= 0):
        raise DomainError("tau values must be strictly increasing")
    T = perturbed.duration
    rows: List[IndicatorRow] = []
    for tau in taus:
        value = indicator_value(perturbed, background, tau)
        floor = noise_floor(perturbed, background, tau, censor_factor)
        w = laplace_trace(perturbed, tau)
        v = laplace_trace(background, tau)
        fw = perturbed.source * perturbed.weights
        lower = upper = math.nan
        if background.region is not None:
            lower, upper = quadratic_bounds(
                laplace_region(background, tau),
                background.region.spacing,
                background.region.inside,
                background.region.gamma0,
                background.region.h_diag,
            )
        censored = not abs(value) > floor
        if value != 0.0:
            log_abs = math.log(abs(value))
            scaled = math.copysign(math.exp(min(log_abs + tau * T, 700.0)), value)
            rate = -log_abs / tau
        else:
            scaled, rate = 0.0, math.inf
        rows.append(IndicatorRow(
            tau=float(tau),
            value=value,
            scaled=scaled,
            rate=rate,
            censored=censored,
            floor=floor,
            w_energy=float(fw @ w),
            v_energy=float(fw @ v),
            lower=lower,
            upper=upper,
        ))
    n_cens = sum(r.censored for r in rows)
    logger.info(f"indicator curve: {len(rows)} taus, {n_cens} censored, T={T:.4g}")
    return IndicatorCurve(
        rows=rows,
        duration=T,
        l_reference=l_reference,
        config_hash=perturbed.config_hash,
        sign_class=sign_class,
    )


def fit_slack(curve: IndicatorCurve) -> Tuple[float, float]:
    """Smallest C with lower - C e^{-tau T}/tau <= I_f <= upper + C e^{-tau T}/tau, and the violation decay rate.

    Returns:
        (C, rate) where rate is -d log(violation)/d tau (inf when nothing is violated)
    """
    T = curve.duration
    taus, logs, log_c = [], [], []
    for r in curve.uncensored():
        if math.isnan(r.lower):
            continue
        violation = max(r.lower - r.value, r.value - r.upper, 0.0)
        if violation > 0.0:
            taus.append(r.tau)
            logs.append(math.log(violation))
            log_c.append(math.log(violation) + math.log(r.tau) + r.tau * T)
    if not taus:
        return 0.0, math.inf
    c = math.exp(min(max(log_c), 700.0))
    if len(taus) < 2:
        return c, math.inf
    slope = np.polyfit(taus, logs, 1)[0]
    return c, float(-slope)


def curve_frame(curve: IndicatorCurve) -> pd.DataFrame:
    return pd.DataFrame({
        "config_hash": curve.config_hash,
        "tau": [r.tau for r in curve.rows],
        "indicator": [r.value for r in curve.rows],
        "scaled": [r.scaled for r in curve.rows],
        "rate": [r.rate for r in curve.rows],
        "censored": [r.censored for r in curve.rows],
        "floor": [r.floor for r in curve.rows],
        "w_energy": [r.w_energy for r in curve.rows],
        "v_energy": [r.v_energy for r in curve.rows],
        "lower": [r.lower for r in curve.rows],
        "upper": [r.upper for r in curve.rows],
    })


def write_curve(curve: IndicatorCurve, path: PathLike, fit_window: Optional[float] = None) -> Path:
    """CSV table plus a JSON sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    curve_frame(curve).to_csv(path, index=False, float_format="%.17g")
    sidecar = {
        "config_hash": curve.config_hash,
        "duration": curve.duration,
        "l_reference": curve.l_reference,
        "sign_class": curve.sign_class,
        "fit_window": fit_window,
        "metadata": curve.metadata,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2))
    return path


def read_curve(path: PathLike, expected_hash: Optional[str] = None) -> IndicatorCurve:
    """Load a curve written by :func:`write_curve`.

    Raises:
        ArtifactError: if the CSV, the sidecar and ``expected_hash`` disagree
    """
    path = Path(path)
    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        raise ArtifactError(f"{path}: missing sidecar {sidecar_path.name}")
    sidecar = json.loads(sidecar_path.read_text())
    frame = pd.read_csv(path, dtype={"config_hash": str})
    hashes = set(frame["config_hash"])
    digest = sidecar["config_hash"]
    if hashes and hashes != {digest}:
        raise ArtifactError(f"{path}: rows carry hashes {sorted(hashes)}, sidecar has {digest}")
    if expected_hash is not None and digest != expected_hash:
        raise ArtifactError(f"{path}: config hash {digest} does not match {expected_hash}")
    rows = [
        IndicatorRow(
            tau=float(r.tau),
            value=float(r.indicator),
            scaled=float(r.scaled),
            rate=float(r.rate),
            censored=bool(r.censored),
            floor=float(r.floor),
            w_energy=float(r.w_energy),
            v_energy=float(r.v_energy),
            lower=float(r.lower),
            upper=float(r.upper),
        )
        for r in frame.itertuples(index=False)
    ]
    return IndicatorCurve(
        rows=rows,
        duration=float(sidecar["duration"]),
        l_reference=float(sidecar["l_reference"]),
        config_hash=digest,
        sign_class=sidecar.get("sign_class", ""),
        metadata=sidecar.get("metadata", {}),
    )
