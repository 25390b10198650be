"""Two-layer fundamental solution Phi_tau(x, y) for x below and y above the interface.

Phi_tau(x, y) = tau/(4 pi gamma_+) * int E(x, z') exp(-tau |z~' - y|/c_+)/|z~' - y| dz'

where E is the refracted part. E is evaluated on the steepest-descent contour
zeta1(sigma1) = i sqrt(1 + sigma1^2) sin(theta) + sigma1 cos(theta), which turns
the spectral integral into a Laplace-type integral with exponent
tau~ |x - z~'| f(sigma), f = sqrt(1 + sigma1^2) sqrt(1 + sigma2^2). Past the
critical angle the contour crosses the branch point i b0(zeta2) and a
branch-cut integral over w in [b0(zeta2), sin(theta)] is added.

All values are mantissas relative to exp(-tau * scale) (see KernelValue).
"""

import math
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from enclab.core.config import KernelConfig, MediumSpec
from enclab.core.exceptions import DomainError, QuadratureError
from enclab.core.logger import get_logger
from enclab.core.models import KernelValue
from enclab.kernel.quadrature import composite_rule, polar_rule, refine_until_converged, unit_rule
from enclab.optics.geometry import amplitude_e0, lower_point, snell_point, upper_point


logger = get_logger("kernel.green")

# exp(-37) ~ 1e-16 relative to the dominant term
EXPONENT_CUTOFF = 37.0
CHUNK_ELEMENTS = 1_500_000

UpperKernel = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


def transmission_coeff(rho, m: MediumSpec):
    """R(rho) = 4 c_- sqrt(a0^2 + rho^2) sqrt(1 + rho^2) / (sqrt(a0^2 + rho^2) + a0^2 sqrt(1 + rho^2))."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise DomainError("rho must be nonnegative")
    s1 = np.sqrt(m.a0 ** 2 + rho ** 2)
    s2 = np.sqrt(1.0 + rho ** 2)
    out = 4.0 * m.speed_minus * s1 * s2 / (s1 + m.a0 ** 2 * s2)
    return float(out) if out.ndim == 0 else out


def branch_point(zeta2, m: MediumSpec):
    """b0(zeta2) = sqrt((a0^2 + zeta2^2)/(1 + zeta2^2))."""
    z2 = np.asarray(zeta2, dtype=float) ** 2
    out = np.sqrt((m.a0 ** 2 + z2) / (1.0 + z2))
    return float(out) if out.ndim == 0 else out


def branch_gate(theta: float, m: MediumSpec) -> float:
    """s(theta) = (sin^2 theta - a0^2)/(1 - sin^2 theta); the cut term exists iff zeta2^2 < s."""
    s2 = math.sin(theta) ** 2
    return (s2 - m.a0 ** 2) / (1.0 - s2)


def contour_point(sigma1, theta: float):
    """zeta1(sigma1) on the steepest-descent contour."""
    s = np.asarray(sigma1, dtype=float)
    return 1j * np.sqrt(1.0 + s * s) * math.sin(theta) + s * math.cos(theta)


def p_tilde(sigma1, sigma2, theta: float, m: MediumSpec):
    """Closed form of P(zeta1(sigma1), sigma2) = sqrt(b0^2 + zeta1^2) along the contour."""
    s1 = np.asarray(sigma1, dtype=float)
    s2 = np.asarray(sigma2, dtype=float)
    arg = (
        m.a0 ** 2 - math.sin(theta) ** 2
        + s1 ** 2 * math.cos(2 * theta)
        + (1.0 - m.a0 ** 2) * s2 ** 2 / (1.0 + s2 ** 2)
        + 1j * s1 * np.sqrt(1.0 + s1 ** 2) * math.sin(2 * theta)
    )
    return np.sqrt(arg.astype(complex))


def branch_density(w, zeta2, m: MediumSpec):
    """G(w, zeta2) = a0^2 sqrt(1 - w^2) sqrt(w^2 - b0^2) / (a0^4 (1 - w^2) + |w^2 - b0^2|)."""
    w = np.asarray(w, dtype=float)
    b0sq = np.asarray(branch_point(zeta2, m)) ** 2
    gap = w * w - b0sq
    num = m.a0 ** 2 * np.sqrt(1.0 - w * w) * np.sqrt(np.maximum(gap, 0.0))
    out = num / (m.a0 ** 4 * (1.0 - w * w) + np.abs(gap))
    return float(out) if out.ndim == 0 else out


def q_functions(zeta1, zeta2, m: MediumSpec):
    """Q0, Q~0, Q1 (= Q2), Q3 at (zeta1, zeta2), principal square roots throughout.

    Raises:
        DomainError: if zeta1 lies on a branch cut +-i[b0(zeta2), inf)
    """
    z1 = np.asarray(zeta1, dtype=complex)
    z2 = np.asarray(zeta2, dtype=float)
    b0 = np.asarray(branch_point(z2, m))
    on_cut = (z1.real == 0.0) & (np.abs(z1.imag) >= b0)
    if np.any(on_cut):
        raise DomainError("zeta1 lies on a branch cut")
    root2 = np.sqrt(1.0 + z2 ** 2)
    sq1 = np.sqrt(1.0 + z1 * z1)
    P = np.sqrt(b0 ** 2 + z1 * z1)
    Q0 = 4.0 * m.speed_minus * root2 * sq1 * P / (P + m.a0 ** 2 * sq1)
    Q0t = root2 * Q0
    return Q0, Q0t, 1j * z1 * Q0t, -sq1 * Q0t


def _truncation(beta: np.ndarray) -> np.ndarray:
    """sigma bound with beta (sqrt(1 + s^2) - 1) = cutoff."""
    return np.sqrt((1.0 + EXPONENT_CUTOFF / beta) ** 2 - 1.0)


def _refracted_batch(
    x: np.ndarray,
    zs: np.ndarray,
    tau: float,
    m: MediumSpec,
    sigma_nodes: int,
    branch_nodes: int,
    gradient: bool,
) -> Dict[str, np.ndarray]:
    """Refracted part at many z' for one x.

    Returns:
        dict with ``scale`` (N,), ``smooth`` and ``branch`` (N, 4) for
        k = 0..3 (value, then d/dx1, d/dx2, d/dx3), and ``imag`` (N,)
    """
    gm, cm, a0 = m.gamma_minus, m.speed_minus, m.a0
    zs = np.atleast_2d(zs)
    N = len(zs)
    d = x[:2] - zs
    D = np.hypot(d[:, 0], d[:, 1])
    a = abs(x[2])
    R = np.hypot(D, a)
    sin_t = D / R
    cos_t = a / R
    tt = tau / cm
    beta = tt * R

    supercritical = (sin_t > a0) & (not m.homogeneous)
    cos_rel = cos_t * math.cos(m.theta0) + sin_t * a0
    scale = np.where(supercritical, R * cos_rel / cm, R / cm)

    direction = np.zeros((N, 3))
    nz = D > 0
    direction[nz, 0] = d[nz, 0] / D[nz]
    direction[nz, 1] = d[nz, 1] / D[nz]
    direction[:, 2] = -1.0

    pref0 = tau / (2.0 * (2.0 * math.pi) ** 2 * gm ** 1.5)
    pref1 = tau ** 2 / (2.0 * (2.0 * math.pi) ** 2 * gm ** 2)

    sig_max = _truncation(beta)
    gate = np.where(supercritical, (sin_t ** 2 - a0 ** 2) / np.maximum(1.0 - sin_t ** 2, 1e-300), 0.0)
    gate_root = np.sqrt(np.maximum(gate, 0.0))
    g = np.minimum(gate_root, sig_max)

    u1, w1 = unit_rule(sigma_nodes, "graded")
    s1 = np.concatenate([-u1[::-1], u1])
    ws1 = np.concatenate([w1[::-1], w1])
    u2, w2 = unit_rule(sigma_nodes, "smoothstep")

    smooth = np.zeros((N, 4))
    branch = np.zeros((N, 4))
    imag = np.zeros(N)

    per_row = len(s1) * 2 * len(u2)
    chunk = max(1, CHUNK_ELEMENTS // per_row)
    for lo in range(0, N, chunk):
        sl = slice(lo, min(N, lo + chunk))
        sm = sig_max[sl, None]
        gg = g[sl, None]
        S1 = (sm * s1)[:, None, :]
        W1 = (sm * ws1)[:, None, :]
        S2 = np.concatenate([gg * u2, gg + (sm - gg) * u2], axis=1)[:, :, None]
        W2 = 2.0 * np.concatenate([gg * w2, (sm - gg) * w2], axis=1)[:, :, None]
        sn = sin_t[sl, None, None]
        cs = cos_t[sl, None, None]

        root1 = np.sqrt(1.0 + S1 * S1)
        root2 = np.sqrt(1.0 + S2 * S2)
        z1 = 1j * root1 * sn + S1 * cs
        sq1 = root1 * cs + 1j * S1 * sn
        b0sq = (a0 ** 2 + S2 * S2) / (1.0 + S2 * S2)
        P = np.sqrt(b0sq + z1 * z1)
        Q0 = 4.0 * cm * root2 * sq1 * P / (P + a0 ** 2 * sq1)
        weight = W1 * W2 * np.exp(-beta[sl, None, None] * root1 * root2 + tau * scale[sl, None, None]) / root1

        I0 = np.sum(weight * Q0, axis=(1, 2))
        smooth[sl, 0] = pref0 * I0.real
        imag[sl] = np.abs(I0.imag) / np.maximum(np.abs(I0), 1e-300)
        if gradient:
            Q0t = root2 * Q0
            I12 = np.sum(weight * (1j * z1 * Q0t), axis=(1, 2)).real
            I3 = np.sum(weight * (-sq1 * Q0t), axis=(1, 2)).real
            smooth[sl, 1] = pref1 * I12 * direction[sl, 0]
            smooth[sl, 2] = pref1 * I12 * direction[sl, 1]
            smooth[sl, 3] = pref1 * I3 * direction[sl, 2]

    rows = np.nonzero(supercritical & (g > 0))[0]
    if len(rows):
        ub, wb = unit_rule(branch_nodes, "smoothstep")
        ut, wt = unit_rule(branch_nodes, "graded")
        sb = _truncation(beta[rows] * cos_rel[rows])
        gb = np.minimum(gate_root[rows], sb)[:, None]
        Z2 = gb * ub
        WZ = 2.0 * gb * wb
        sn = sin_t[rows, None]
        cs = cos_t[rows, None]
        b0 = np.sqrt((a0 ** 2 + Z2 * Z2) / (1.0 + Z2 * Z2))
        span = np.maximum(sn - b0, 0.0)
        Wv = b0[..., None] + span[..., None] * ut
        WW = span[..., None] * wt
        one_w = np.sqrt(1.0 - Wv * Wv)
        gap = Wv * Wv - (b0 * b0)[..., None]
        G = a0 ** 2 * one_w * np.sqrt(np.maximum(gap, 0.0)) / (a0 ** 4 * (1.0 - Wv * Wv) + np.abs(gap))
        r = R[rows, None] * np.sqrt(1.0 + Z2 * Z2)
        lam = Wv * sn[..., None] + one_w * cs[..., None]
        ex = WW * G * np.exp(-tt * r[..., None] * lam + tau * scale[rows, None, None])

        Im0 = -8.0 * cm * np.sqrt(1.0 + Z2 * Z2) * np.sum(ex, axis=2)
        branch[rows, 0] = pref0 * np.sum(WZ * Im0, axis=1)
        if gradient:
            Im12 = 8.0 * cm * (1.0 + Z2 * Z2) * np.sum(ex * Wv, axis=2)
            Im3 = 8.0 * cm * (1.0 + Z2 * Z2) * np.sum(ex * one_w, axis=2)
            E12 = pref1 * np.sum(WZ * Im12, axis=1)
            branch[rows, 1] = E12 * direction[rows, 0]
            branch[rows, 2] = E12 * direction[rows, 1]
            branch[rows, 3] = pref1 * np.sum(WZ * Im3, axis=1) * direction[rows, 2]

    return {"scale": scale, "smooth": smooth, "branch": branch, "imag": imag}


def _settings(cfg: Optional[KernelConfig]) -> KernelConfig:
    return cfg if cfg is not None else KernelConfig()


def _check_tau(tau: float, cfg: KernelConfig) -> None:
    if tau < cfg.tau_min:
        raise DomainError(f"tau={tau:g} is below tau_min={cfg.tau_min:g}")


def refracted_part(
    x,
    z_prime,
    tau: float,
    m: MediumSpec,
    k: int = 0,
    cfg: Optional[KernelConfig] = None,
) -> KernelValue:
    """Refracted part E(x, z') (k = 0) or its x_k derivative (k = 1, 2, 3).

    Args:
        x: Field point, x3 < 0
        z_prime: Interface point
        tau: Laplace parameter, at least cfg.tau_min
        m: Background medium
        k: Component
        cfg: Quadrature controls

    Returns:
        KernelValue whose ``smooth``/``branch`` split the contour and cut parts

    Raises:
        QuadratureError: if the sigma rule does not converge
    """
    cfg = _settings(cfg)
    x = lower_point(x)
    _check_tau(tau, cfg)
    if k not in (0, 1, 2, 3):
        raise DomainError(f"component k must be 0..3, got {k}")
    z = np.atleast_2d(np.asarray(z_prime, dtype=float))
    state: Dict[str, np.ndarray] = {}

    def evaluate(level: int):
        out = _refracted_batch(
            x, z, tau, m,
            cfg.sigma_nodes * 2 ** level,
            cfg.branch_nodes * 2 ** level,
            gradient=k > 0,
        )
        state.update(out)
        n_sigma = (2 * cfg.sigma_nodes * 2 ** level) ** 2
        return np.array([out["smooth"][0, k], out["branch"][0, k]]), n_sigma

    value, err, nodes = refine_until_converged(
        evaluate, cfg.rtol, cfg.max_refinements, label=f"refracted part k={k}"
    )
    return KernelValue(
        tau=tau,
        phi=float(value[0] + value[1]),
        scale=float(state["scale"][0]),
        smooth=float(value[0]),
        branch=float(value[1]),
        error_estimate=err,
        nodes=nodes,
        imag_residue=float(state["imag"][0]),
    )


def refracted_part_direct(
    x,
    z_prime,
    tau: float,
    m: MediumSpec,
    k: int = 0,
    nodes: int = 16,
) -> KernelValue:
    """Refracted part from the undeformed real-axis zeta1 integral.

    Oscillatory, so only usable at moderate tau; serves as an oracle for the
    contour/cut split.
    """
    x = lower_point(x)
    cm = m.speed_minus
    z = np.asarray(z_prime, dtype=float)
    d = x[:2] - z
    D = float(np.hypot(*d))
    a = abs(x[2])
    R = math.hypot(D, a)
    sin_t, cos_t = D / R, a / R
    beta = tau * R / cm
    if sin_t > m.a0 and not m.homogeneous:
        scale = R * (cos_t * math.cos(m.theta0) + sin_t * m.a0) / cm
    else:
        scale = R / cm

    excess = max(0.0, tau * scale - beta * cos_t)
    Z = math.sqrt((1.0 + (EXPONENT_CUTOFF + excess) / (beta * cos_t)) ** 2 - 1.0)
    freq = beta * sin_t * math.sqrt(1.0 + Z * Z)
    n_panels = int(math.ceil(2 * Z * freq / math.pi)) + 16
    s1, w1 = composite_rule(np.linspace(-Z, Z, n_panels + 1), nodes)
    s2, w2 = composite_rule(np.linspace(0.0, Z, 33), nodes)
    w2 = 2.0 * w2

    Z1 = s1[None, :]
    Z2 = s2[:, None]
    Q0, Q0t, Q1, Q3 = q_functions(Z1.astype(complex), Z2, m)
    root2 = np.sqrt(1.0 + Z2 * Z2)
    phase = np.exp(-beta * root2 * (cos_t * np.sqrt(1.0 + Z1 * Z1) - 1j * sin_t * Z1) + tau * scale)
    weight = w2[:, None] * w1[None, :] * phase / np.sqrt(1.0 + Z1 * Z1)

    gm = m.gamma_minus
    if k == 0:
        value = tau / (2.0 * (2.0 * math.pi) ** 2 * gm ** 1.5) * np.sum(weight * Q0).real
    else:
        direction = [d[0] / D if D > 0 else 0.0, d[1] / D if D > 0 else 0.0, -1.0][k - 1]
        Qk = Q3 if k == 3 else Q1
        value = tau ** 2 / (2.0 * (2.0 * math.pi) ** 2 * gm ** 2) * np.sum(weight * Qk).real * direction
    return KernelValue(tau=tau, phi=float(value), scale=scale, smooth=float(value), nodes=int(weight.size))


def free_kernel(x, y, tau: float, gamma: float) -> KernelValue:
    """exp(-tau |x - y|/sqrt(gamma)) / (4 pi gamma |x - y|) as a scaled value."""
    r = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    if r == 0:
        raise DomainError("free kernel is singular at x = y")
    return KernelValue(tau=tau, phi=1.0 / (4.0 * math.pi * gamma * r), scale=r / math.sqrt(gamma))


def point_source(y, m: MediumSpec) -> UpperKernel:
    """Upper-half kernel exp(-tau |z~' - y|/c_+)/|z~' - y| as (mantissa, exponent time)."""
    y = upper_point(y)

    def upper(zs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        r = np.sqrt(np.sum((zs - y[:2]) ** 2, axis=1) + y[2] ** 2)
        return 1.0 / r, r / m.speed_plus

    return upper


def interface_field(
    x,
    tau: float,
    m: MediumSpec,
    upper: UpperKernel,
    center: np.ndarray,
    r_inner: float,
    r_outer: float,
    k: int = 0,
    cfg: Optional[KernelConfig] = None,
    adaptive: bool = True,
) -> KernelValue:
    """tau/(4 pi gamma_+) int E(x, z') U(z') dz' over a polar window.

    Args:
        x: Field point, x3 < 0
        tau: Laplace parameter
        m: Background medium
        upper: z' -> (mantissa, exponent time) of the upper-half factor U
        center: Window center (normally a refraction point)
        r_inner: Radius of the core disc
        r_outer: Outer radius of the far-field shell
        k: 0 for the value, 1 to add the x-gradient
        cfg: Quadrature controls
        adaptive: Refine until converged; otherwise a single level-0 pass

    Returns:
        KernelValue
    """
    cfg = _settings(cfg)
    x = lower_point(x)
    _check_tau(tau, cfg)
    center = np.asarray(center, dtype=float)
    base_scale: Dict[str, float] = {}
    parts: Dict[str, float] = {}
    imag: Dict[str, float] = {}

    def evaluate(level: int):
        split = 2 ** level
        core = r_inner * np.array([0.0, 0.125, 0.25, 0.5, 1.0])
        core = np.unique(np.concatenate([np.linspace(a, b, split + 1) for a, b in zip(core[:-1], core[1:])]))
        shell = np.linspace(r_inner, r_outer, 2 * split + 1)[1:]
        edges = np.concatenate([core, shell])
        zs, wz = polar_rule(center, edges, cfg.radial_nodes, cfg.angular_nodes * split)
        parts_k = _refracted_batch(
            x, zs, tau, m,
            cfg.sigma_nodes * split,
            cfg.branch_nodes * split,
            gradient=k == 1,
        )
        mant, expo = upper(zs)
        total_time = parts_k["scale"] + expo
        if "scale" not in base_scale:
            base_scale["scale"] = float(np.min(total_time))
        factor = tau / (4.0 * math.pi * m.gamma_plus) * wz * mant * np.exp(
            -tau * (total_time - base_scale["scale"])
        )
        smooth = factor @ parts_k["smooth"]
        branch = factor @ parts_k["branch"]
        parts["smooth"] = float(smooth[0])
        parts["branch"] = float(branch[0])
        imag["max"] = float(np.max(parts_k["imag"]))
        total = smooth + branch
        n_sigma = (2 * cfg.sigma_nodes * split) ** 2
        return (total if k == 1 else total[:1]), len(zs) * n_sigma

    if adaptive:
        value, err, nodes = refine_until_converged(
            evaluate, cfg.rtol, cfg.max_refinements, label="interface field"
        )
    else:
        value, nodes = evaluate(0)
        err = math.nan
    return KernelValue(
        tau=tau,
        phi=float(value[0]),
        grad=np.array(value[1:4]) if k == 1 else None,
        scale=base_scale["scale"],
        smooth=parts["smooth"],
        branch=parts["branch"],
        error_estimate=err,
        nodes=nodes,
        imag_residue=imag["max"],
    )


def window_radii(lambda_min: float, tau: float, m: MediumSpec, cfg: KernelConfig) -> Tuple[float, float]:
    """Core radius c/sqrt(tau lambda_min) and shell radius covering the exponential cutoff."""
    width = 1.0 / math.sqrt(tau * lambda_min)
    r_cut = math.sqrt(2.0 * EXPONENT_CUTOFF) * width
    r_inner = min(cfg.window_scale * width, r_cut)
    r_outer = max(r_cut, r_inner) + 40.0 * m.speed_plus / tau
    return r_inner, r_outer


def phi_tau(
    x,
    y,
    tau: float,
    m: MediumSpec,
    k: int = 0,
    cfg: Optional[KernelConfig] = None,
) -> KernelValue:
    """Phi_tau(x, y) (k = 0) and its x-gradient (k = 1) by z'-quadrature.

    Raises:
        QuadratureError: with achieved tolerance and node count
    """
    cfg = _settings(cfg)
    if k not in (0, 1):
        raise DomainError(f"k must be 0 or 1, got {k}")
    sol = snell_point(x, y, m)
    r_inner, r_outer = window_radii(sol.lambda_min, tau, m, cfg)
    logger.debug(
        f"phi_tau: tau={tau:g}, l={sol.l_value:.6f}, window {r_inner:.3g}/{r_outer:.3g}"
    )
    return interface_field(
        sol.x, tau, m, point_source(sol.y, m), sol.z_prime, r_inner, r_outer, k=k, cfg=cfg
    )


def phi_tau_asymptotic(x, y, tau: float, m: MediumSpec, k: int = 0) -> KernelValue:
    """Leading term exp(-tau l) E0 / (8 pi gamma_+ gamma_- sqrt(det H) |x - z~'| |z~' - y|)."""
    sol = snell_point(x, y, m)
    e0 = amplitude_e0(sol.x, sol.z_prime, m)
    zt = sol.z_tilde
    rx = float(np.linalg.norm(sol.x - zt))
    ry = float(np.linalg.norm(zt - sol.y))
    phi0 = e0 / (rx * ry) / (8.0 * math.pi * m.gamma_plus * m.gamma_minus * math.sqrt(sol.det_h))
    grad = None
    if k == 1:
        grad = phi0 * (-tau / m.speed_minus) * (sol.x - zt) / rx
    return KernelValue(tau=tau, phi=phi0, grad=grad, scale=sol.l_value)


def _batch_row(x, y, tau, m: MediumSpec, cfg: KernelConfig, k: int) -> Dict[str, object]:
    row: Dict[str, object] = {
        "x1": x[0], "x2": x[1], "x3": x[2], "y1": y[0], "y2": y[1], "y3": y[2], "tau": tau,
    }
    try:
        kv = phi_tau(x, y, tau, m, k=k, cfg=cfg)
        grad = kv.grad if kv.grad is not None else np.full(3, np.nan)
        row.update({
            "phi": kv.value,
            "log_abs_phi": kv.log_abs(),
            "mantissa": kv.phi,
            "scale": kv.scale,
            "grad1": grad[0], "grad2": grad[1], "grad3": grad[2],
            "smooth": kv.smooth,
            "branch": kv.branch,
            "error_estimate": kv.error_estimate,
            "nodes": kv.nodes,
            "status": "ok",
        })
    except QuadratureError as e:
        row.update({
            "phi": np.nan, "log_abs_phi": np.nan, "mantissa": np.nan, "scale": np.nan,
            "grad1": np.nan, "grad2": np.nan, "grad3": np.nan,
            "smooth": np.nan, "branch": np.nan,
            "error_estimate": e.achieved, "nodes": e.nodes,
            "status": f"quadrature_error: {e}",
        })
    return row


def evaluate_batch(
    rows: Iterable[Tuple[Sequence[float], Sequence[float], float]],
    m: MediumSpec,
    cfg: Optional[KernelConfig] = None,
    threads: int = 1,
    k: int = 1,
) -> pd.DataFrame:
    """Evaluate phi_tau over (x, y, tau) tuples; quadrature failures become status rows."""
    cfg = _settings(cfg)
    rows = list(rows)
    records = Parallel(n_jobs=threads)(
        delayed(_batch_row)(np.asarray(x, float), np.asarray(y, float), float(t), m, cfg, k)
        for x, y, t in rows
    )
    return pd.DataFrame.from_records(records)
