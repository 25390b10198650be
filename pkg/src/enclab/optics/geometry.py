"""Fermat/Snell geometry of the two-layer medium.

Points are numpy 3-vectors, interface points numpy 2-vectors. Field points x
live in the lower half-space (x3 < 0), sources y in the upper one (y3 > 0).
"""

import math
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq, minimize

from enclab.core.config import MediumSpec
from enclab.core.exceptions import DomainError
from enclab.core.logger import get_logger
from enclab.core.models import OpticalDistance, RefractionSolution
from enclab.optics.shapes import Shape


logger = get_logger("optics.geometry")

IDENTITY_RTOL = 1e-12
BISECTION_STEPS = 46


def lower_point(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not x[2] < 0:
        raise DomainError(f"field point must satisfy x3 < 0, got x3={x[2]}")
    return x


def upper_point(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not y[2] > 0:
        raise DomainError(f"source point must satisfy y3 > 0, got y3={y[2]}")
    return y


def _dist(z: np.ndarray, p: np.ndarray) -> np.ndarray:
    """|z~' - p| for interface points z (..., 2)."""
    d = z - p[..., :2]
    return np.sqrt(np.sum(d * d, axis=-1) + p[..., 2] ** 2)


def path_time(x, y, z_prime, m: MediumSpec) -> float:
    """Travel time l_{x,y}(z') of the broken ray x -> z~' -> y."""
    x = lower_point(x)
    y = upper_point(y)
    z = np.asarray(z_prime, dtype=float)
    return float(_dist(z, x) / m.speed_minus + _dist(z, y) / m.speed_plus)


def _snell_scalar(x: np.ndarray, y: np.ndarray, m: MediumSpec) -> Tuple[np.ndarray, float]:
    """Arclength s of z'(x, y) along the segment x'y', and the segment length."""
    cm, cp = m.speed_minus, m.speed_plus
    a, b = abs(x[2]), y[2]
    L = float(np.hypot(*(y[:2] - x[:2])))
    if L <= 1e-15 * (1.0 + a + b):
        return x[:2].copy(), 0.0

    def g(s: float) -> float:
        return s / (cm * math.hypot(s, a)) - (L - s) / (cp * math.hypot(L - s, b))

    s = brentq(g, 0.0, L, xtol=1e-12 * L, rtol=4 * np.finfo(float).eps)
    dg = a * a / (cm * math.hypot(s, a) ** 3) + b * b / (cp * math.hypot(L - s, b) ** 3)
    s = min(max(s - g(s) / dg, 0.0), L)
    e = (y[:2] - x[:2]) / L
    return x[:2] + s * e, s


def path_hessian(x, y, z_prime, m: MediumSpec) -> np.ndarray:
    """Closed-form Hessian of l_{x,y} with respect to z'."""
    z = np.asarray(z_prime, dtype=float)
    H = np.zeros((2, 2))
    for p, c in ((np.asarray(x, dtype=float), m.speed_minus), (np.asarray(y, dtype=float), m.speed_plus)):
        d = z - p[:2]
        r2 = float(d @ d + p[2] ** 2)
        r = math.sqrt(r2)
        H += (np.eye(2) - np.outer(d, d) / r2) / (r * c)
    return H


def snell_point(x, y, m: MediumSpec) -> RefractionSolution:
    """Unique minimizer z'(x, y) of path_time, with angles and Hessian.

    Args:
        x: Field point, x3 < 0
        y: Source point, y3 > 0
        m: Background medium

    Returns:
        RefractionSolution
    """
    x = lower_point(x)
    y = upper_point(y)
    z, s = _snell_scalar(x, y, m)
    L = float(np.hypot(*(y[:2] - x[:2])))
    theta_minus = math.atan2(s, abs(x[2]))
    theta_plus = math.atan2(L - s, y[2])
    residual = abs(math.sin(theta_minus) / m.speed_minus - math.sin(theta_plus) / m.speed_plus)
    H = path_hessian(x, y, z, m)
    return RefractionSolution(
        x=x,
        y=y,
        z_prime=z,
        l_value=path_time(x, y, z, m),
        theta_minus=theta_minus,
        theta_plus=theta_plus,
        hessian=H,
        det_h=float(np.linalg.det(H)),
        snell_residual=residual,
    )


def snell_points(xs, ys, m: MediumSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized refraction points for row-paired batches.

    Bisection on the Snell derivative followed by one Newton step.

    Returns:
        (z' (N, 2), l (N,))
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    xs, ys = np.broadcast_arrays(xs, ys)
    if np.any(xs[:, 2] >= 0):
        raise DomainError("field points must satisfy x3 < 0")
    if np.any(ys[:, 2] <= 0):
        raise DomainError("source points must satisfy y3 > 0")

    cm, cp = m.speed_minus, m.speed_plus
    a, b = np.abs(xs[:, 2]), ys[:, 2]
    dv = ys[:, :2] - xs[:, :2]
    L = np.hypot(dv[:, 0], dv[:, 1])
    safe = L > 1e-15 * (1.0 + a + b)
    e = np.zeros_like(dv)
    e[safe] = dv[safe] / L[safe, None]

    def g(s):
        return s / (cm * np.hypot(s, a)) - (L - s) / (cp * np.hypot(L - s, b))

    lo = np.zeros_like(L)
    hi = L.copy()
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        pos = g(mid) > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    s = 0.5 * (lo + hi)
    dg = a * a / (cm * np.hypot(s, a) ** 3) + b * b / (cp * np.hypot(L - s, b) ** 3)
    s = np.clip(s - g(s) / dg, 0.0, L)
    s = np.where(safe, s, 0.0)

    z = xs[:, :2] + s[:, None] * e
    l = np.hypot(s, a) / cm + np.hypot(L - s, b) / cp
    return z, l


def hessian_fd(x, y, m: MediumSpec, step: float = 1e-4) -> np.ndarray:
    """Central finite-difference Hessian of l_{x,y} at z'(x, y)."""
    sol = snell_point(x, y, m)
    z0 = sol.z_prime
    H = np.zeros((2, 2))
    E = np.eye(2) * step
    for i in range(2):
        for j in range(2):
            H[i, j] = (
                path_time(x, y, z0 + E[i] + E[j], m)
                - path_time(x, y, z0 + E[i] - E[j], m)
                - path_time(x, y, z0 - E[i] + E[j], m)
                + path_time(x, y, z0 - E[i] - E[j], m)
            ) / (4 * step * step)
    return H


def critical_radius(x, delta: float, m: MediumSpec) -> float:
    """Radius of the slab form of the cone U_delta(x)."""
    x = lower_point(x)
    if delta <= 0:
        raise DomainError("delta must be positive")
    q = m.a0 * delta
    if q >= 1.0:
        return math.inf
    return q * abs(x[2]) / math.sqrt(1.0 - q * q)


def in_cone(x, z_prime, delta: float, m: MediumSpec) -> bool:
    """Membership of z' in U_delta(x) = {|x' - z'| < a0 delta |x - z~'|}."""
    x = lower_point(x)
    if not 0 < delta <= (1.0 / m.a0) * (1 + 1e-12):
        raise DomainError(f"delta must lie in (0, 1/a0], got {delta}")
    z = np.asarray(z_prime, dtype=float)
    D = float(np.hypot(*(x[:2] - z)))
    R = math.hypot(D, x[2])
    cone = D < m.a0 * delta * R
    if m.a0 * delta < 1.0:
        rc = critical_radius(x, delta, m)
        slab = D < rc
        if cone != slab and abs(D - rc) > 1e-9 * max(1.0, rc):
            raise DomainError("cone and slab forms of U_delta disagree")
    return bool(cone)


def travel_bound(x, z_prime, alpha: float, m: MediumSpec) -> float:
    """T_{x,z'}(alpha) = (|x3| cos(alpha) + |z' - x'| sin(alpha)) / sqrt(gamma_minus)."""
    x = lower_point(x)
    z = np.asarray(z_prime, dtype=float)
    D = float(np.hypot(*(x[:2] - z)))
    a = abs(x[2])
    T = (a * math.cos(alpha) + D * math.sin(alpha)) / m.speed_minus

    R = math.hypot(D, a)
    theta = math.atan2(D, a)
    T_angle = R * math.cos(theta - alpha) / m.speed_minus
    if not math.isclose(T, T_angle, rel_tol=IDENTITY_RTOL, abs_tol=1e-14 * R / m.speed_minus):
        raise DomainError(f"travel bound identity violated: {T!r} vs {T_angle!r}")
    return T


def reflection_point(x, z_prime, m: MediumSpec) -> np.ndarray:
    """Point z0' on the segment x'z' where the ray meets the critical cone."""
    x = lower_point(x)
    z = np.asarray(z_prime, dtype=float)
    rc = critical_radius(x, 1.0, m)
    d = z - x[:2]
    D = float(np.hypot(*d))
    if not D >= rc * (1 - 1e-12):
        raise DomainError("z' lies inside the critical cone; no reflection point")
    return x[:2] + rc * d / D


def _modified(x: np.ndarray, y: np.ndarray, z: np.ndarray, m: MediumSpec):
    cm, cp = m.speed_minus, m.speed_plus
    d = z - x[:2]
    D = float(np.hypot(*d))
    R = math.hypot(D, x[2])
    dy = float(_dist(z, y))
    if m.homogeneous or D < m.a0 * R:
        value = R / cm + dy / cp
        return value, None, value

    value = abs(x[2]) * math.cos(m.theta0) / cm + (D + dy) / cp
    rc = critical_radius(x, 1.0, m)
    z0 = x[:2] + rc * d / D
    decomposed = math.hypot(rc, x[2]) / cm + (float(np.hypot(*(z - z0))) + dy) / cp
    if not math.isclose(value, decomposed, rel_tol=IDENTITY_RTOL, abs_tol=1e-14 * value):
        raise DomainError(f"modified path forms disagree: {value!r} vs {decomposed!r}")
    return value, z0, decomposed


def modified_path(x, y, z_prime, m: MediumSpec) -> float:
    """l~_{x,y}(z'): path_time inside U_1(x), total-reflection time outside."""
    value, _, _ = _modified(lower_point(x), upper_point(y), np.asarray(z_prime, dtype=float), m)
    return value


def modified_path_decomposition(x, y, z_prime, m: MediumSpec) -> Tuple[Optional[np.ndarray], float]:
    """(z0', |x - z~0'|/c_- + (|z0' - z'| + |z~' - y|)/c_+); z0' is None inside U_1(x)."""
    _, z0, decomposed = _modified(lower_point(x), upper_point(y), np.asarray(z_prime, dtype=float), m)
    return z0, decomposed


def modified_paths(xs, ys, zs, m: MediumSpec) -> np.ndarray:
    """Vectorized modified_path over row-paired batches."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    if np.any(xs[:, 2] >= 0) or np.any(ys[:, 2] <= 0):
        raise DomainError("modified path needs x3 < 0 < y3")
    cm, cp = m.speed_minus, m.speed_plus
    d = zs - xs[:, :2]
    D = np.hypot(d[:, 0], d[:, 1])
    R = np.hypot(D, xs[:, 2])
    dy = _dist(zs, ys)
    direct = R / cm + dy / cp
    if m.homogeneous:
        return direct
    reflected = np.abs(xs[:, 2]) * math.cos(m.theta0) / cm + (D + dy) / cp
    return np.where(D >= m.a0 * R, reflected, direct)


def amplitude_e0(x, z_prime, m: MediumSpec) -> float:
    """Leading amplitude E0(x - z~') of the refracted part."""
    x = lower_point(x)
    z = np.asarray(z_prime, dtype=float)
    D = float(np.hypot(*(x[:2] - z)))
    a = abs(x[2])
    R = math.hypot(D, a)
    radicand = m.a0 ** 2 * R * R - D * D
    if radicand <= 0:
        raise DomainError("z' is on or beyond the critical cone (E0 radicand <= 0)")
    sq = math.sqrt(radicand)
    return 4.0 * m.speed_minus * a * sq / (R * (sq + m.a0 ** 2 * a))


def _check_sets(D: Shape, B: Shape) -> None:
    if D.bounding_box()[1][2] >= 0:
        raise DomainError("inclusion closure must lie in the lower half-space")
    if B.bounding_box()[0][2] <= 0:
        raise DomainError("source ball closure must lie in the upper half-space")


def optical_distance_sets(
    D: Shape,
    B: Shape,
    m: MediumSpec,
    multistarts: int = 32,
    rel_tol: float = 1e-8,
    rng: Optional[np.random.Generator] = None,
    max_refinements: int = 10,
) -> OpticalDistance:
    """l(D, B) = inf over x in D, y in B of l(x, y), attained on the boundaries.

    Multistart BFGS over the boundary parametrizations, with the envelope
    gradient (x - z~')/(c_-|x - z~'|) and (y - z~')/(c_+|y - z~'|).
    """
    _check_sets(D, B)
    rng = rng if rng is not None else np.random.default_rng(0)
    cm, cp = m.speed_minus, m.speed_plus
    evaluations = 0

    best = None
    for comp_d in range(D.n_components):
        for comp_b in range(B.n_components):

            def objective(p: np.ndarray):
                nonlocal evaluations
                evaluations += 1
                v, u = p[:3], p[3:]
                x = D.boundary_point(v, comp_d)
                y = B.boundary_point(u, comp_b)
                z, _ = _snell_scalar(x, y, m)
                zt = np.array([z[0], z[1], 0.0])
                rx, ry = x - zt, y - zt
                nx, ny = np.linalg.norm(rx), np.linalg.norm(ry)
                value = nx / cm + ny / cp
                gx = D.boundary_jacobian(v, comp_d).T @ (rx / (cm * nx))
                gy = B.boundary_jacobian(u, comp_b).T @ (ry / (cp * ny))
                return value, np.concatenate([gx, gy])

            axis = B.component_center(comp_b) - D.component_center(comp_d)
            starts = [np.concatenate([axis, -axis])]
            starts += [rng.normal(size=6) for _ in range(max(0, multistarts - 1))]
            for p0 in starts:
                res = minimize(objective, p0, jac=True, method="BFGS", options={"gtol": 1e-10})
                if best is None or res.fun < best[0]:
                    best = (float(res.fun), res.x, comp_d, comp_b)

    l_value, p, comp_d, comp_b = best
    refinements = 0
    for refinements in range(1, max_refinements + 1):
        p = np.concatenate([p[:3] / np.linalg.norm(p[:3]), p[3:] / np.linalg.norm(p[3:])])

        def objective_best(q: np.ndarray):
            x = D.boundary_point(q[:3], comp_d)
            y = B.boundary_point(q[3:], comp_b)
            z, _ = _snell_scalar(x, y, m)
            return float(_dist(z, x) / cm + _dist(z, y) / cp)

        res = minimize(objective_best, p, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 4000})
        change = l_value - float(res.fun)
        if res.fun < l_value:
            l_value, p = float(res.fun), res.x
        if abs(change) <= rel_tol * abs(l_value):
            break

    x_star = D.boundary_point(p[:3], comp_d)
    y_star = B.boundary_point(p[3:], comp_b)
    z_star, _ = _snell_scalar(x_star, y_star, m)
    logger.info(f"l(D,B) = {l_value:.10f} after {evaluations} gradient evaluations, {refinements} refinements")
    return OpticalDistance(
        l_value=l_value,
        x_star=x_star,
        y_star=y_star,
        z_prime=z_star,
        starts=multistarts,
        refinements=refinements,
    )


def region_estimate(l_DB: float, B, m: MediumSpec, probe_points: np.ndarray) -> np.ndarray:
    """Membership of probe points in E(D; B) = {x : l(x, p) > l(D,B) + eta/c_+}."""
    if not l_DB > 0:
        raise DomainError("l(D,B) must be positive")
    pts = np.atleast_2d(np.asarray(probe_points, dtype=float))
    center = np.asarray(B.center, dtype=float)
    _, l = snell_points(pts, np.broadcast_to(center, pts.shape), m)
    return l > l_DB + B.radius / m.speed_plus


def linear_growth_constant(
    D: Shape,
    B: Shape,
    m: MediumSpec,
    delta1: float,
    samples: int = 2000,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, float]:
    """Empirical c0 with l~(z') >= l + c0 |z' - z'(x,y)| off U_delta1(x), and delta0.

    delta0 is max sin(theta_minus)/a0 over the sampled pairs.
    """
    _check_sets(D, B)
    rng = rng if rng is not None else np.random.default_rng(0)
    if m.a0 * delta1 >= 1.0:
        raise DomainError("delta1 must satisfy a0 * delta1 < 1")

    xs = D.sample_interior(samples, rng)
    ys = B.sample_interior(samples, rng)
    z_star, l = snell_points(xs, ys, m)
    D_star = np.hypot(*(z_star - xs[:, :2]).T)
    sin_minus = D_star / np.hypot(D_star, xs[:, 2])
    delta0 = float(np.max(sin_minus) / m.a0)

    q = m.a0 * delta1
    rc = q * np.abs(xs[:, 2]) / math.sqrt(1.0 - q * q)
    scale = np.hypot(*(ys[:, :2] - xs[:, :2]).T) + np.abs(xs[:, 2]) + ys[:, 2]
    radius = rc + rng.uniform(0.0, 3.0, samples) * scale
    phi = rng.uniform(0.0, 2 * np.pi, samples)
    zs = xs[:, :2] + radius[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)

    excess = modified_paths(xs, ys, zs, m) - l
    ratio = excess / np.hypot(*(zs - z_star).T)
    c0 = float(np.min(ratio))
    logger.debug(f"linear growth: c0={c0:.4g}, delta0={delta0:.4g}, delta1={delta1:.4g}")
    return c0, delta0
