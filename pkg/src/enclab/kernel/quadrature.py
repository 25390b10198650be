"""Quadrature rules and the doubling driver used by the kernel integrals."""

from functools import lru_cache
from typing import Callable, Sequence, Tuple

import numpy as np

from enclab.core.exceptions import QuadratureError
from enclab.core.logger import get_logger


logger = get_logger("kernel.quadrature")

Rule = Tuple[np.ndarray, np.ndarray]


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> Rule:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    return np.polynomial.legendre.leggauss(n)


def unit_rule(n: int, kind: str = "gauss") -> Rule:
    """n-point rule on [0, 1].

    Args:
        n: Number of nodes
        kind: ``gauss`` (plain), ``graded`` (u = t^2, clusters at 0 and
            removes a sqrt endpoint cusp) or ``smoothstep``
            (u = 3t^2 - 2t^3, clusters at both ends)

    Returns:
        (nodes, weights)
    """
    t, w = gauss_legendre(n)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    if kind == "gauss":
        return t, w
    if kind == "graded":
        return t * t, 2.0 * t * w
    if kind == "smoothstep":
        return t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t) * w
    raise ValueError(f"unknown rule kind: {kind}")


def composite_rule(edges: Sequence[float], n: int, kind: str = "gauss") -> Rule:
    """Composite rule over consecutive panels [edges[i], edges[i+1]]."""
    u, wu = unit_rule(n, kind)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(a + (b - a) * u)
        weights.append((b - a) * wu)
    return np.concatenate(nodes), np.concatenate(weights)


def polar_rule(
    center: np.ndarray,
    radial_edges: Sequence[float],
    n_radial: int,
    n_angular: int,
) -> Rule:
    """Disc/annulus rule around ``center``: Gauss panels in r, trapezoid in angle.

    Returns:
        (points (N, 2), weights (N,)) including the Jacobian r
    """
    r, wr = composite_rule(radial_edges, n_radial)
    phi = (np.arange(n_angular) + 0.5) * (2.0 * np.pi / n_angular)
    wphi = 2.0 * np.pi / n_angular
    R, PHI = np.meshgrid(r, phi, indexing="ij")
    W = (wr * r)[:, None] * wphi * np.ones_like(PHI)
    pts = np.stack([center[0] + R * np.cos(PHI), center[1] + R * np.sin(PHI)], axis=-1)
    return pts.reshape(-1, 2), W.reshape(-1)


def refine_until_converged(
    evaluate: Callable[[int], Tuple[np.ndarray, int]],
    rtol: float,
    max_refinements: int,
    atol: float = 0.0,
    label: str = "integral",
) -> Tuple[np.ndarray, float, int]:
    """Evaluate at levels 0, 1, ... (doubling nodes) until successive levels agree.

    Args:
        evaluate: level -> (value array, node count)
        rtol: Relative tolerance on the max-norm change
        max_refinements: Number of doublings allowed
        atol: Absolute floor for the comparison
        label: Name used in diagnostics

    Returns:
        (value, error estimate, nodes)

    Raises:
        QuadratureError: if the tolerance is not met after ``max_refinements``
    """
    previous, nodes = evaluate(0)
    previous = np.atleast_1d(np.asarray(previous))
    err = np.inf
    for level in range(1, max_refinements + 1):
        current, nodes = evaluate(level)
        current = np.atleast_1d(np.asarray(current))
        err = float(np.max(np.abs(current - previous)))
        size = float(np.max(np.abs(current)))
        logger.debug(f"{label}: level {level}, {nodes} nodes, change {err:.3e} (|value| {size:.3e})")
        if err <= rtol * size + atol:
            return current, err, nodes
        previous = current
    size = float(np.max(np.abs(previous))) or 1.0
    if max_refinements == 0:
        return previous, np.nan, nodes
    raise QuadratureError(f"{label} did not converge to rtol={rtol:g}", achieved=err / size, nodes=nodes)
