"""Independent references for the kernel: homogeneous closed form and a finite-difference solve."""

import math
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import LinearOperator, cg

from enclab.core.config import MediumSpec
from enclab.core.exceptions import QuadratureError
from enclab.core.logger import get_logger
from enclab.core.models import KernelValue
from enclab.optics.geometry import lower_point, upper_point


logger = get_logger("kernel.oracle")


def refracted_part_homogeneous(x, z_prime, tau: float, gamma: float, k: int = 0) -> KernelValue:
    """Refracted part for equal speeds: 2 (1 + kr) e^{-kr} |x3| / (4 pi tau r^3), k = tau/sqrt(gamma).

    ``k`` here selects the component (0 value, 1..3 derivative in x_k).
    """
    x = lower_point(x)
    z = np.array([z_prime[0], z_prime[1], 0.0])
    c = math.sqrt(gamma)
    kappa = tau / c
    diff = x - z
    r = float(np.linalg.norm(diff))
    depth = -x[2]
    prefactor = 2.0 / (4.0 * math.pi * tau)
    if k == 0:
        phi = prefactor * (1.0 + kappa * r) * depth / r ** 3
    else:
        # d/dx_j [depth * phi(r)], phi(r) = (1 + kappa r) e^{-kappa r} / r^3
        phi_r = (1.0 + kappa * r) / r ** 3
        dphi_r = -(kappa ** 2 * r * r + 3.0 * kappa * r + 3.0) / r ** 4
        ddepth = -1.0 if k == 3 else 0.0
        phi = prefactor * (ddepth * phi_r + depth * dphi_r * diff[k - 1] / r)
    return KernelValue(tau=tau, phi=phi, scale=r / c)


def _face_operator(gamma: np.ndarray, spacing: float) -> sp.csr_matrix:
    """-div(gamma grad) with face-harmonic coefficients and zero Dirichlet ghosts."""
    shape = gamma.shape
    n = gamma.size
    idx = np.arange(n).reshape(shape)
    h2 = spacing * spacing
    rows, cols, data = [], [], []
    diag = np.zeros(n)
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        ia, ib = idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()
        ga, gb = gamma[tuple(lo)].ravel(), gamma[tuple(hi)].ravel()
        cf = 2.0 * ga * gb / (ga + gb) / h2
        rows += [ia, ib]
        cols += [ib, ia]
        data += [-cf, -cf]
        np.add.at(diag, ia, cf)
        np.add.at(diag, ib, cf)
        for end in (0, -1):
            edge = [slice(None)] * 3
            edge[axis] = end
            np.add.at(diag, idx[tuple(edge)].ravel(), gamma[tuple(edge)].ravel() / h2)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    data.append(diag)
    return sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def _fd_solve(
    probes: np.ndarray,
    y: np.ndarray,
    tau: float,
    m: MediumSpec,
    spacing: float,
    extent: float,
    width: float,
    rtol: float,
) -> Tuple[np.ndarray, np.ndarray]:
    center = 0.5 * (probes.mean(axis=0) + y)
    n = int(math.ceil(2 * extent / spacing))
    axes = []
    for j in range(3):
        start = center[j] - extent
        if j == 2:
            # nodes at half-integer multiples of h, so none sits on x3 = 0
            start = (math.floor(start / spacing) + 0.5) * spacing
        axes.append(start + spacing * np.arange(n))
    X1, X2, X3 = np.meshgrid(*axes, indexing="ij")
    gamma = np.where(X3 > 0, m.gamma_plus, m.gamma_minus)

    A = _face_operator(gamma, spacing) + tau * tau * sp.identity(gamma.size, format="csr")
    r2 = (X1 - y[0]) ** 2 + (X2 - y[1]) ** 2 + (X3 - y[2]) ** 2
    rhs = np.exp(-r2 / (2 * width * width)).ravel() / ((2 * math.pi) ** 1.5 * width ** 3)

    inv_diag = 1.0 / A.diagonal()
    M = LinearOperator(A.shape, matvec=lambda v: inv_diag * v)
    logger.info(f"fd oracle: {gamma.size} unknowns, h={spacing:g}, tau={tau:g}")
    u, info = cg(A, rhs, rtol=rtol, maxiter=20 * n, M=M)
    if info != 0:
        residual = float(np.linalg.norm(A @ u - rhs) / np.linalg.norm(rhs))
        raise QuadratureError("finite-difference oracle did not converge", achieved=residual, nodes=gamma.size)

    raw = RegularGridInterpolator(axes, u.reshape(gamma.shape))(probes)
    corrected = raw * math.exp(-tau * tau * width * width / (2.0 * m.gamma_plus))
    return raw, corrected


def fd_oracle(
    x_probe,
    y,
    tau: float,
    m: MediumSpec,
    spacing: float = 0.05,
    extent: float = 2.5,
    width: Optional[float] = None,
    rtol: float = 1e-10,
    richardson: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """Phi_tau(x_probe, y) from (-div(gamma0 grad) + tau^2) u = delta_w(. - y) on a cube.

    The Gaussian-regularised source of width w inflates the far field by
    exp(tau^2 w^2 / (2 gamma_+)); the corrected values remove that factor.
    With ``richardson`` the corrected values are also solved at 2h and
    combined as (4 u_h - u_2h) / 3, cancelling the O(h^2) stencil error.
    Each level uses its own default width of 1.5 h unless ``width`` is given.

    Returns:
        (raw values at h, corrected values) at the probe points
    """
    probes = np.atleast_2d(np.asarray(x_probe, dtype=float))
    for p in probes:
        lower_point(p)
    y = upper_point(y)

    def level(h: float) -> Tuple[np.ndarray, np.ndarray]:
        w = width if width is not None else 1.5 * h
        return _fd_solve(probes, y, tau, m, h, extent, w, rtol)

    raw, corrected = level(spacing)
    if richardson:
        _, coarse = level(2.0 * spacing)
        corrected = (4.0 * corrected - coarse) / 3.0
    return raw, corrected
