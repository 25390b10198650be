"""Explicit finite-difference solver for (d_t^2 - div(gamma grad)) u = 0 in a sponge-bounded box."""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.integrate import simpson

from enclab.core.config import ExperimentConfig, GridConfig
from enclab.core.exceptions import CFLError, DomainError, PlacementError
from enclab.core.logger import get_logger
from enclab.core.models import MediumTag, RegionHistory, WaveRun
from enclab.optics.shapes import Shape, ball_from_spec, build_shape


logger = get_logger("solver.wave")

CFL_LIMIT = 0.9

# design floor for the absorbing layer and the object-to-sponge margin
MIN_SPONGE_CELLS = 16
MIN_MARGIN = 0.2


def layout_warnings(grid: GridConfig) -> List[str]:
    """Grid settings below the design floor; empty when the layout is sound."""
    out = []
    if grid.sponge_cells < MIN_SPONGE_CELLS:
        out.append(f"sponge of {grid.sponge_cells} cells is thinner than {MIN_SPONGE_CELLS}")
    if grid.box_lower is None and grid.margin < MIN_MARGIN:
        out.append(f"margin {grid.margin:.0%} to the sponge is below {MIN_MARGIN:.0%}")
    return out


@dataclass
class GridLayout:
    """Node axes of the full grid (sponge included) and the physical box."""
    axes: List[np.ndarray]
    spacing: float
    lower: np.ndarray
    upper: np.ndarray
    sponge_cells: int

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(len(a) for a in self.axes)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")


def auto_box(
    config: ExperimentConfig,
    interface_point: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Physical box around B, D, receivers and the interface neighbourhood.

    Each side is padded by ``grid.margin`` times the largest extent.
    """
    if config.grid.box_lower is not None:
        return np.array(config.grid.box_lower, float), np.array(config.grid.box_upper, float)

    shape = build_shape(config.inclusion.shape)
    ball = ball_from_spec(config.source.ball)
    lows, highs = [], []
    for lo, hi in (shape.bounding_box(), ball.bounding_box()):
        lows.append(lo)
        highs.append(hi)
    for r in config.grid.receivers:
        lows.append(np.array(r, float))
        highs.append(np.array(r, float))
    if interface_point is not None:
        p = np.array([interface_point[0], interface_point[1], 0.0])
        lows.append(p)
        highs.append(p)
    lower = np.min(lows, axis=0)
    upper = np.max(highs, axis=0)
    pad = config.grid.margin * float(np.max(upper - lower))
    return lower - pad, upper + pad


def build_layout(config: ExperimentConfig, lower: np.ndarray, upper: np.ndarray) -> GridLayout:
    """Node axes; x3 nodes sit at half-integer multiples of h so none lies on the interface."""
    ns = config.grid.sponge_cells
    span = upper - lower
    if config.grid.spacing is not None:
        h = config.grid.spacing
    else:
        h = float(np.max(span)) / (config.grid.cells - 2 * ns)
    axes = []
    for j in range(3):
        if j < 2:
            start = lower[j] - ns * h
        else:
            start = (math.floor(lower[j] / h) - ns + 0.5) * h
        count = int(math.ceil((upper[j] + ns * h - start) / h)) + 1
        axes.append(start + h * np.arange(count))
    return GridLayout(axes=axes, spacing=h, lower=lower, upper=upper, sponge_cells=ns)


def _check_placement(shape: Shape, label: str, layout: GridLayout) -> None:
    lo, hi = shape.bounding_box()
    if np.any(lo <= layout.lower) or np.any(hi >= layout.upper):
        raise PlacementError(f"{label} touches the sponge layer or leaves the computational box")


class WaveSolver:
    """Leapfrog solver shared by the perturbed and background runs of one experiment."""

    def __init__(
        self,
        config: ExperimentConfig,
        duration: float,
        interface_point: Optional[np.ndarray] = None,
        config_hash: str = "",
    ):
        """Initialize the grid, coefficients and time step.

        Args:
            config: Experiment configuration
            duration: Observation time T
            interface_point: Refraction point to keep inside the box
            config_hash: Hash stamped on every run

        Raises:
            CFLError: if an explicit dt violates the CFL bound
            PlacementError: if D or B reaches the sponge
        """
        if not duration > 0:
            raise DomainError("duration T must be positive")
        self.config = config
        self.config_hash = config_hash
        self.duration = float(duration)
        self.medium = config.medium
        self.shape = build_shape(config.inclusion.shape)
        self.ball = ball_from_spec(config.source.ball)

        lower, upper = auto_box(config, interface_point)
        self.layout = build_layout(config, lower, upper)
        for message in layout_warnings(config.grid):
            logger.warning(message)
        _check_placement(self.shape, "inclusion", self.layout)
        _check_placement(self.ball, "source ball", self.layout)

        h = self.layout.spacing
        X1, X2, X3 = self.layout.mesh()
        self.gamma0 = np.where(X3 > 0, self.medium.gamma_plus, self.medium.gamma_minus)
        self.inside = self.shape.contains(
            np.stack([X1, X2, X3], axis=-1).reshape(-1, 3)
        ).reshape(X1.shape)

        h_diag = config.inclusion.h_diag
        gamma_max = max(self.medium.gamma_plus, self.medium.gamma_minus,
                        max(self.medium.gamma_minus + v for v in h_diag))
        self.c_max = math.sqrt(gamma_max)
        dt_limit = CFL_LIMIT * h / (math.sqrt(3.0) * self.c_max)
        if config.grid.dt is not None:
            if config.grid.dt > dt_limit:
                raise CFLError(f"dt={config.grid.dt:g} exceeds the CFL bound {dt_limit:g}")
            dt = config.grid.dt
        else:
            dt = config.grid.cfl * h / (math.sqrt(3.0) * self.c_max)
        self.n_steps = int(math.ceil(self.duration / dt))
        self.dt = self.duration / self.n_steps

        self.damping = self._sponge(X1, X2, X3)
        pts = np.stack([X1, X2, X3], axis=-1)
        self.f = config.source.amplitude * self.ball.bump(pts.reshape(-1, 3), config.source.plateau).reshape(X1.shape)

        flat = pts.reshape(-1, 3)
        in_ball = np.linalg.norm(flat - self.ball.center, axis=1) <= self.ball.radius
        self.trace_index = np.nonzero(in_ball)[0]
        self.trace_nodes = flat[self.trace_index]

        self.region_slices = self._region_slices()
        self.receivers = np.array(config.grid.receivers, dtype=float).reshape(-1, 3)
        self.sponge_contact_time = self._sponge_contact()

        logger.info(
            f"grid {self.layout.shape} h={h:.4g}, dt={self.dt:.4g}, {self.n_steps} steps, "
            f"{len(self.trace_index)} trace nodes, {int(self.inside.sum())} inclusion nodes"
        )

    def _sponge(self, X1, X2, X3) -> np.ndarray:
        h = self.layout.spacing
        ns = self.layout.sponge_cells
        sigma_max = self.config.grid.sponge_strength * self.c_max / h
        damping = np.zeros_like(X1)
        for j, X in enumerate((X1, X2, X3)):
            depth = np.maximum(self.layout.lower[j] - X, X - self.layout.upper[j])
            depth = np.clip(depth / (ns * h), 0.0, 1.0)
            damping += sigma_max * depth ** 3
        return damping

    def _region_slices(self) -> Tuple[slice, slice, slice]:
        lo, hi = self.shape.bounding_box()
        out = []
        for j, ax in enumerate(self.layout.axes):
            i0 = max(int(np.searchsorted(ax, lo[j])) - 2, 0)
            i1 = min(int(np.searchsorted(ax, hi[j])) + 2, len(ax))
            out.append(slice(i0, i1))
        return tuple(out)

    def _sponge_contact(self) -> float:
        lo, hi = self.ball.bounding_box()
        gap = min(float(np.min(lo - self.layout.lower)), float(np.min(self.layout.upper - hi)))
        return max(gap, 0.0) / self.c_max

    def coefficients(self, tag: MediumTag) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per axis: interior face coefficients (harmonic means over h^2) and the two ghost-face terms."""
        h2 = self.layout.spacing ** 2
        faces = []
        for j in range(3):
            g = self.gamma0.copy()
            if tag == MediumTag.PERTURBED:
                g = g + self.config.inclusion.h_diag[j] * self.inside
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[j] = slice(0, -1)
            hi[j] = slice(1, None)
            a, b = g[tuple(lo)], g[tuple(hi)]
            first = np.take(g, 0, axis=j) / h2
            last = np.take(g, -1, axis=j) / h2
            faces.append((2.0 * a * b / (a + b) / h2, first, last))
        return faces

    @staticmethod
    def apply_operator(u: np.ndarray, faces: List[Tuple[np.ndarray, np.ndarray, np.ndarray]]) -> np.ndarray:
        """div(gamma grad) u with zero Dirichlet ghosts outside the grid."""
        out = np.zeros_like(u)
        for j, (cf, ghost_first, ghost_last) in enumerate(faces):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[j] = slice(0, -1)
            hi[j] = slice(1, None)
            flux = cf * (u[tuple(hi)] - u[tuple(lo)])
            out[tuple(lo)] += flux
            out[tuple(hi)] -= flux
            first = [slice(None)] * 3
            last = [slice(None)] * 3
            first[j] = 0
            last[j] = -1
            out[tuple(first)] -= ghost_first * u[tuple(first)]
            out[tuple(last)] -= ghost_last * u[tuple(last)]
        return out

    def _receiver_stencil(self) -> Tuple[np.ndarray, np.ndarray]:
        """Trilinear corner indices (R, 8, 3) and weights (R, 8)."""
        h = self.layout.spacing
        idx = np.zeros((len(self.receivers), 8, 3), dtype=int)
        wts = np.zeros((len(self.receivers), 8))
        for r, p in enumerate(self.receivers):
            base, frac = [], []
            for j, ax in enumerate(self.layout.axes):
                t = (p[j] - ax[0]) / h
                i = int(np.clip(math.floor(t), 0, len(ax) - 2))
                base.append(i)
                frac.append(t - i)
            for c in range(8):
                bits = [(c >> s) & 1 for s in range(3)]
                idx[r, c] = [base[s] + bits[s] for s in range(3)]
                wts[r, c] = np.prod([frac[s] if bits[s] else 1.0 - frac[s] for s in range(3)])
        return idx, wts

    def run(self, tag: MediumTag = MediumTag.PERTURBED) -> WaveRun:
        """Time-step the wave equation with u(0) = 0, u_t(0) = f.

        Returns:
            WaveRun with traces on B, receiver traces, region and energy histories
        """
        faces = self.coefficients(tag)
        dt = self.dt
        h3 = self.layout.spacing ** 3
        sigma_half = 0.5 * self.damping * dt
        denom = 1.0 + sigma_half
        keep = 1.0 - sigma_half

        n = self.n_steps
        traces = np.empty((n + 1, len(self.trace_index)))
        region = np.empty((n + 1,) + tuple(s.stop - s.start for s in self.region_slices))
        r_idx, r_wts = self._receiver_stencil()
        receiver_traces = np.zeros((n + 1, len(self.receivers)))
        energy_times: List[float] = []
        energy: List[float] = []

        def record(step: int, u: np.ndarray) -> None:
            traces[step] = u.ravel()[self.trace_index]
            region[step] = u[self.region_slices]
            if len(self.receivers):
                vals = u[r_idx[..., 0], r_idx[..., 1], r_idx[..., 2]]
                receiver_traces[step] = np.sum(vals * r_wts, axis=1)

        u_prev = np.zeros_like(self.f)
        Lf = self.apply_operator(self.f, faces)
        u = dt * self.f + dt ** 3 / 6.0 * Lf
        record(0, u_prev)
        record(1, u)

        stride = self.config.grid.energy_stride
        for step in range(1, n):
            Lu = self.apply_operator(u, faces)
            u_next = (2.0 * u - keep * u_prev + dt * dt * Lu) / denom
            if (step - 1) % stride == 0:
                velocity = (u_next - u) / dt
                e = 0.5 * h3 * (np.sum(velocity * velocity) - np.sum(u_next * Lu))
                energy_times.append((step + 0.5) * dt)
                energy.append(float(e))
            u_prev, u = u, u_next
            record(step + 1, u)
            if step % max(1, n // 10) == 0:
                logger.debug(f"{tag.value}: step {step}/{n}")

        origin = np.array([ax[s.start] for ax, s in zip(self.layout.axes, self.region_slices)])
        history = RegionHistory(
            origin=origin,
            spacing=self.layout.spacing,
            samples=region,
            inside=self.inside[self.region_slices].copy(),
            gamma0=self.gamma0[self.region_slices].copy(),
            h_diag=tuple(self.config.inclusion.h_diag),
        )
        logger.info(f"{tag.value} run finished: {n} steps, T={self.duration:.4g}")
        return WaveRun(
            tag=tag,
            spacing=self.layout.spacing,
            dt=dt,
            duration=self.duration,
            n_steps=n,
            nodes=self.trace_nodes.copy(),
            weights=np.full(len(self.trace_index), h3),
            source=self.f.ravel()[self.trace_index].copy(),
            traces=traces,
            config_hash=self.config_hash,
            receivers=self.receivers.copy(),
            receiver_traces=receiver_traces,
            region=history,
            energy_times=np.array(energy_times),
            energy=np.array(energy),
            sponge_contact_time=self.sponge_contact_time,
            box_lower=self.layout.lower.copy(),
            box_upper=self.layout.upper.copy(),
        )


def simulate_run(
    config: ExperimentConfig,
    duration: float,
    tag: MediumTag = MediumTag.PERTURBED,
    interface_point: Optional[np.ndarray] = None,
    config_hash: str = "",
) -> WaveRun:
    """One wave run; the background run ignores the inclusion."""
    return WaveSolver(config, duration, interface_point, config_hash).run(tag)


def laplace_trace(run: WaveRun, tau: float) -> np.ndarray:
    """w(x_q, tau) = int_0^T exp(-tau t) u(t, x_q) dt by composite Simpson."""
    if not tau > 0:
        raise DomainError("tau must be positive")
    t = run.times
    return simpson(np.exp(-tau * t)[:, None] * run.traces, x=t, axis=0)


def laplace_region(run: WaveRun, tau: float) -> np.ndarray:
    """Laplace transform of the region history, shape of the D box."""
    if run.region is None:
        raise DomainError("run carries no region history")
    t = run.times
    kernel = np.exp(-tau * t).reshape((-1, 1, 1, 1))
    return simpson(kernel * run.region.samples, x=t, axis=0)


def truncate(run: WaveRun, duration: float) -> WaveRun:
    """Same run observed over (0, T') with T' = floor(duration/dt) dt."""
    steps = int(math.floor(duration / run.dt + 1e-9))
    if not 2 <= steps <= run.n_steps:
        raise DomainError(f"cannot truncate a run of {run.n_steps} steps to {steps}")
    region = None
    if run.region is not None:
        region = RegionHistory(
            origin=run.region.origin,
            spacing=run.region.spacing,
            samples=run.region.samples[: steps + 1],
            inside=run.region.inside,
            gamma0=run.region.gamma0,
            h_diag=run.region.h_diag,
        )
    keep = run.energy_times <= steps * run.dt
    return WaveRun(
        tag=run.tag,
        spacing=run.spacing,
        dt=run.dt,
        duration=steps * run.dt,
        n_steps=steps,
        nodes=run.nodes,
        weights=run.weights,
        source=run.source,
        traces=run.traces[: steps + 1],
        config_hash=run.config_hash,
        receivers=run.receivers,
        receiver_traces=run.receiver_traces[: steps + 1] if run.receiver_traces.size else run.receiver_traces,
        region=region,
        energy_times=run.energy_times[keep],
        energy=run.energy[keep],
        sponge_contact_time=run.sponge_contact_time,
        box_lower=run.box_lower,
        box_upper=run.box_upper,
    )


def first_arrival(run: WaveRun, receiver: int = 0, threshold: float = 0.5) -> float:
    """Time of the first pulse peak at a receiver.

    The pick is the first local maximum of |u| reaching ``threshold`` times the
    trace peak, refined by a parabola through its two neighbours. For a radial
    bump the pulse is symmetric about the travel time from the bump centre, so
    the peak lands there while the onset leads it by up to eta / c.
    """
    trace = np.abs(run.receiver_traces[:, receiver])
    peak = float(trace.max())
    if peak == 0.0:
        return math.inf
    i = int(np.argmax(trace >= threshold * peak))
    last = len(trace) - 1
    while i < last and trace[i + 1] > trace[i]:
        i += 1
    t = run.times
    if i == 0 or i == last:
        return float(t[i])
    before, here, after = trace[i - 1], trace[i], trace[i + 1]
    curvature = before - 2.0 * here + after
    offset = 0.5 * (before - after) / curvature if curvature < 0 else 0.0
    return float(t[i] + offset * run.dt)
