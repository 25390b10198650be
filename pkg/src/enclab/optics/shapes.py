"""Inclusion and source shapes."""

from abc import ABC, abstractmethod
from functools import lru_cache
from typing import Any, List, Tuple

import numpy as np

from enclab.core.exceptions import DomainError
from enclab.core.registry import get_registry_manager


shapes = get_registry_manager().create_registry("shapes")


@lru_cache(maxsize=32)
def _gauss(n: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def unit_ball_rule(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Product Gauss rule on the unit ball.

    Args:
        n: Radial and polar node count; the azimuth uses 2n trapezoid nodes

    Returns:
        (points (N, 3), weights (N,))
    """
    t, wt = _gauss(n)
    r = 0.5 * (t + 1.0)
    wr = 0.5 * wt * r ** 2
    mu, wmu = _gauss(n)
    phi = np.arange(2 * n) * (np.pi / n)
    wphi = np.full(2 * n, np.pi / n)

    R, MU, PHI = np.meshgrid(r, mu, phi, indexing="ij")
    W = wr[:, None, None] * wmu[None, :, None] * wphi[None, None, :]
    s = np.sqrt(1.0 - MU ** 2)
    pts = np.stack([R * s * np.cos(PHI), R * s * np.sin(PHI), R * MU], axis=-1)
    return pts.reshape(-1, 3), W.reshape(-1)


def smooth_bump(r: np.ndarray, plateau: float) -> np.ndarray:
    """C^2 radial bump: 1 on [0, plateau], 0 beyond 1, quintic smoothstep between."""
    s = np.clip((np.asarray(r, dtype=float) - plateau) / (1.0 - plateau), 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


class Shape(ABC):
    """Star-shaped compact set with a boundary parametrization.

    Boundary points are addressed by an arbitrary nonzero 3-vector ``v``
    (normalized internally), so local descent never meets a pole.
    """

    @abstractmethod
    def contains(self, points: np.ndarray) -> np.ndarray:
        """Closed-set membership of an (N, 3) array."""
        pass

    @abstractmethod
    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        pass

    @abstractmethod
    def boundary_point(self, v: np.ndarray, component: int = 0) -> np.ndarray:
        pass

    @abstractmethod
    def boundary_jacobian(self, v: np.ndarray, component: int = 0) -> np.ndarray:
        """d boundary_point / d v, a 3x3 matrix."""
        pass

    @abstractmethod
    def quadrature(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Volume rule (points, weights)."""
        pass

    @property
    def n_components(self) -> int:
        return 1

    def component_center(self, component: int = 0) -> np.ndarray:
        lo, hi = self.bounding_box()
        return 0.5 * (lo + hi)

    def sample_interior(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform samples by rejection from the bounding box."""
        lo, hi = self.bounding_box()
        out: List[np.ndarray] = []
        count = 0
        while count < n:
            cand = rng.uniform(lo, hi, size=(max(2 * n, 64), 3))
            cand = cand[self.contains(cand)]
            out.append(cand)
            count += len(cand)
        return np.concatenate(out)[:n]

    def sample_boundary(self, n: int, rng: np.random.Generator) -> np.ndarray:
        pts = []
        for i in range(n):
            comp = int(rng.integers(self.n_components))
            pts.append(self.boundary_point(rng.normal(size=3), comp))
        return np.array(pts)


@shapes.register("ball")
class Ball(Shape):
    """Closed ball."""

    def __init__(self, center: Any, radius: float):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        if self.radius <= 0:
            raise DomainError("ball radius must be positive")

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.linalg.norm(points - self.center, axis=1) <= self.radius

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.center - self.radius, self.center + self.radius

    def boundary_point(self, v: np.ndarray, component: int = 0) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.center + self.radius * v / np.linalg.norm(v)

    def boundary_jacobian(self, v: np.ndarray, component: int = 0) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        n = np.linalg.norm(v)
        u = v / n
        return self.radius * (np.eye(3) - np.outer(u, u)) / n

    def quadrature(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        pts, w = unit_ball_rule(n)
        return self.center + self.radius * pts, w * self.radius ** 3

    def component_center(self, component: int = 0) -> np.ndarray:
        return self.center

    def bump(self, points: np.ndarray, plateau: float) -> np.ndarray:
        """Radial bump profile supported on the closed ball."""
        r = np.linalg.norm(np.atleast_2d(points) - self.center, axis=1) / self.radius
        return smooth_bump(r, plateau)


@shapes.register("ellipsoid")
class Ellipsoid(Shape):
    """Axis-aligned closed ellipsoid."""

    def __init__(self, center: Any, semi_axes: Any):
        self.center = np.asarray(center, dtype=float)
        self.semi_axes = np.asarray(semi_axes, dtype=float)
        if np.any(self.semi_axes <= 0):
            raise DomainError("semi-axes must be positive")

    def contains(self, points: np.ndarray) -> np.ndarray:
        q = (np.atleast_2d(points) - self.center) / self.semi_axes
        return np.sum(q ** 2, axis=1) <= 1.0

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.center - self.semi_axes, self.center + self.semi_axes

    def boundary_point(self, v: np.ndarray, component: int = 0) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.center + self.semi_axes * v / np.linalg.norm(v)

    def boundary_jacobian(self, v: np.ndarray, component: int = 0) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        n = np.linalg.norm(v)
        u = v / n
        return np.diag(self.semi_axes) @ (np.eye(3) - np.outer(u, u)) / n

    def quadrature(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        pts, w = unit_ball_rule(n)
        return self.center + self.semi_axes * pts, w * float(np.prod(self.semi_axes))

    def component_center(self, component: int = 0) -> np.ndarray:
        return self.center


@shapes.register("union_of_balls")
class UnionOfBalls(Shape):
    """Finite union of closed balls; each ball is a boundary component."""

    def __init__(self, centers: Any, radii: Any):
        self.balls = [Ball(c, r) for c, r in zip(centers, radii)]
        if not self.balls:
            raise DomainError("union_of_balls needs at least one ball")

    @property
    def n_components(self) -> int:
        return len(self.balls)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        inside = np.zeros(len(points), dtype=bool)
        for ball in self.balls:
            inside |= ball.contains(points)
        return inside

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        lo = np.min([b.bounding_box()[0] for b in self.balls], axis=0)
        hi = np.max([b.bounding_box()[1] for b in self.balls], axis=0)
        return lo, hi

    def boundary_point(self, v: np.ndarray, component: int = 0) -> np.ndarray:
        return self.balls[component].boundary_point(v)

    def boundary_jacobian(self, v: np.ndarray, component: int = 0) -> np.ndarray:
        return self.balls[component].boundary_jacobian(v)

    def component_center(self, component: int = 0) -> np.ndarray:
        return self.balls[component].center

    def quadrature(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        # midpoint rule on the masked bounding box; overlaps counted once
        lo, hi = self.bounding_box()
        step = min(b.radius for b in self.balls) / n
        axes = [np.arange(a + 0.5 * step, b, step) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        pts = grid[self.contains(grid)]
        return pts, np.full(len(pts), step ** 3)


def build_shape(spec: Any) -> Shape:
    """Instantiate the registered shape named by ``spec.kind``."""
    if spec.kind == "ball":
        return shapes.create("ball", spec.center, spec.radius)
    if spec.kind == "ellipsoid":
        return shapes.create("ellipsoid", spec.center, spec.semi_axes)
    return shapes.create(spec.kind, spec.centers, spec.radii)


def ball_from_spec(spec: Any) -> Ball:
    """Ball from a BallSpec."""
    return Ball(spec.center, spec.radius)
