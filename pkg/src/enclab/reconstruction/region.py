"""Region estimate E(D; B) on a probe grid, written as a voxel mask and a CSV listing."""

import math
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from enclab.core.config import ExperimentConfig, MediumSpec, RegionConfig
from enclab.core.exceptions import ArtifactError, DomainError
from enclab.core.logger import get_logger
from enclab.core.models import RegionResult
from enclab.optics.geometry import region_estimate
from enclab.optics.shapes import Ball, ball_from_spec, build_shape


logger = get_logger("reconstruction.region")

CHUNK = 4096


def probe_points(cfg: RegionConfig) -> Tuple[np.ndarray, Tuple[int, int, int]]:
    """Regular probe grid (C order, x1 slowest) in the lower half-space."""
    axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(cfg.lower, cfg.upper, cfg.points)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return grid.reshape(-1, 3), tuple(int(n) for n in cfg.points)


def region_mask(
    l_value: float,
    ball: Ball,
    m: MediumSpec,
    points: np.ndarray,
    threads: int = 1,
) -> np.ndarray:
    """Membership over ``points`` evaluated in chunks."""
    chunks = [points[i: i + CHUNK] for i in range(0, len(points), CHUNK)]
    parts = Parallel(n_jobs=threads)(
        delayed(region_estimate)(l_value, ball, m, chunk) for chunk in chunks
    )
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def euclidean_region(l_value: float, ball: Ball, gamma: float, points: np.ndarray) -> np.ndarray:
    """Homogeneous reference: |x - p| > sqrt(gamma) l + eta."""
    c = math.sqrt(gamma)
    return np.linalg.norm(points - ball.center, axis=1) > c * l_value + ball.radius


def emit_region(
    l_hat: float,
    config: ExperimentConfig,
    out_dir: Optional[Union[str, Path]] = None,
    validate: bool = True,
    samples: int = 2000,
    threads: int = 1,
    config_hash: str = "",
) -> RegionResult:
    """Mark the probe grid with E(D; B) for the threshold l_hat + eta/c_+.

    Args:
        l_hat: Estimated (or exact) l(D, B)
        config: Experiment configuration (medium, B, probe grid, D for validation)
        out_dir: Where ``region.mask`` and ``region.csv`` go; nothing is written when None
        validate: Report the fraction of sampled points of D that are members
        samples: Number of sampled D points
        threads: joblib workers
        config_hash: Stamped on every CSV row
    """
    if not l_hat > 0:
        raise DomainError("l_hat must be positive")
    m = config.medium
    ball = ball_from_spec(config.source.ball)
    points, shape = probe_points(config.region)
    member = region_mask(l_hat, ball, m, points, threads)

    containment = None
    if validate:
        rng = np.random.default_rng(config.seed)
        d_points = build_shape(config.inclusion.shape).sample_interior(samples, rng)
        containment = float(np.mean(region_estimate(l_hat, ball, m, d_points)))

    agreement = None
    if m.homogeneous:
        agreement = float(np.mean(member == euclidean_region(l_hat, ball, m.gamma_minus, points)))

    result = RegionResult(
        points=points,
        member=member,
        grid_shape=shape,
        threshold=l_hat + ball.radius / m.speed_plus,
        l_value=l_hat,
        containment=containment,
        euclidean_agreement=agreement,
        config_hash=config_hash,
    )
    logger.info(
        f"region estimate: {result.member_fraction:.1%} of {len(points)} probes are members"
        + (f", D containment {containment:.1%}" if containment is not None else "")
    )
    if out_dir is not None:
        write_region(result, out_dir)
    return result


def write_region(result: RegionResult, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    """Flat uint8 mask (grid order) and a CSV listing of the probe points."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mask_path = out / "region.mask"
    mask_path.write_bytes(result.member.astype(np.uint8).tobytes())
    csv_path = out / "region.csv"
    pd.DataFrame({
        "config_hash": result.config_hash,
        "x1": result.points[:, 0],
        "x2": result.points[:, 1],
        "x3": result.points[:, 2],
        "member": result.member.astype(np.uint8),
    }).to_csv(csv_path, index=False, float_format="%.17g")
    return mask_path, csv_path


def read_mask(path: Union[str, Path], grid_shape: Tuple[int, int, int]) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    if raw.size != int(np.prod(grid_shape)):
        raise ArtifactError(f"mask has {raw.size} voxels, grid has {int(np.prod(grid_shape))}")
    return raw.reshape(grid_shape).astype(bool)
