"""Binary trace files, CSV summaries and npz histories for wave runs."""

import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from enclab.core.exceptions import ArtifactError
from enclab.core.logger import get_logger
from enclab.core.models import MediumTag, RegionHistory, WaveRun


logger = get_logger("solver.traces")

MAGIC = b"ENCTRC01"
HEADER = struct.Struct("<IIddd")
HASH_BYTES = 16
FLOAT = np.dtype("<f8")

PathLike = Union[str, Path]


def write_traces(run: WaveRun, path: PathLike) -> Path:
    """Write the little-endian ``.trc`` file for a run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digest = run.config_hash.encode("ascii")[:HASH_BYTES].ljust(HASH_BYTES, b"0")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(HEADER.pack(run.n_steps, run.n_nodes, run.spacing, run.dt, run.duration))
        fh.write(digest)
        for block in (run.nodes, run.weights, run.source, run.traces):
            fh.write(np.ascontiguousarray(block, dtype=FLOAT).tobytes())
    logger.info(f"wrote {path} ({run.n_nodes} nodes, {run.n_steps + 1} samples)")
    return path


def read_traces(
    path: PathLike,
    tag: MediumTag = MediumTag.PERTURBED,
    expected_hash: Optional[str] = None,
) -> WaveRun:
    """Read a ``.trc`` file back into a WaveRun (traces only, no histories).

    Raises:
        ArtifactError: on a bad magic, truncated payload or hash mismatch
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ArtifactError(f"{path}: not a trace file")
    offset = len(MAGIC)
    if len(raw) < offset + HEADER.size + HASH_BYTES:
        raise ArtifactError(f"{path}: truncated header")
    n_steps, n_nodes, spacing, dt, duration = HEADER.unpack_from(raw, offset)
    offset += HEADER.size
    digest = raw[offset: offset + HASH_BYTES].decode("ascii")
    offset += HASH_BYTES
    if expected_hash is not None and digest != expected_hash:
        raise ArtifactError(f"{path}: config hash {digest} does not match {expected_hash}")

    expected = n_nodes * 3 + 2 * n_nodes + (n_steps + 1) * n_nodes
    payload = np.frombuffer(raw, dtype=FLOAT, offset=offset)
    if payload.size != expected:
        raise ArtifactError(f"{path}: expected {expected} samples, found {payload.size}")
    cursor = 0

    def take(count: int) -> np.ndarray:
        nonlocal cursor
        block = payload[cursor: cursor + count].copy()
        cursor += count
        return block

    nodes = take(3 * n_nodes).reshape(n_nodes, 3)
    weights = take(n_nodes)
    source = take(n_nodes)
    traces = take((n_steps + 1) * n_nodes).reshape(n_steps + 1, n_nodes)
    return WaveRun(
        tag=tag,
        spacing=spacing,
        dt=dt,
        duration=duration,
        n_steps=n_steps,
        nodes=nodes,
        weights=weights,
        source=source,
        traces=traces,
        config_hash=digest,
    )


def trace_summary(run: WaveRun) -> pd.DataFrame:
    """Per node: coordinates, weight, f, peak |u| and the time of the peak."""
    peak_index = np.argmax(np.abs(run.traces), axis=0)
    peak = np.abs(run.traces)[peak_index, np.arange(run.n_nodes)]
    return pd.DataFrame({
        "config_hash": run.config_hash,
        "medium": run.tag.value,
        "node": np.arange(run.n_nodes),
        "x1": run.nodes[:, 0],
        "x2": run.nodes[:, 1],
        "x3": run.nodes[:, 2],
        "weight": run.weights,
        "f": run.source,
        "peak_abs_u": peak,
        "peak_time": peak_index * run.dt,
    })


def write_trace_summary(run: WaveRun, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_summary(run).to_csv(path, index=False, float_format="%.17g")
    return path


def write_history(run: WaveRun, path: PathLike) -> Path:
    """Region, receiver and energy histories as a compressed npz."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "config_hash": np.array(run.config_hash),
        "receivers": run.receivers,
        "receiver_traces": run.receiver_traces,
        "energy_times": run.energy_times,
        "energy": run.energy,
        "sponge_contact_time": np.array(run.sponge_contact_time),
    }
    if run.region is not None:
        arrays.update({
            "region_origin": run.region.origin,
            "region_spacing": np.array(run.region.spacing),
            "region_samples": run.region.samples,
            "region_inside": run.region.inside,
            "region_gamma0": run.region.gamma0,
            "region_h_diag": np.array(run.region.h_diag),
        })
    np.savez_compressed(path, **arrays)
    return path


def read_history(run: WaveRun, path: PathLike) -> WaveRun:
    """Attach the histories stored by :func:`write_history` to a run read from ``.trc``."""
    with np.load(Path(path), allow_pickle=False) as data:
        digest = str(data["config_hash"])
        if digest != run.config_hash:
            raise ArtifactError(f"{path}: config hash {digest} does not match {run.config_hash}")
        run.receivers = data["receivers"]
        run.receiver_traces = data["receiver_traces"]
        run.energy_times = data["energy_times"]
        run.energy = data["energy"]
        run.sponge_contact_time = float(data["sponge_contact_time"])
        if "region_samples" in data:
            run.region = RegionHistory(
                origin=data["region_origin"],
                spacing=float(data["region_spacing"]),
                samples=data["region_samples"],
                inside=data["region_inside"],
                gamma0=data["region_gamma0"],
                h_diag=tuple(float(v) for v in data["region_h_diag"]),
            )
    return run
