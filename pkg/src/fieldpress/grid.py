"""Containers for 2D grid fields and the coordinate lattice they share.

A :class:`Snapshot` is one timestep of a scalar field on a uniform grid.
A :class:`Trajectory` is a pull-based stream of snapshots; it is never
materialized in full so the rest of the toolkit can operate on data that
would not fit in memory. The :class:`CoordinateLattice` maps grid cells to
coordinates in [-1, 1]^2, which is the input convention of the neural-field
codec regardless of the physical domain extents.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

SNAPSHOT_MAGIC = b"ANTC"
SNAPSHOT_VERSION = 1

# magic, version u16, H u32, W u32, timestep u64, time f64, extents 4xf64
_SNAPSHOT_HEADER = struct.Struct("<4sHIIQ5d")


class ShapeMismatchError(ValueError):
    """Raised when two fields (or a shape argument) disagree on grid shape."""


class DegenerateFieldError(ValueError):
    """Raised when an operation needs variance that the input does not have."""


class SnapshotFormatError(ValueError):
    """Raised on malformed snapshot bytes."""


@dataclass(frozen=True)
class Snapshot:
    """A scalar field on a uniform H x W grid at one simulation timestep.

    ``values`` is stored as float32 (row-major, shape H x W) and frozen after
    construction so snapshots can be shared across threads. ``domain`` is
    (x_min, x_max, y_min, y_max) in simulation units.
    """

    values: np.ndarray
    domain: tuple[float, float, float, float]
    timestep_index: int = 0
    time: float = 0.0

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 2:
            raise ShapeMismatchError(
                f"snapshot values must be a 2D grid with both sides >= 2, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("snapshot values must be finite")
        if self.timestep_index < 0:
            raise ValueError("timestep_index must be non-negative")
        dom = tuple(float(e) for e in self.domain)
        if len(dom) != 4:
            raise ValueError("domain must be (x_min, x_max, y_min, y_max)")
        if not (dom[1] > dom[0] and dom[3] > dom[2]):
            raise ValueError(f"domain extents must be strictly increasing, got {dom}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "domain", dom)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def dx(self) -> float:
        return (self.domain[1] - self.domain[0]) / self.shape[1]

    @property
    def dy(self) -> float:
        return (self.domain[3] - self.domain[2]) / self.shape[0]

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy


@dataclass(frozen=True)
class CoordinateLattice:
    """Row-major (x, y) sample coordinates in [-1, 1]^2 for an H x W grid.

    ``points[i * W + j]`` corresponds to ``values[i, j]`` of a snapshot with
    the same shape.
    """

    points: np.ndarray
    source_shape: tuple[int, int]

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        h, w = self.source_shape
        if pts.shape != (h * w, 2):
            raise ShapeMismatchError(
                f"lattice expects {h * w} points for shape {self.source_shape}, got {pts.shape}"
            )
        if pts.size and (pts.min() < -1.0 or pts.max() > 1.0):
            raise ValueError("lattice coordinates must lie within [-1, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "source_shape", (int(h), int(w)))

    def __len__(self) -> int:
        return self.points.shape[0]


def make_lattice(shape: tuple[int, int]) -> CoordinateLattice:
    """Build the normalized coordinate lattice for an H x W grid.

    Grid point (i, j) maps to x = -1 + 2j/(W-1), y = -1 + 2i/(H-1); the four
    grid corners map exactly to +-1. Deterministic and idempotent.
    """
    h, w = int(shape[0]), int(shape[1])
    if h < 2 or w < 2:
        raise ShapeMismatchError(f"lattice shape must have both sides >= 2, got {(h, w)}")
    xs = np.linspace(-1.0, 1.0, w)
    ys = np.linspace(-1.0, 1.0, h)
    xx, yy = np.meshgrid(xs, ys)
    points = np.column_stack([xx.ravel(), yy.ravel()])
    return CoordinateLattice(points=points, source_shape=(h, w))


def pearson_values(a: np.ndarray, b: np.ndarray) -> float:
    """Sample Pearson correlation of two equally shaped arrays (flattened)."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"pearson inputs differ in shape: {a.shape} vs {b.shape}")
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateFieldError("pearson undefined for a constant (zero-variance) field")
    r = float(np.sum(dx * dy)) / (sx * sy)
    return min(1.0, max(-1.0, r))


def pearson(a: Snapshot, b: Snapshot) -> float:
    """Pearson correlation between two snapshots of identical shape."""
    return pearson_values(a.values, b.values)


class Trajectory:
    """A stream of snapshots in strictly increasing timestep order.

    ``source`` may be any iterable of snapshots; iteration validates that
    timestep indices run 0, 1, 2, ... and that shape and domain stay fixed.
    Iteration is single-consumer; re-iterating restarts the source iterable.
    """

    def __init__(self, source: Iterable[Snapshot], length_hint: int | None = None):
        self.source = source
        self.length_hint = length_hint

    def __iter__(self) -> Iterator[Snapshot]:
        expected = 0
        ref_shape: tuple[int, int] | None = None
        ref_domain: tuple[float, float, float, float] | None = None
        for snap in self.source:
            if snap.timestep_index != expected:
                raise ValueError(
                    f"trajectory timesteps must run 0,1,2,...: expected {expected}, "
                    f"got {snap.timestep_index}"
                )
            if ref_shape is None:
                ref_shape, ref_domain = snap.shape, snap.domain
            elif snap.shape != ref_shape or snap.domain != ref_domain:
                raise ValueError("all snapshots in a trajectory must share shape and domain")
            yield snap
            expected += 1

    @classmethod
    def from_snapshots(cls, snapshots: list[Snapshot]) -> "Trajectory":
        return cls(source=list(snapshots), length_hint=len(snapshots))


def write_snapshot(fh, snap: Snapshot) -> None:
    """Append one snapshot to a binary stream (little-endian, format 'ANTC')."""
    h, w = snap.shape
    header = _SNAPSHOT_HEADER.pack(
        SNAPSHOT_MAGIC,
        SNAPSHOT_VERSION,
        h,
        w,
        snap.timestep_index,
        snap.time,
        *snap.domain,
    )
    fh.write(header)
    fh.write(np.ascontiguousarray(snap.values, dtype="<f4").tobytes())


def read_snapshot(fh) -> Snapshot | None:
    """Read the next snapshot from a binary stream; None at end of stream."""
    raw = fh.read(_SNAPSHOT_HEADER.size)
    if not raw:
        return None
    if len(raw) < _SNAPSHOT_HEADER.size:
        raise SnapshotFormatError("truncated snapshot header")
    magic, version, h, w, timestep, time, x0, x1, y0, y1 = _SNAPSHOT_HEADER.unpack(raw)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotFormatError(f"bad snapshot magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    payload = fh.read(h * w * 4)
    if len(payload) < h * w * 4:
        raise SnapshotFormatError(f"truncated snapshot payload at timestep {timestep}")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    return Snapshot(values=values, domain=(x0, x1, y0, y1), timestep_index=timestep, time=time)


def write_trajectory(path: str | Path, traj: Trajectory) -> int:
    """Stream a trajectory to one file of concatenated snapshot records."""
    count = 0
    with open(path, "wb") as fh:
        for snap in traj:
            write_snapshot(fh, snap)
            count += 1
    return count


class _FileSource:
    """Re-iterable snapshot source backed by a trajectory file."""

    def __init__(self, path: Path):
        self.path = path

    def __iter__(self) -> Iterator[Snapshot]:
        with open(self.path, "rb") as fh:
            while True:
                snap = read_snapshot(fh)
                if snap is None:
                    return
                yield snap


def open_trajectory(path: str | Path) -> Trajectory:
    """Open a trajectory file for lazy, streaming iteration."""
    return Trajectory(source=_FileSource(Path(path)))


def load_snapshot_csv(
    path: str | Path,
    domain: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0),
    timestep_index: int = 0,
    time: float = 0.0,
) -> Snapshot:
    """Load a single snapshot from CSV, one row of comma-separated values per grid row."""
    values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return Snapshot(values=values, domain=domain, timestep_index=timestep_index, time=time)
