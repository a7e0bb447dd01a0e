"""Voxel occupancy sets per frame and scene-level coverage statistics.

Voxel sets are stored as sorted unique int64 keys (21 bits per axis, packed
x:y:z from the MSB) rather than dense grids: indoor scans are sparse relative
to their bounding box.  Binning is floor(x / voxel_size), exact on integer
multiples of the cell size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from . import kernels
from .errors import InvalidInput
from .geometry import CoordinateMap

CACHE_MAGIC = b"V3DC"
CACHE_VERSION = 1


class VoxelIndex(NamedTuple):
    """Grid cell: component k is floor(coord_k / voxel_size)."""

    ix: int
    iy: int
    iz: int


@dataclass
class VoxelSet:
    """The set of voxel cells one frame covers."""

    frame_index: int
    voxel_size: float
    keys: np.ndarray  # sorted unique packed int64

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise InvalidInput(f"voxel_size must be > 0, got {self.voxel_size}")
        self.keys = np.asarray(self.keys, dtype=np.int64)

    @classmethod
    def from_voxels(
        cls, frame_index: int, voxels: Iterable[tuple[int, int, int]], voxel_size: float
    ) -> "VoxelSet":
        """Build from explicit integer cells (mainly for tests and fixtures)."""
        cells = np.asarray(sorted(set(map(tuple, voxels))), dtype=np.float64)
        if cells.size == 0:
            return cls(frame_index, voxel_size, np.empty(0, dtype=np.int64))
        keys = kernels.pack_voxel_keys(
            np.ascontiguousarray(cells),
            np.ones(len(cells), dtype=np.uint8),
            1.0,
        )
        return cls(frame_index, voxel_size, np.unique(keys))

    @property
    def voxels(self) -> frozenset[VoxelIndex]:
        """Set view of the cells (materialized on demand)."""
        return frozenset(VoxelIndex(*c) for c in kernels.unpack_voxel_keys(self.keys))

    def __len__(self) -> int:
        return int(self.keys.shape[0])

    def __contains__(self, cell) -> bool:
        return tuple(cell) in self.voxels


def voxelize(
    cmap: CoordinateMap,
    voxel_size: float,
    frame_index: int,
    pixel_stride: int = 1,
) -> VoxelSet:
    """Discretize a frame's valid world coordinates into its voxel set.

    ``pixel_stride`` optionally subsamples pixels (stride s keeps every s-th
    row and column) to trade coverage fidelity for speed.
    """
    if voxel_size <= 0:
        raise InvalidInput(f"voxel_size must be > 0, got {voxel_size}")
    if pixel_stride < 1:
        raise InvalidInput(f"pixel_stride must be >= 1, got {pixel_stride}")
    coords = cmap.coords[::pixel_stride, ::pixel_stride]
    valid = cmap.valid[::pixel_stride, ::pixel_stride]
    keys = kernels.pack_voxel_keys(
        np.ascontiguousarray(coords.reshape(-1, 3)),
        np.ascontiguousarray(valid.reshape(-1).astype(np.uint8)),
        float(voxel_size),
    )
    return VoxelSet(frame_index, voxel_size, np.unique(keys))


@dataclass
class SceneCoverage:
    """All per-frame voxel sets of a scene plus their exact union."""

    per_frame: list[VoxelSet]
    voxel_size: float
    universe_keys: np.ndarray
    _frame_ids: list[np.ndarray] | None = field(default=None, repr=False)

    @classmethod
    def from_voxel_sets(cls, sets: Iterable[VoxelSet]) -> "SceneCoverage":
        per_frame = sorted(sets, key=lambda s: s.frame_index)
        if not per_frame:
            raise InvalidInput("scene has no frames")
        sizes = {s.voxel_size for s in per_frame}
        if len(sizes) != 1:
            raise InvalidInput(f"mixed voxel sizes in one scene: {sorted(sizes)}")
        indices = [s.frame_index for s in per_frame]
        if len(set(indices)) != len(indices):
            raise InvalidInput("duplicate frame indices")
        universe = np.unique(np.concatenate([s.keys for s in per_frame]))
        return cls(per_frame=per_frame, voxel_size=per_frame[0].voxel_size, universe_keys=universe)

    @property
    def universe(self) -> frozenset[VoxelIndex]:
        return frozenset(VoxelIndex(*c) for c in kernels.unpack_voxel_keys(self.universe_keys))

    @property
    def n_frames(self) -> int:
        return len(self.per_frame)

    def frame_universe_ids(self) -> list[np.ndarray]:
        """Each frame's voxels as int32 positions into the sorted universe."""
        if self._frame_ids is None:
            self._frame_ids = [
                np.ascontiguousarray(
                    np.searchsorted(self.universe_keys, s.keys).astype(np.int32)
                )
                for s in self.per_frame
            ]
        return self._frame_ids


def coverage_ratio(selected: list[VoxelSet], scene: SceneCoverage) -> float:
    """Fraction of the scene universe covered by the union of selected sets.

    Returns 1.0 when the universe is empty.  Voxels outside the universe
    (possible when a foreign set is passed) do not count.
    """
    for s in selected:
        if s.voxel_size != scene.voxel_size:
            raise InvalidInput(
                f"voxel_size mismatch: selected {s.voxel_size} vs scene {scene.voxel_size}"
            )
    total = int(scene.universe_keys.shape[0])
    if total == 0:
        return 1.0
    if not selected:
        return 0.0
    union = np.unique(np.concatenate([s.keys for s in selected]))
    covered = int(np.count_nonzero(np.isin(union, scene.universe_keys, assume_unique=True)))
    return covered / total


def write_cache(path: str | Path, sets: Iterable[VoxelSet]) -> None:
    """Serialize per-frame voxel sets to the compact binary cache.

    Layout (little-endian): magic "V3DC", version u32, voxel_size f64,
    frame count u32, then per frame: index u32, count u32, count x 3 i32
    cell triples.
    """
    sets = list(sets)
    sizes = {s.voxel_size for s in sets}
    if len(sizes) > 1:
        raise InvalidInput(f"mixed voxel sizes in one cache: {sorted(sizes)}")
    voxel_size = sizes.pop() if sizes else 0.0
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<Id", CACHE_VERSION, voxel_size))
        fh.write(struct.pack("<I", len(sets)))
        for s in sets:
            cells = kernels.unpack_voxel_keys(s.keys).astype("<i4")
            fh.write(struct.pack("<II", s.frame_index, len(s)))
            fh.write(cells.tobytes(order="C"))


def read_cache(path: str | Path) -> list[VoxelSet]:
    """Load voxel sets written by :func:`write_cache`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise InvalidInput(f"{path}: bad magic {magic!r}")
        version, voxel_size = struct.unpack("<Id", fh.read(12))
        if version != CACHE_VERSION:
            raise InvalidInput(f"{path}: unsupported cache version {version}")
        (n_frames,) = struct.unpack("<I", fh.read(4))
        out = []
        for _ in range(n_frames):
            frame_index, count = struct.unpack("<II", fh.read(8))
            raw = fh.read(count * 12)
            if len(raw) != count * 12:
                raise InvalidInput(f"{path}: truncated cache")
            cells = np.frombuffer(raw, dtype="<i4").reshape(count, 3).astype(np.float64)
            keys = kernels.pack_voxel_keys(
                np.ascontiguousarray(cells),
                np.ones(count, dtype=np.uint8),
                1.0,
            )
            out.append(VoxelSet(frame_index, voxel_size, np.unique(keys)))
        return out
