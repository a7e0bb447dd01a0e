"""Numpy implementations of the hot kernels.

These are the fallback for :mod:`scene_sampler._kernels_c` and the reference
the compiled versions are tested against.  Both backends must produce
bit-identical results: voxel binning uses ``floor(x / voxel_size)`` with one
IEEE division followed by one floor, never a multiply by a reciprocal.
"""

from __future__ import annotations

import numpy as np

# 21 bits per axis, biased to non-negative; keys pack as x:y:z from the MSB
# so sorted key order equals lexicographic (ix, iy, iz) order.
VOXEL_COORD_BITS = 21
VOXEL_COORD_LIMIT = 1 << (VOXEL_COORD_BITS - 1)
_OFFSET = np.int64(VOXEL_COORD_LIMIT)
_MASK = np.int64((1 << VOXEL_COORD_BITS) - 1)


def pack_voxel_keys(coords: np.ndarray, valid: np.ndarray, voxel_size: float) -> np.ndarray:
    """Bin valid points into voxel cells and pack each cell into one int64.

    Args:
        coords: (N, 3) float64 world coordinates.
        valid: (N,) uint8/bool validity flags.
        voxel_size: edge length of a cell, > 0.

    Returns:
        (M,) int64 packed keys, one per valid point, unsorted and with
        duplicates.  Raises ValueError when a cell index exceeds the packed
        21-bit range.
    """
    pts = coords[valid.astype(bool)]
    if pts.size == 0:
        return np.empty(0, dtype=np.int64)
    cells = np.floor(pts / voxel_size)
    if cells.min() < -VOXEL_COORD_LIMIT or cells.max() >= VOXEL_COORD_LIMIT:
        raise ValueError(
            f"voxel index out of packed range (+-{VOXEL_COORD_LIMIT}); "
            f"coordinates too large for voxel_size={voxel_size}"
        )
    cells = cells.astype(np.int64) + _OFFSET
    return (cells[:, 0] << 42) | (cells[:, 1] << 21) | cells[:, 2]


def unpack_voxel_keys(keys: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pack_voxel_keys`: (M,) int64 -> (M, 3) int64 cells."""
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty((keys.shape[0], 3), dtype=np.int64)
    out[:, 0] = (keys >> 42) & _MASK
    out[:, 1] = (keys >> 21) & _MASK
    out[:, 2] = keys & _MASK
    return out - _OFFSET


def count_uncovered(ids: np.ndarray, covered: np.ndarray) -> int:
    """Number of ids whose slot in the coverage bitmap is still 0."""
    if ids.size == 0:
        return 0
    return int(np.count_nonzero(covered[ids] == 0))


def mark_covered(ids: np.ndarray, covered: np.ndarray) -> int:
    """Set the bitmap slots for ids; returns how many were newly covered."""
    if ids.size == 0:
        return 0
    newly = int(np.count_nonzero(covered[ids] == 0))
    covered[ids] = 1
    return newly
