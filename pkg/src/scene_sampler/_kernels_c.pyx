# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

Must stay bit-identical to scene_sampler._kernels_py: same division-then-floor
binning, same packed key layout, same error conditions.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

VOXEL_COORD_BITS = 21
VOXEL_COORD_LIMIT = 1 << (VOXEL_COORD_BITS - 1)

cdef long long _LIMIT = VOXEL_COORD_LIMIT
cdef long long _OFFSET = VOXEL_COORD_LIMIT
cdef long long _MASK = (1 << VOXEL_COORD_BITS) - 1


def pack_voxel_keys(const double[:, ::1] coords, const cnp.uint8_t[::1] valid,
                    double voxel_size):
    """Bin valid points into voxel cells and pack each cell into one int64."""
    cdef Py_ssize_t n = coords.shape[0]
    cdef Py_ssize_t i, m = 0
    out = np.empty(n, dtype=np.int64)
    cdef long long[::1] o = out
    cdef double cx, cy, cz
    cdef long long ix, iy, iz
    for i in range(n):
        if not valid[i]:
            continue
        cx = floor(coords[i, 0] / voxel_size)
        cy = floor(coords[i, 1] / voxel_size)
        cz = floor(coords[i, 2] / voxel_size)
        if (cx < -_LIMIT or cx >= _LIMIT or cy < -_LIMIT or cy >= _LIMIT
                or cz < -_LIMIT or cz >= _LIMIT):
            raise ValueError(
                f"voxel index out of packed range (+-{VOXEL_COORD_LIMIT}); "
                f"coordinates too large for voxel_size={voxel_size}"
            )
        ix = <long long> cx + _OFFSET
        iy = <long long> cy + _OFFSET
        iz = <long long> cz + _OFFSET
        o[m] = (ix << 42) | (iy << 21) | iz
        m += 1
    return out[:m]


def unpack_voxel_keys(keys):
    """Inverse of pack_voxel_keys: (M,) int64 -> (M, 3) int64 cells."""
    cdef const long long[::1] k = np.ascontiguousarray(keys, dtype=np.int64)
    cdef Py_ssize_t n = k.shape[0]
    out = np.empty((n, 3), dtype=np.int64)
    cdef long long[:, ::1] o = out
    cdef Py_ssize_t i
    for i in range(n):
        o[i, 0] = ((k[i] >> 42) & _MASK) - _OFFSET
        o[i, 1] = ((k[i] >> 21) & _MASK) - _OFFSET
        o[i, 2] = (k[i] & _MASK) - _OFFSET
    return out


def count_uncovered(const int[::1] ids, const cnp.uint8_t[::1] covered):
    """Number of ids whose slot in the coverage bitmap is still 0."""
    cdef Py_ssize_t i
    cdef long long n = 0
    for i in range(ids.shape[0]):
        if covered[ids[i]] == 0:
            n += 1
    return n


def mark_covered(const int[::1] ids, cnp.uint8_t[::1] covered):
    """Set the bitmap slots for ids; returns how many were newly covered."""
    cdef Py_ssize_t i
    cdef long long n = 0
    for i in range(ids.shape[0]):
        if covered[ids[i]] == 0:
            covered[ids[i]] = 1
            n += 1
    return n
