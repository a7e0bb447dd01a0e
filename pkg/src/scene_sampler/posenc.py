"""Patch coordinate pooling, sinusoidal 3D position encoding, and fusion.

Encoding layout: the feature vector splits into one block of floor(d/3) dims
per axis, concatenated x||y||z (min-x..max-z for min-max pooling, floor(d/6)
dims each).  Within a block, complete (sin, cos) pairs fill dims 2i and 2i+1
at frequency 1/10000^(2i/B); leftover dims stay zero, as do the final
d - 3*floor(d/3) padding dims.  Coordinates are first snapped to a discrete
grid: x_hat = floor(x / grid_resolution).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .geometry import CoordinateMap

DEFAULT_GRID_RESOLUTION = 0.02
PE_BASE = 10000.0


class PoolMode(str, Enum):
    AVERAGE = "avg"
    CENTER = "center"
    MINMAX = "minmax"


@dataclass
class PatchCoordGrid:
    """Per-patch aggregated world coordinates.

    ``coords`` holds 3 channels, or 6 for min-max (min xyz || max xyz).
    Patches with zero valid pixels have valid=False and zero coords.
    """

    coords: np.ndarray
    valid: np.ndarray
    patch_size: int
    mode: PoolMode

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


@dataclass
class PositionEncoding:
    """Encoded coordinates, one d-vector per patch position."""

    values: np.ndarray
    d: int
    grid_resolution: float


@dataclass
class FusedEmbedding:
    """Visual embedding plus position encoding, elementwise."""

    values: np.ndarray
    source_frame: int


def pool_patch_coords(cmap: CoordinateMap, patch_size: int, mode: PoolMode) -> PatchCoordGrid:
    """Aggregate per-pixel coordinates over non-overlapping PxP patches.

    Average divides by the count of valid pixels (not P^2) so depth holes do
    not drag coordinates toward the origin; center takes the patch's center
    pixel (offset P//2, P//2) and is valid only if that pixel is; min-max
    takes componentwise extremes over valid pixels.  Remainder rows/columns
    beyond H'*P and W'*P are discarded.
    """
    p = int(patch_size)
    if p < 1:
        raise InvalidInput(f"patch_size must be >= 1, got {patch_size}")
    h, w = cmap.shape
    if h < p or w < p:
        raise InvalidInput(f"image {h}x{w} smaller than one {p}x{p} patch")
    hp, wp = h // p, w // p
    mode = PoolMode(mode)

    coords = cmap.coords[: hp * p, : wp * p].reshape(hp, p, wp, p, 3)
    mask = cmap.valid[: hp * p, : wp * p].reshape(hp, p, wp, p)
    counts = mask.sum(axis=(1, 3))
    valid = counts > 0

    if mode is PoolMode.CENTER:
        cc = cmap.coords[p // 2 :: p, p // 2 :: p][:hp, :wp]
        cv = cmap.valid[p // 2 :: p, p // 2 :: p][:hp, :wp]
        out = np.where(cv[..., None], cc, 0.0)
        return PatchCoordGrid(coords=out, valid=cv.copy(), patch_size=p, mode=mode)

    if mode is PoolMode.AVERAGE:
        # invalid pixels are exactly zero in a CoordinateMap, so a plain sum
        # is already the sum over valid pixels
        sums = coords.sum(axis=(1, 3))
        denom = np.where(valid, counts, 1)[..., None]
        out = np.where(valid[..., None], sums / denom, 0.0)
        return PatchCoordGrid(coords=out, valid=valid, patch_size=p, mode=mode)

    m = mask[..., None]
    mins = np.where(m, coords, np.inf).min(axis=(1, 3))
    maxs = np.where(m, coords, -np.inf).max(axis=(1, 3))
    out = np.concatenate([mins, maxs], axis=-1)
    out = np.where(valid[..., None], out, 0.0)
    return PatchCoordGrid(coords=out, valid=valid, patch_size=p, mode=mode)


def _sin_blocks(cells: np.ndarray, d: int, n_axes: int) -> np.ndarray:
    """Per-axis sinusoidal blocks for already-discretized grid cells."""
    block = d // n_axes
    n_pairs = block // 2
    out = np.zeros(cells.shape[:-1] + (d,), dtype=np.float64)
    if n_pairs == 0:
        return out
    i = np.arange(n_pairs, dtype=np.float64)
    denom = np.power(PE_BASE, 2.0 * i / block)
    angles = cells[..., :, None] / denom  # (..., n_axes, n_pairs)
    blocks = np.zeros(cells.shape[:-1] + (n_axes, block), dtype=np.float64)
    blocks[..., 0 : 2 * n_pairs : 2] = np.sin(angles)
    blocks[..., 1 : 2 * n_pairs : 2] = np.cos(angles)
    out[..., : n_axes * block] = blocks.reshape(cells.shape[:-1] + (n_axes * block,))
    return out


def sinusoidal_pe(coord: np.ndarray, d: int, grid_resolution: float = DEFAULT_GRID_RESOLUTION) -> np.ndarray:
    """Sinusoidal encoding of a world coordinate (or (..., 3) batch)."""
    if d < 6:
        raise InvalidInput(f"feature dimension must be >= 6, got {d}")
    if grid_resolution <= 0:
        raise InvalidInput(f"grid_resolution must be > 0, got {grid_resolution}")
    coord = np.asarray(coord, dtype=np.float64)
    if coord.shape[-1] != 3:
        raise InvalidInput(f"coordinate must have a trailing dimension of 3, got {coord.shape}")
    cells = np.floor(coord / grid_resolution)
    return _sin_blocks(cells, d, 3)


def minmax_pe(coord6: np.ndarray, d: int, grid_resolution: float = DEFAULT_GRID_RESOLUTION) -> np.ndarray:
    """Encoding for min-max pooled patches: six blocks of floor(d/6) dims."""
    if d < 6:
        raise InvalidInput(f"feature dimension must be >= 6, got {d}")
    if grid_resolution <= 0:
        raise InvalidInput(f"grid_resolution must be > 0, got {grid_resolution}")
    coord6 = np.asarray(coord6, dtype=np.float64)
    if coord6.shape[-1] != 6:
        raise InvalidInput(f"min-max coordinates must have 6 channels, got {coord6.shape}")
    cells = np.floor(coord6 / grid_resolution)
    return _sin_blocks(cells, d, 6)


def encode_patch_grid(grid: PatchCoordGrid, d: int, grid_resolution: float = DEFAULT_GRID_RESOLUTION) -> PositionEncoding:
    """Position encoding for every patch; invalid patches encode to zero."""
    if grid.mode is PoolMode.MINMAX:
        values = minmax_pe(grid.coords, d, grid_resolution)
    else:
        values = sinusoidal_pe(grid.coords, d, grid_resolution)
    values[~grid.valid] = 0.0
    return PositionEncoding(values=values, d=d, grid_resolution=grid_resolution)


@dataclass
class MlpParams:
    """Two affine layers with a rectifier between: w2 @ relu(w1 @ x + b1) + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        hidden, in_dim = self.w1.shape
        out_dim, hidden2 = self.w2.shape
        if self.b1.shape != (hidden,) or self.b2.shape != (out_dim,) or hidden2 != hidden:
            raise InvalidInput(
                f"inconsistent MLP shapes: w1 {self.w1.shape}, b1 {self.b1.shape}, "
                f"w2 {self.w2.shape}, b2 {self.b2.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def seeded(cls, seed: int, in_dim: int, hidden: int, out_dim: int) -> "MlpParams":
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(hidden, in_dim)),
            b1=rng.normal(0.0, 0.1, size=hidden),
            w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(out_dim, hidden)),
            b2=rng.normal(0.0, 0.1, size=out_dim),
        )

    @classmethod
    def zeros_like(cls, other: "MlpParams") -> "MlpParams":
        return cls(
            w1=np.zeros_like(other.w1),
            b1=np.zeros_like(other.b1),
            w2=np.zeros_like(other.w2),
            b2=np.zeros_like(other.b2),
        )

    @classmethod
    def identity(cls, dim: int) -> "MlpParams":
        """Exact identity map via relu(x) - relu(-x) = x."""
        eye = np.eye(dim)
        return cls(
            w1=np.concatenate([eye, -eye], axis=0),
            b1=np.zeros(2 * dim),
            w2=np.concatenate([eye, -eye], axis=1),
            b2=np.zeros(dim),
        )


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Forward pass on (..., in_dim) inputs; returns output and a backprop cache."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise InvalidInput(f"input dim {x.shape[-1]} != MLP input dim {params.in_dim}")
    z = x @ params.w1.T + params.b1
    a = np.maximum(z, 0.0)
    out = a @ params.w2.T + params.b2
    return out, (x, z, a)


def mlp_backward(params: MlpParams, cache: tuple, dout: np.ndarray) -> tuple[MlpParams, np.ndarray]:
    """Exact gradients for all parameters and the input, given d(loss)/d(out)."""
    x, z, a = cache
    dout2 = dout.reshape(-1, params.out_dim)
    a2 = a.reshape(-1, params.w1.shape[0])
    x2 = x.reshape(-1, params.in_dim)
    dw2 = dout2.T @ a2
    db2 = dout2.sum(axis=0)
    da = dout @ params.w2
    dz = da * (z > 0)
    dz2 = dz.reshape(-1, params.w1.shape[0])
    dw1 = dz2.T @ x2
    db1 = dz2.sum(axis=0)
    dx = dz @ params.w1
    return MlpParams(w1=dw1, b1=db1, w2=dw2, b2=db2), dx


def mlp_pe(coord: np.ndarray, weights: MlpParams) -> np.ndarray:
    """Learned position encoding: two affine layers with a rectifier."""
    coord = np.asarray(coord, dtype=np.float64)
    if coord.shape[-1] != 3 or weights.in_dim != 3:
        raise InvalidInput(
            f"mlp_pe expects 3-vector coordinates and a 3->h->d MLP, "
            f"got coord {coord.shape}, MLP in_dim {weights.in_dim}"
        )
    out, _ = mlp_forward(weights, coord)
    return out


def fuse(visual: np.ndarray, pe: PositionEncoding, source_frame: int = 0) -> FusedEmbedding:
    """Elementwise sum of visual embeddings and position encodings."""
    visual = np.asarray(visual, dtype=np.float64)
    if visual.shape != pe.values.shape:
        raise InvalidInput(f"shape mismatch: visual {visual.shape} vs pe {pe.values.shape}")
    return FusedEmbedding(values=visual + pe.values, source_frame=source_frame)


def pseudo_features(seed: int, frame_index: int, h: int, w: int, d: int) -> np.ndarray:
    """Deterministic stand-in for ViT embeddings, keyed by (seed, frame).

    Uses a counter-based generator so the same (seed, frame) pair yields the
    same (h, w, d) float32 block on every platform and call.
    """
    if seed < 0 or frame_index < 0:
        raise InvalidInput("seed and frame_index must be non-negative")
    key = np.array([seed, frame_index], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal((h, w, d), dtype=np.float32)


def save_tensor(path: str | Path, values: np.ndarray, meta: dict) -> None:
    """Row-major little-endian f32 binary plus a JSON sidecar header."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f4")
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(arr.tobytes(order="C"))
    tmp.replace(path)
    sidecar = {
        "shape": list(arr.shape),
        "dtype": "f32",
        "order": "row-major",
        "meta": meta,
    }
    side_path = Path(str(path) + ".json")
    side_tmp = side_path.with_suffix(".tmp")
    side_tmp.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    side_tmp.replace(side_path)


def load_tensor(path: str | Path) -> tuple[np.ndarray, dict]:
    """Load a tensor written by :func:`save_tensor`; returns (values, meta)."""
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    if sidecar.get("dtype") != "f32" or sidecar.get("order") != "row-major":
        raise InvalidInput(f"{path}: unsupported tensor encoding {sidecar}")
    shape = tuple(sidecar["shape"])
    values = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(shape)
    return values, sidecar.get("meta", {})
