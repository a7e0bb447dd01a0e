"""Pinhole camera model, depth back-projection, and coordinate transforms.

Conventions (fixed across the package):
  - pixel (i, j) means (row, column); the homogeneous pixel vector is
    [j, i, 1]^T,
  - pixels back-project from their integer coordinates, not (i+0.5, j+0.5),
  - extrinsics are camera-to-world (pose): world = R @ cam + t,
  - depth <= 0 or non-finite marks a pixel invalid; invalid pixels carry
    value 0 and never contribute coordinates downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInput

ROTATION_TOL = 1e-5


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics stored as four scalars plus the image size."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInput(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise InvalidInput(
                f"principal point ({self.cx}, {self.cy}) outside image "
                f"{self.width}x{self.height}"
            )

    @property
    def matrix(self) -> np.ndarray:
        """The 3x3 intrinsic matrix."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def from_matrix(cls, mat: np.ndarray, width: int, height: int) -> "Intrinsics":
        """Build from a 3x3 (or 4x4, upper-left used) intrinsic matrix."""
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape not in ((3, 3), (4, 4)):
            raise InvalidInput(f"intrinsic matrix must be 3x3 or 4x4, got {mat.shape}")
        return cls(
            fx=float(mat[0, 0]),
            fy=float(mat[1, 1]),
            cx=float(mat[0, 2]),
            cy=float(mat[1, 2]),
            width=width,
            height=height,
        )


@dataclass(frozen=True)
class Extrinsics:
    """Camera-to-world pose: a proper rotation and a translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise InvalidInput(f"rotation must be 3x3, got {rot.shape}")
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(trans)):
            raise InvalidInput("extrinsics contain non-finite values")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=ROTATION_TOL):
            raise InvalidInput("rotation is not orthonormal within 1e-5")
        if abs(np.linalg.det(rot) - 1.0) > ROTATION_TOL:
            raise InvalidInput("rotation determinant is not +1 within 1e-5")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "Extrinsics":
        """Build from a 4x4 homogeneous camera-to-world matrix."""
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape != (4, 4):
            raise InvalidInput(f"extrinsic matrix must be 4x4, got {mat.shape}")
        return cls(rotation=mat[:3, :3], translation=mat[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        """The 4x4 homogeneous camera-to-world matrix."""
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def inverse(self) -> "Extrinsics":
        """The world-to-camera transform."""
        rot_inv = self.rotation.T
        return Extrinsics(rotation=rot_inv, translation=-rot_inv @ self.translation)


@dataclass
class DepthMap:
    """Per-pixel depth in meters with a validity mask.

    Invalid pixels (depth <= 0 or non-finite on input) carry value 0.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise InvalidInput(
                f"depth {self.values.shape} and mask {self.valid.shape} must be equal 2-D shapes"
            )
        self.values = np.where(self.valid, self.values, 0.0)

    @classmethod
    def from_values(cls, values: np.ndarray) -> "DepthMap":
        """Mask out non-positive and non-finite depths."""
        values = np.asarray(values, dtype=np.float64)
        valid = np.isfinite(values) & (values > 0)
        return cls(values=values, valid=valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class CoordinateMap:
    """Per-pixel world coordinates; invalid entries are exactly zero."""

    coords: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.coords.ndim != 3 or self.coords.shape[2] != 3:
            raise InvalidInput(f"coords must be HxWx3, got {self.coords.shape}")
        if self.coords.shape[:2] != self.valid.shape:
            raise InvalidInput("coords and valid mask shapes differ")
        self.coords = np.where(self.valid[..., None], self.coords, 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


@dataclass
class CameraFrame:
    """One RGB-D observation; RGB pixels are path-only bookkeeping."""

    index: int
    depth: DepthMap
    intrinsics: Intrinsics
    extrinsics: Extrinsics
    rgb_path: str | None = None
    depth_path: str | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.index < 0:
            raise InvalidInput(f"frame index must be >= 0, got {self.index}")
        h, w = self.depth.shape
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise InvalidInput(
                f"depth {w}x{h} does not match intrinsics "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )


def backproject(depth: DepthMap, intr: Intrinsics, extr: Extrinsics) -> CoordinateMap:
    """Lift every valid depth pixel to world coordinates.

    For pixel (i, j): world = R @ (d * K^-1 @ [j, i, 1]^T) + t.  Invalid
    pixels yield the zero vector with valid=False.
    """
    h, w = depth.shape
    if (w, h) != (intr.width, intr.height):
        raise InvalidInput(
            f"depth {w}x{h} does not match intrinsics {intr.width}x{intr.height}"
        )
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d = depth.values
    cam = np.empty((h, w, 3), dtype=np.float64)
    cam[..., 0] = (jj - intr.cx) / intr.fx * d
    cam[..., 1] = (ii - intr.cy) / intr.fy * d
    cam[..., 2] = d
    world = cam @ extr.rotation.T + extr.translation
    return CoordinateMap(coords=world, valid=depth.valid.copy())


def project(point: np.ndarray, intr: Intrinsics, extr: Extrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map world points back to pixel coordinates.

    Accepts a single (3,) point or a (..., 3) batch; returns (u, v, depth)
    with u along columns and v along rows.  Non-positive depth signals a
    point behind the camera (u, v still computed, possibly non-finite).
    """
    pts = np.asarray(point, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise InvalidInput(f"points must have a trailing dimension of 3, got {pts.shape}")
    cam = (pts - extr.translation) @ extr.rotation
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam[..., 0] / z * intr.fx + intr.cx
        v = cam[..., 1] / z * intr.fy + intr.cy
    return u, v, z


def load_matrix_text(path: str | Path) -> np.ndarray:
    """Whitespace-separated row-major matrix from a plain-text file."""
    try:
        mat = np.loadtxt(path, dtype=np.float64)
    except (ValueError, OSError) as exc:
        raise InvalidInput(f"cannot parse matrix file {path}: {exc}") from exc
    return np.atleast_2d(mat)


def load_intrinsics(path: str | Path, width: int, height: int) -> Intrinsics:
    """Parse a 3x3 (or 4x4, upper-left used) intrinsic matrix file."""
    return Intrinsics.from_matrix(load_matrix_text(path), width=width, height=height)


def load_extrinsics(path: str | Path) -> Extrinsics:
    """Parse a 4x4 row-major camera-to-world pose file."""
    return Extrinsics.from_matrix(load_matrix_text(path))


def load_depth_png(path: str | Path, depth_scale: float = 1000.0) -> DepthMap:
    """Load a 16-bit single-channel PNG; value / depth_scale = meters."""
    if depth_scale <= 0:
        raise InvalidInput(f"depth_scale must be > 0, got {depth_scale}")
    with Image.open(path) as img:
        raw = np.asarray(img)
    if raw.ndim != 2:
        raise InvalidInput(f"depth PNG must be single-channel, got shape {raw.shape}")
    return DepthMap.from_values(raw.astype(np.float64) / depth_scale)


def save_depth_png(path: str | Path, depth: DepthMap, depth_scale: float = 1000.0) -> None:
    """Quantize depth to 16-bit PNG; invalid pixels write as 0."""
    raw = np.round(depth.values * depth_scale)
    if raw.max(initial=0.0) > np.iinfo(np.uint16).max:
        raise InvalidInput("depth exceeds 16-bit range at this depth_scale")
    Image.fromarray(raw.astype(np.uint16)).save(path)
