"""Shared fixtures: small cameras and coordinate-map builders."""

import numpy as np
import pytest

from scene_sampler.geometry import CoordinateMap, DepthMap, Extrinsics, Intrinsics


@pytest.fixture
def identity_camera():
    """fx=fy=1, principal point at the origin, identity pose, 1x1 image."""
    return Intrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=1, height=1), Extrinsics.identity()


@pytest.fixture
def vga_camera():
    """The hand-derived test camera: fx=fy=500, cx=320, cy=240, 640x480."""
    intr = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
    extr = Extrinsics(rotation=np.eye(3), translation=np.array([1.0, 2.0, 3.0]))
    return intr, extr


def make_cmap(coords, valid=None):
    """CoordinateMap from an explicit (H, W, 3) array; valid defaults to all."""
    coords = np.asarray(coords, dtype=np.float64)
    if valid is None:
        valid = np.ones(coords.shape[:2], dtype=bool)
    return CoordinateMap(coords=coords, valid=np.asarray(valid, dtype=bool))


def make_depth(values):
    return DepthMap.from_values(np.asarray(values, dtype=np.float64))
