"""Scene loading (ScanNet-style directory layout) and synthetic scene generation.

Expected on-disk layout, so real scans drop in unmodified:

    root/<scene_id>/
        intrinsic.txt     whitespace 3x3 or 4x4 row-major matrix
        depth/<N>.png     16-bit single-channel, value / depth_scale = meters
        pose/<N>.txt      4x4 row-major camera-to-world matrix

The synthetic generator renders exact z-buffer depth of a room of axis-aligned
boxes with a CPU ray-slab intersector (no rasterization), which keeps every
rendered depth analytically reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyScene, FatalConfig, InvalidInput
from .geometry import (
    CameraFrame,
    CoordinateMap,
    DepthMap,
    Extrinsics,
    Intrinsics,
    load_depth_png,
    load_extrinsics,
    load_intrinsics,
    save_depth_png,
)
from .grounding import ObjectProposal

log = logging.getLogger(__name__)

DEFAULT_DEPTH_SCALE = 1000.0
DEFAULT_FPS = 3.0


@dataclass
class FrameInfo:
    """Frame descriptor: pose plus a depth source (path or in-memory)."""

    index: int
    extrinsics: Extrinsics
    depth_path: str | None = None
    depth_values: np.ndarray | None = field(default=None, repr=False)
    rgb_path: str | None = None


@dataclass
class SceneManifest:
    """Sorted, validated list of frame descriptors for one scene."""

    scene_id: str
    intrinsics: Intrinsics
    frames: list[FrameInfo]
    depth_scale: float = DEFAULT_DEPTH_SCALE
    fps_extracted: float = DEFAULT_FPS

    def __post_init__(self):
        self.frames = sorted(self.frames, key=lambda f: f.index)
        indices = [f.index for f in self.frames]
        if len(set(indices)) != len(indices):
            raise InvalidInput(f"scene {self.scene_id}: duplicate frame indices")

    def __len__(self) -> int:
        return len(self.frames)

    def camera_frame(self, pos: int) -> CameraFrame:
        """Materialize frame at list position ``pos`` (loads depth if on disk)."""
        info = self.frames[pos]
        if info.depth_values is not None:
            depth = DepthMap.from_values(info.depth_values)
        elif info.depth_path is not None:
            depth = load_depth_png(info.depth_path, self.depth_scale)
        else:
            raise InvalidInput(f"frame {info.index} has no depth source")
        return CameraFrame(
            index=info.index,
            depth=depth,
            intrinsics=self.intrinsics,
            extrinsics=info.extrinsics,
            rgb_path=info.rgb_path,
            depth_path=info.depth_path,
        )

    def frame_position(self, frame_index: int) -> int:
        for pos, info in enumerate(self.frames):
            if info.index == frame_index:
                return pos
        raise InvalidInput(f"scene {self.scene_id} has no frame {frame_index}")


def load_scene(
    root_path: str | Path,
    scene_id: str,
    depth_scale: float = DEFAULT_DEPTH_SCALE,
    fps_extracted: float = DEFAULT_FPS,
) -> SceneManifest:
    """Load a scene directory; frames with unparseable poses are skipped."""
    scene_dir = Path(root_path) / scene_id
    intrinsic_path = scene_dir / "intrinsic.txt"
    if not intrinsic_path.is_file():
        raise FatalConfig(f"{scene_dir}: missing intrinsic.txt")

    depth_dir = scene_dir / "depth"
    pose_dir = scene_dir / "pose"
    candidates = []
    for depth_path in sorted(depth_dir.glob("*.png")):
        try:
            index = int(depth_path.stem)
        except ValueError:
            log.warning("%s: non-numeric depth filename, skipped", depth_path)
            continue
        candidates.append((index, depth_path))
    candidates.sort()

    from PIL import Image

    intrinsics = None
    frames = []
    for index, depth_path in candidates:
        pose_path = pose_dir / f"{depth_path.stem}.txt"
        try:
            extr = load_extrinsics(pose_path)
        except (InvalidInput, OSError) as exc:
            log.warning("frame %d: unusable pose (%s), skipped", index, exc)
            continue
        with Image.open(depth_path) as img:
            size = img.size
        if intrinsics is None:
            intrinsics = load_intrinsics(intrinsic_path, width=size[0], height=size[1])
        elif size != (intrinsics.width, intrinsics.height):
            log.warning(
                "frame %d: size %s differs from scene %dx%d, skipped",
                index, size, intrinsics.width, intrinsics.height,
            )
            continue
        frames.append(FrameInfo(index=index, extrinsics=extr, depth_path=str(depth_path)))

    if not frames or intrinsics is None:
        raise EmptyScene(f"{scene_dir}: no loadable frames")
    return SceneManifest(
        scene_id=scene_id,
        intrinsics=intrinsics,
        frames=frames,
        depth_scale=depth_scale,
        fps_extracted=fps_extracted,
    )


# --- synthetic scenes -----------------------------------------------------


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Deterministic desk-scale test fixture parameters."""

    seed: int = 0
    room_extent: tuple[float, float, float] = (6.0, 5.0, 3.0)
    n_frames: int = 24
    n_objects: int = 6
    width: int = 64
    height: int = 48
    intrinsics: Intrinsics | None = None

    def __post_init__(self):
        if min(self.room_extent) <= 0:
            raise InvalidInput(f"room extents must be positive, got {self.room_extent}")
        if self.n_frames < 1 or self.n_objects < 0:
            raise InvalidInput("n_frames must be >= 1 and n_objects >= 0")
        if self.width < 2 or self.height < 2:
            raise InvalidInput("image must be at least 2x2")

    def resolved_intrinsics(self) -> Intrinsics:
        if self.intrinsics is not None:
            return self.intrinsics
        return Intrinsics(
            fx=0.9 * self.width,
            fy=0.9 * self.width,
            cx=self.width / 2.0,
            cy=self.height / 2.0,
            width=self.width,
            height=self.height,
        )


@dataclass
class SyntheticGroundTruth:
    """Exact render byproducts: boxes, hit points, and per-pixel object ids."""

    boxes: list[ObjectProposal]
    room_lo: np.ndarray
    room_hi: np.ndarray
    hit_points: list[np.ndarray]
    hit_object_ids: list[np.ndarray]

    def frame_voxels(self, pos: int, voxel_size: float) -> set[tuple[int, int, int]]:
        """Voxels covered by frame ``pos``, binned directly from the exact hits."""
        cells = np.floor(self.hit_points[pos] / voxel_size).astype(np.int64)
        return set(map(tuple, cells.reshape(-1, 3).tolist()))

    def visible_objects(self, pos: int) -> set[int]:
        ids = np.unique(self.hit_object_ids[pos])
        return {int(i) for i in ids if i >= 0}


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> Extrinsics:
    """Camera-to-world pose looking from eye toward target (x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-9:
        raise InvalidInput("look_at target coincides with eye")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise InvalidInput("look_at direction parallel to up vector")
    right = right / norm
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=1)
    return Extrinsics(rotation=rotation, translation=eye)


def _ray_dirs(intr: Intrinsics) -> np.ndarray:
    jj, ii = np.meshgrid(
        np.arange(intr.width, dtype=np.float64), np.arange(intr.height, dtype=np.float64)
    )
    dirs = np.empty((intr.height, intr.width, 3), dtype=np.float64)
    dirs[..., 0] = (jj - intr.cx) / intr.fx
    dirs[..., 1] = (ii - intr.cy) / intr.fy
    dirs[..., 2] = 1.0
    return dirs


def render_depth(
    eye: np.ndarray,
    rotation: np.ndarray,
    intr: Intrinsics,
    room_lo: np.ndarray,
    room_hi: np.ndarray,
    boxes: list[ObjectProposal],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact z-buffer depth from inside a room of axis-aligned boxes.

    Returns (depth, hit_points, hit_object_ids); depth is the camera-space z
    (the ray direction has unit z in camera coordinates, so the slab
    parameter equals the z-buffer depth).  Object id -1 marks the room shell.
    """
    dirs_w = _ray_dirs(intr) @ np.asarray(rotation, dtype=np.float64).T
    eye = np.asarray(eye, dtype=np.float64)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (room_lo - eye) / dirs_w
        t_hi = (room_hi - eye) / dirs_w
        depth = np.minimum.reduce(np.maximum(t_lo, t_hi), axis=-1)
        hit_ids = np.full(depth.shape, -1, dtype=np.int32)
        for box in boxes:
            t1 = (box.min_corner - eye) / dirs_w
            t2 = (box.max_corner - eye) / dirs_w
            t_near = np.maximum.reduce(np.minimum(t1, t2), axis=-1)
            t_far = np.minimum.reduce(np.maximum(t1, t2), axis=-1)
            closer = (t_near <= t_far) & (t_near > 0) & (t_near < depth)
            depth = np.where(closer, t_near, depth)
            hit_ids = np.where(closer, np.int32(box.id), hit_ids)

    hit_points = eye + depth[..., None] * dirs_w
    return depth, hit_points, hit_ids


def generate_synthetic(spec: SyntheticSceneSpec) -> tuple[SceneManifest, SyntheticGroundTruth]:
    """Deterministic scene: a camera wanders a room of boxes with dwell pauses.

    The room is jittered off the voxel grid so no box face sits on a cell
    boundary; the dwell segments imitate a handheld scan (long runs of
    near-identical frames), which is what makes index-uniform sampling
    wasteful compared to coverage-driven selection.
    """
    rng = np.random.default_rng(spec.seed)
    ex, ey, ez = spec.room_extent
    center = np.array([0.0, 0.0, ez / 2.0]) + rng.uniform(-0.043, 0.043, size=3)
    half = np.array([ex, ey, ez]) / 2.0
    room_lo, room_hi = center - half, center + half

    half_min = min(ex, ey) / 2.0
    boxes = []
    for oid in range(spec.n_objects):
        extent = rng.uniform(0.15, min(0.4 * half_min, ez / 3.0), size=3)
        reach = 0.62 * half_min - extent[:2] / 2.0
        c_xy = center[:2] + rng.uniform(-1.0, 1.0, size=2) * np.maximum(reach, 0.05)
        c_z = room_lo[2] + extent[2] / 2.0 + rng.uniform(0.0, 0.6) * (ez - extent[2])
        boxes.append(ObjectProposal(id=oid, center=np.array([*c_xy, c_z]), extent=extent))

    intr = spec.resolved_intrinsics()
    angle = rng.uniform(0.0, 2 * np.pi)
    frames = []
    hit_points = []
    hit_ids_all = []
    k = 0
    while k < spec.n_frames:
        dwell = int(rng.integers(1, 6))
        step = rng.uniform(0.35, 1.1)
        radius = rng.uniform(0.72, 0.9) * half_min
        eye_z = room_lo[2] + rng.uniform(0.35, 0.7) * ez
        target = center + rng.uniform(-0.25, 0.25, size=3)
        for _ in range(min(dwell, spec.n_frames - k)):
            jitter = rng.uniform(-0.02, 0.02)
            eye = center + np.array(
                [radius * np.cos(angle + jitter), radius * np.sin(angle + jitter), 0.0]
            )
            eye[2] = eye_z + rng.uniform(-0.01, 0.01)
            extr = look_at(eye, target)
            depth, pts, ids = render_depth(eye, extr.rotation, intr, room_lo, room_hi, boxes)
            frames.append(FrameInfo(index=k, extrinsics=extr, depth_values=depth))
            hit_points.append(pts)
            hit_ids_all.append(ids)
            k += 1
        angle += step

    manifest = SceneManifest(
        scene_id=f"synthetic-{spec.seed}",
        intrinsics=intr,
        frames=frames,
    )
    gt = SyntheticGroundTruth(
        boxes=boxes,
        room_lo=room_lo,
        room_hi=room_hi,
        hit_points=hit_points,
        hit_object_ids=hit_ids_all,
    )
    return manifest, gt


def export_scene(
    manifest: SceneManifest,
    root_path: str | Path,
    ground_truth: SyntheticGroundTruth | None = None,
) -> Path:
    """Write a manifest to the on-disk layout (depth PNGs quantized).

    Synthetic ground-truth boxes, when given, are written to objects.json.
    """
    scene_dir = Path(root_path) / manifest.scene_id
    (scene_dir / "depth").mkdir(parents=True, exist_ok=True)
    (scene_dir / "pose").mkdir(parents=True, exist_ok=True)
    np.savetxt(scene_dir / "intrinsic.txt", manifest.intrinsics.matrix, fmt="%.17g")
    for pos, info in enumerate(manifest.frames):
        frame = manifest.camera_frame(pos)
        save_depth_png(scene_dir / "depth" / f"{info.index}.png", frame.depth, manifest.depth_scale)
        np.savetxt(scene_dir / "pose" / f"{info.index}.txt", info.extrinsics.matrix, fmt="%.17g")
    if ground_truth is not None:
        import json

        doc = [
            {"id": b.id, "center": b.center.tolist(), "extent": b.extent.tolist()}
            for b in ground_truth.boxes
        ]
        (scene_dir / "objects.json").write_text(json.dumps(doc, indent=2) + "\n")
    return scene_dir


def backproject_manifest(manifest: SceneManifest, pos: int) -> CoordinateMap:
    """Convenience: materialize frame ``pos`` and back-project it."""
    from .geometry import backproject

    frame = manifest.camera_frame(pos)
    return backproject(frame.depth, frame.intrinsics, frame.extrinsics)
