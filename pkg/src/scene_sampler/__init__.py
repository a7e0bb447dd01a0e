"""Geometric preprocessing, maximum-coverage frame sampling, 3D position
encoding, and grounding metrics for RGB-D indoor scans."""

from .coverage import SceneCoverage, VoxelIndex, VoxelSet, coverage_ratio, voxelize
from .errors import EmptyScene, FatalConfig, InvalidInput, ObjectNotVisible
from .geometry import (
    CameraFrame,
    CoordinateMap,
    DepthMap,
    Extrinsics,
    Intrinsics,
    backproject,
    project,
)
from .grounding import (
    GroundingBatch,
    GroundingHead,
    ObjectEmbedding,
    ObjectProposal,
    aabb_iou,
    assign_patches,
    bce_loss,
    eval_metrics,
    infonce_loss,
    pool_object_features,
    select_multi,
    select_single,
)
from .ingest import SceneManifest, SyntheticSceneSpec, generate_synthetic, load_scene
from .posenc import (
    FusedEmbedding,
    MlpParams,
    PatchCoordGrid,
    PoolMode,
    PositionEncoding,
    fuse,
    mlp_pe,
    pool_patch_coords,
    sinusoidal_pe,
)
from .sampler import (
    SamplerConfig,
    SamplingResult,
    Strategy,
    brute_force_max_coverage,
    greedy_max_coverage,
    uniform_sample,
)

__version__ = "0.1.0"

__all__ = [
    "CameraFrame",
    "CoordinateMap",
    "DepthMap",
    "EmptyScene",
    "Extrinsics",
    "FatalConfig",
    "FusedEmbedding",
    "GroundingBatch",
    "GroundingHead",
    "Intrinsics",
    "InvalidInput",
    "MlpParams",
    "ObjectEmbedding",
    "ObjectNotVisible",
    "ObjectProposal",
    "PatchCoordGrid",
    "PoolMode",
    "PositionEncoding",
    "SamplerConfig",
    "SamplingResult",
    "SceneCoverage",
    "SceneManifest",
    "Strategy",
    "SyntheticSceneSpec",
    "VoxelIndex",
    "VoxelSet",
    "aabb_iou",
    "assign_patches",
    "backproject",
    "bce_loss",
    "brute_force_max_coverage",
    "coverage_ratio",
    "eval_metrics",
    "fuse",
    "generate_synthetic",
    "greedy_max_coverage",
    "infonce_loss",
    "load_scene",
    "mlp_pe",
    "pool_object_features",
    "pool_patch_coords",
    "project",
    "select_multi",
    "select_single",
    "sinusoidal_pe",
    "uniform_sample",
    "voxelize",
]
