"""Command-line pipeline: sample, encode, ground-eval, bench, synth.

Configuration precedence is CLI flags > config file (a flat JSON document)
> built-in defaults.  All randomness (synthetic scenes, pseudo-features,
head init) flows from the single --seed flag.  Exit codes: 0 success,
1 fatal, 2 partial (some scenes skipped).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import kernels
from .coverage import SceneCoverage, read_cache, voxelize, write_cache
from .errors import EmptyScene, FatalConfig, InvalidInput
from .geometry import backproject
from .grounding import eval_metrics, read_grounding_records
from .ingest import (
    SceneManifest,
    SyntheticSceneSpec,
    export_scene,
    generate_synthetic,
    load_scene,
)
from .posenc import (
    MlpParams,
    PoolMode,
    encode_patch_grid,
    mlp_forward,
    pool_patch_coords,
    pseudo_features,
    save_tensor,
)
from .sampler import SamplerConfig, Strategy, run_strategy, write_result_json

log = logging.getLogger("scene_sampler")

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2

DEFAULTS = {
    "strategy": "mc",
    "budget": 32,
    "threshold": None,
    "voxel_size": 0.1,
    "pixel_stride": 1,
    "patch_size": 14,
    "pool": "avg",
    "pe": "sin",
    "grid_res": 0.02,
    "dim": 64,
    "tau": 0.07,
    "depth_scale": 1000.0,
    "seed": 0,
    "threads": 1,
    "out": "out",
    "scenes": None,
    "all_frames": False,
    "iou_thresholds": [0.25, 0.5],
    "bench_scenes": 10,
    "bench_frames": 100,
    "n_scenes": 1,
    "n_frames": 24,
    "n_objects": 6,
    "width": 64,
    "height": 48,
    "room": [6.0, 5.0, 3.0],
}


def _setup_logging():
    level = os.environ.get("SCENE_SAMPLER_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scene-sampler", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (CLI flags take precedence)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed for all randomness")
    common.add_argument("--threads", type=int, help="scene-level worker threads")

    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument("--strategy", choices=["uniform", "mc"])
    sampling.add_argument("--budget", type=int)
    sampling.add_argument("--threshold", type=float, help="adaptive coverage stop in (0,1]")
    sampling.add_argument("--voxel-size", dest="voxel_size", type=float)
    sampling.add_argument("--pixel-stride", dest="pixel_stride", type=int)
    sampling.add_argument("--depth-scale", dest="depth_scale", type=float)

    encoding = argparse.ArgumentParser(add_help=False)
    encoding.add_argument("--patch-size", dest="patch_size", type=int)
    encoding.add_argument("--pool", choices=["avg", "center", "minmax"])
    encoding.add_argument("--pe", choices=["sin", "mlp", "none"])
    encoding.add_argument("--grid-res", dest="grid_res", type=float)
    encoding.add_argument("--dim", type=int)
    encoding.add_argument("--tau", type=float)

    p = sub.add_parser("sample", parents=[common, sampling], help="select frames per scene")
    p.add_argument("root", help="directory of scene subdirectories")
    p.add_argument("--scenes", nargs="+", help="scene ids (default: all subdirectories)")

    p = sub.add_parser("encode", parents=[common, sampling, encoding], help="fused embeddings per selected frame")
    p.add_argument("root")
    p.add_argument("--scenes", nargs="+")
    p.add_argument("--all-frames", dest="all_frames", action="store_true", default=None,
                   help="encode every frame instead of a prior sample result")

    p = sub.add_parser("ground-eval", parents=[common], help="grounding metrics from JSONL records")
    p.add_argument("records", help="JSONL with {query_id, predicted, target} per line")
    p.add_argument("--iou-thresholds", dest="iou_thresholds", nargs="+", type=float)

    p = sub.add_parser("bench", parents=[common, sampling, encoding], help="timing report on synthetic scenes")
    p.add_argument("--bench-scenes", dest="bench_scenes", type=int)
    p.add_argument("--bench-frames", dest="bench_frames", type=int)
    p.add_argument("--n-objects", dest="n_objects", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic scene directories")
    p.add_argument("--n-scenes", dest="n_scenes", type=int)
    p.add_argument("--n-frames", dest="n_frames", type=int)
    p.add_argument("--n-objects", dest="n_objects", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--room", nargs=3, type=float, metavar=("X", "Y", "Z"))

    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    """CLI flags > config file > defaults; unknown config keys are rejected."""
    cfg = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FatalConfig(f"cannot read config {path}: {exc}") from exc
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise FatalConfig(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["command"] = args.command
    for key in ("root", "records"):
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    return cfg


def _discover_scenes(root: Path, explicit: list[str] | None) -> list[str]:
    if explicit:
        return list(explicit)
    if not root.is_dir():
        raise FatalConfig(f"scene root {root} is not a directory")
    found = sorted(p.name for p in root.iterdir() if (p / "intrinsic.txt").is_file())
    if not found:
        raise EmptyScene(f"no scenes under {root}")
    return found


def _sampler_config(cfg: dict) -> SamplerConfig:
    return SamplerConfig(
        budget=cfg["budget"],
        coverage_threshold=cfg["threshold"],
        strategy=Strategy(cfg["strategy"]),
    )


def _scene_voxel_sets(manifest: SceneManifest, cfg: dict, cache_path: Path):
    """Per-frame voxel sets, reusing the binary cache when it matches."""
    if cache_path.is_file():
        try:
            sets = read_cache(cache_path)
            if sets and sets[0].voxel_size == cfg["voxel_size"] and len(sets) == len(manifest):
                return sets
            log.info("%s: stale cache, re-voxelizing", cache_path)
        except InvalidInput as exc:
            log.warning("%s: unreadable cache (%s), re-voxelizing", cache_path, exc)
    sets = []
    for pos in range(len(manifest)):
        frame = manifest.camera_frame(pos)
        cmap = backproject(frame.depth, frame.intrinsics, frame.extrinsics)
        sets.append(voxelize(cmap, cfg["voxel_size"], frame.index, cfg["pixel_stride"]))
    tmp = cache_path.with_suffix(cache_path.suffix + ".tmp")
    write_cache(tmp, sets)
    tmp.replace(cache_path)
    return sets


def _cache_path(out_dir: Path, scene_id: str, pixel_stride: int) -> Path:
    # stride is not recorded inside the cache format, so it goes in the name
    suffix = ".voxels" if pixel_stride == 1 else f".s{pixel_stride}.voxels"
    return out_dir / f"{scene_id}{suffix}"


def _sample_scene(root: Path, scene_id: str, cfg: dict, out_dir: Path) -> dict:
    manifest = load_scene(root, scene_id, cfg["depth_scale"])
    sets = _scene_voxel_sets(manifest, cfg, _cache_path(out_dir, scene_id, cfg["pixel_stride"]))
    scene = SceneCoverage.from_voxel_sets(sets)
    t0 = time.perf_counter()
    result = run_strategy(scene, _sampler_config(cfg))
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    doc = result.to_json_dict(
        scene_id=scene_id,
        strategy=Strategy(cfg["strategy"]),
        voxel_size=cfg["voxel_size"],
        budget=cfg["budget"],
        threshold=cfg["threshold"],
        elapsed_ms=elapsed_ms,
    )
    write_result_json(out_dir / f"{scene_id}.sample.json", doc)
    return doc


def cmd_sample(cfg: dict) -> int:
    root = Path(cfg["root"])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        scene_ids = _discover_scenes(root, cfg.get("scenes"))
    except (FatalConfig, EmptyScene) as exc:
        log.error("%s", exc)
        return EXIT_FATAL

    def run(scene_id: str):
        return _sample_scene(root, scene_id, cfg, out_dir)

    ok, failed = _run_batch(scene_ids, run, cfg["threads"])
    return _batch_exit(ok, failed)


def _run_batch(scene_ids, fn, threads: int):
    ok, failed = [], []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = {pool.submit(fn, sid): sid for sid in scene_ids}
        for fut, sid in futures.items():
            try:
                fut.result()
                ok.append(sid)
            except Exception as exc:  # per-scene failures never abort the batch
                log.error("scene %s failed: %s", sid, exc)
                failed.append(sid)
    return ok, failed


def _batch_exit(ok, failed) -> int:
    if not ok:
        return EXIT_FATAL
    if failed:
        return EXIT_PARTIAL
    return EXIT_OK


def _encode_frame(manifest: SceneManifest, frame_index: int, cfg: dict, scene_out: Path) -> None:
    pos = manifest.frame_position(frame_index)
    frame = manifest.camera_frame(pos)
    cmap = backproject(frame.depth, frame.intrinsics, frame.extrinsics)
    grid = pool_patch_coords(cmap, cfg["patch_size"], PoolMode(cfg["pool"]))
    hp, wp = grid.shape
    d = cfg["dim"]

    if cfg["pe"] == "sin":
        pe_values = encode_patch_grid(grid, d, cfg["grid_res"]).values
    elif cfg["pe"] == "mlp":
        # minmax pooling yields 6 coordinate channels, so size the MLP input
        # to whatever the pooling mode produced
        params = MlpParams.seeded(cfg["seed"], grid.coords.shape[-1], d, d)
        pe_values, _ = mlp_forward(params, grid.coords)
        pe_values = np.where(grid.valid[..., None], pe_values, 0.0)
    else:
        pe_values = np.zeros((hp, wp, d))

    visual = pseudo_features(cfg["seed"], frame_index, hp, wp, d).astype(np.float64)
    fused = visual + pe_values
    save_tensor(
        scene_out / f"frame_{frame_index:06d}.f32",
        fused,
        meta={"frame": frame_index, "mode": cfg["pool"], "grid_resolution": cfg["grid_res"]},
    )


def _encode_scene(root: Path, scene_id: str, cfg: dict, out_dir: Path) -> None:
    manifest = load_scene(root, scene_id, cfg["depth_scale"])
    if cfg["all_frames"]:
        selected = [info.index for info in manifest.frames]
    else:
        sample_path = out_dir / f"{scene_id}.sample.json"
        if not sample_path.is_file():
            raise FatalConfig(f"{sample_path} missing; run `sample` first or pass --all-frames")
        selected = json.loads(sample_path.read_text())["selected"]
    scene_out = out_dir / scene_id
    scene_out.mkdir(parents=True, exist_ok=True)
    for frame_index in selected:
        _encode_frame(manifest, frame_index, cfg, scene_out)


def cmd_encode(cfg: dict) -> int:
    root = Path(cfg["root"])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        scene_ids = _discover_scenes(root, cfg.get("scenes"))
    except (FatalConfig, EmptyScene) as exc:
        log.error("%s", exc)
        return EXIT_FATAL
    missing = [
        sid for sid in scene_ids
        if not cfg["all_frames"] and not (out_dir / f"{sid}.sample.json").is_file()
    ]
    if missing:
        log.error("missing sample results for %s; run `sample` first or pass --all-frames", missing)
        return EXIT_FATAL

    def run(scene_id: str):
        return _encode_scene(root, scene_id, cfg, out_dir)

    ok, failed = _run_batch(scene_ids, run, cfg["threads"])
    return _batch_exit(ok, failed)


def cmd_ground_eval(cfg: dict) -> int:
    records_path = Path(cfg["records"])
    if not records_path.is_file():
        log.error("records file %s not found", records_path)
        return EXIT_FATAL
    records, skipped = read_grounding_records(records_path)
    if not records:
        log.error("%s: no valid records", records_path)
        return EXIT_FATAL
    metrics = eval_metrics(
        [r["predicted"] for r in records],
        [r["target"] for r in records],
        cfg["iou_thresholds"],
    )
    metrics["n_skipped"] = skipped
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_result_json(out_dir / "metrics.json", metrics)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return EXIT_PARTIAL if skipped else EXIT_OK


def _percentile(values: list[float], q: float) -> float:
    return float(np.percentile(np.asarray(values), q)) if values else 0.0


def _stage_stats(samples: list[float]) -> dict:
    return {
        "mean_ms": float(np.mean(samples)) if samples else 0.0,
        "p95_ms": _percentile(samples, 95.0),
        "n": len(samples),
    }


def cmd_bench(cfg: dict) -> int:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    stages = {"voxelize": [], "greedy": [], "encode": []}
    scenes = []
    for i in range(cfg["bench_scenes"]):
        spec = SyntheticSceneSpec(
            seed=cfg["seed"] + i,
            n_frames=cfg["bench_frames"],
            n_objects=cfg["n_objects"],
            width=cfg["width"],
            height=cfg["height"],
        )
        manifest, _ = generate_synthetic(spec)
        scenes.append(manifest)

    coverages = []
    for manifest in scenes:
        cmaps = []
        t0 = time.perf_counter()
        sets = []
        for pos in range(len(manifest)):
            frame = manifest.camera_frame(pos)
            cmap = backproject(frame.depth, frame.intrinsics, frame.extrinsics)
            cmaps.append(cmap)
            sets.append(voxelize(cmap, cfg["voxel_size"], frame.index))
        stages["voxelize"].append((time.perf_counter() - t0) * 1000.0)

        scene = SceneCoverage.from_voxel_sets(sets)
        coverages.append(scene)
        t0 = time.perf_counter()
        result = run_strategy(scene, _sampler_config(cfg))
        stages["greedy"].append((time.perf_counter() - t0) * 1000.0)

        t0 = time.perf_counter()
        for frame_index in result.selected:
            pos = manifest.frame_position(frame_index)
            grid = pool_patch_coords(cmaps[pos], cfg["patch_size"], PoolMode(cfg["pool"]))
            hp, wp = grid.shape
            pe = encode_patch_grid(grid, cfg["dim"], cfg["grid_res"])
            visual = pseudo_features(cfg["seed"], frame_index, hp, wp, cfg["dim"])
            _ = visual + pe.values
        stages["encode"].append((time.perf_counter() - t0) * 1000.0)

    # compiled-vs-python comparison on the kernel-bound stages; selections
    # must agree bit-for-bit across backends
    backends = {}
    reference = None
    probe = scenes[0]
    probe_coverages = coverages[: min(3, len(coverages))]
    for name in sorted(kernels.available_backends()):
        with kernels.forced_backend(name):
            t0 = time.perf_counter()
            for pos in range(len(probe)):
                frame = probe.camera_frame(pos)
                cmap = backproject(frame.depth, frame.intrinsics, frame.extrinsics)
                voxelize(cmap, cfg["voxel_size"], frame.index)
            vox_ms = (time.perf_counter() - t0) * 1000.0
            t0 = time.perf_counter()
            selections = [run_strategy(s, _sampler_config(cfg)).selected for s in probe_coverages]
            greedy_ms = (time.perf_counter() - t0) * 1000.0
        if reference is None:
            reference = selections
        elif selections != reference:
            log.error("backend %s disagrees with reference selection", name)
            return EXIT_FATAL
        backends[name] = {"voxelize_ms": vox_ms, "greedy_ms": greedy_ms}

    report = {
        "stages": {name: _stage_stats(vals) for name, vals in stages.items()},
        "backends": backends,
        "active_backend": kernels.BACKEND,
        "config": {k: cfg[k] for k in ("voxel_size", "budget", "strategy", "bench_scenes", "bench_frames")},
    }
    write_result_json(out_dir / "bench.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_synth(cfg: dict) -> int:
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(cfg["n_scenes"]):
        spec = SyntheticSceneSpec(
            seed=cfg["seed"] + i,
            room_extent=tuple(cfg["room"]),
            n_frames=cfg["n_frames"],
            n_objects=cfg["n_objects"],
            width=cfg["width"],
            height=cfg["height"],
        )
        manifest, gt = generate_synthetic(spec)
        export_scene(manifest, out_dir, gt)
        log.info("wrote %s (%d frames, %d objects)", manifest.scene_id, len(manifest), len(gt.boxes))
    return EXIT_OK


COMMANDS = {
    "sample": cmd_sample,
    "encode": cmd_encode,
    "ground-eval": cmd_ground_eval,
    "bench": cmd_bench,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
        return COMMANDS[args.command](cfg)
    except (FatalConfig, EmptyScene, InvalidInput) as exc:
        log.error("%s", exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
