"""Frame selection by greedy maximum coverage or uniform spacing.

The greedy selector is the lazy-evaluation variant: cached marginal gains are
upper bounds (coverage is submodular), so a candidate is selected only once
its gain has been recomputed in the current round.  Tie-breaking is by lowest
frame index, which makes the output identical to the naive argmax loop and
independent of any internal parallelism.
"""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import kernels
from .coverage import SceneCoverage
from .errors import InvalidInput

BRUTE_FORCE_MAX_FRAMES = 20

DEFAULT_BUDGET = 32
DEFAULT_THRESHOLD = 0.95


class Strategy(str, Enum):
    UNIFORM = "uniform"
    MAX_COVERAGE = "mc"


@dataclass(frozen=True)
class SamplerConfig:
    """Frame budget, optional adaptive stop threshold, and strategy.

    The adaptive default (budget 32, threshold 0.95) stops once at least 95%
    of the scene's voxels are covered or 32 frames are selected.
    """

    budget: int = DEFAULT_BUDGET
    coverage_threshold: float | None = None
    strategy: Strategy = Strategy.MAX_COVERAGE

    def __post_init__(self):
        if self.budget < 1:
            raise InvalidInput(f"budget must be >= 1, got {self.budget}")
        if self.coverage_threshold is not None and not (0 < self.coverage_threshold <= 1):
            raise InvalidInput(
                f"coverage_threshold must be in (0, 1], got {self.coverage_threshold}"
            )

    @classmethod
    def adaptive(cls) -> "SamplerConfig":
        return cls(budget=DEFAULT_BUDGET, coverage_threshold=DEFAULT_THRESHOLD)


@dataclass
class SamplingResult:
    """Selected frame indices in selection order plus the |U| trajectory."""

    selected: list[int]
    covered_after_each: list[int]
    final_ratio: float

    def to_json_dict(
        self,
        scene_id: str,
        strategy: Strategy,
        voxel_size: float,
        budget: int,
        threshold: float | None,
        elapsed_ms: float,
    ) -> dict:
        return {
            "scene_id": scene_id,
            "strategy": strategy.value,
            "voxel_size": voxel_size,
            "budget": budget,
            "threshold": threshold,
            "selected": list(self.selected),
            "coverage_trajectory": list(self.covered_after_each),
            "final_ratio": self.final_ratio,
            "elapsed_ms": elapsed_ms,
        }


def greedy_max_coverage(scene: SceneCoverage, cfg: SamplerConfig) -> SamplingResult:
    """Iteratively select the frame with the largest new-voxel count.

    Stops at the budget, once the coverage ratio reaches the configured
    threshold (checked after each addition), or when no candidate adds a new
    voxel.  Ties break toward the lowest frame index.
    """
    if scene.n_frames == 0:
        raise InvalidInput("scene has no frames")
    frame_ids = scene.frame_universe_ids()
    indices = [s.frame_index for s in scene.per_frame]
    total = int(scene.universe_keys.shape[0])

    covered = np.zeros(total, dtype=np.uint8)
    # heap entries: (-gain, frame_index, position, round_stamp)
    heap = [
        (-int(ids.shape[0]), indices[pos], pos, 0)
        for pos, ids in enumerate(frame_ids)
    ]
    heapq.heapify(heap)

    selected: list[int] = []
    trajectory: list[int] = []
    covered_count = 0
    stop_count = None
    if cfg.coverage_threshold is not None:
        stop_count = cfg.coverage_threshold * total

    round_no = 0
    while len(selected) < cfg.budget and heap:
        round_no += 1
        while True:
            neg_gain, frame_index, pos, stamp = heapq.heappop(heap)
            if stamp == round_no:
                break
            gain = kernels.count_uncovered(frame_ids[pos], covered)
            heapq.heappush(heap, (-int(gain), frame_index, pos, round_no))
        gain = -neg_gain
        if gain == 0:
            break
        covered_count += kernels.mark_covered(frame_ids[pos], covered)
        selected.append(frame_index)
        trajectory.append(covered_count)
        if stop_count is not None and covered_count >= stop_count:
            break

    final_ratio = 1.0 if total == 0 else covered_count / total
    return SamplingResult(selected=selected, covered_after_each=trajectory, final_ratio=final_ratio)


def uniform_sample(n_frames: int, budget: int) -> list[int]:
    """Evenly spaced frame positions: r -> floor(r * n / m), m = min(budget, n)."""
    if n_frames < 1:
        raise InvalidInput(f"n_frames must be >= 1, got {n_frames}")
    if budget < 1:
        raise InvalidInput(f"budget must be >= 1, got {budget}")
    m = min(budget, n_frames)
    return [r * n_frames // m for r in range(m)]


def uniform_sampling_result(scene: SceneCoverage, cfg: SamplerConfig) -> SamplingResult:
    """Uniform selection over the scene's frames with coverage bookkeeping."""
    positions = uniform_sample(scene.n_frames, cfg.budget)
    frame_ids = scene.frame_universe_ids()
    total = int(scene.universe_keys.shape[0])
    covered = np.zeros(total, dtype=np.uint8)
    selected = []
    trajectory = []
    count = 0
    for pos in positions:
        count += kernels.mark_covered(frame_ids[pos], covered)
        selected.append(scene.per_frame[pos].frame_index)
        trajectory.append(count)
    final_ratio = 1.0 if total == 0 else count / total
    return SamplingResult(selected=selected, covered_after_each=trajectory, final_ratio=final_ratio)


def run_strategy(scene: SceneCoverage, cfg: SamplerConfig) -> SamplingResult:
    if cfg.strategy is Strategy.MAX_COVERAGE:
        return greedy_max_coverage(scene, cfg)
    return uniform_sampling_result(scene, cfg)


def brute_force_max_coverage(scene: SceneCoverage, budget: int) -> tuple[tuple[int, ...], int]:
    """Exact maximum coverage by exhaustive enumeration (oracle, n <= 20).

    Coverage is monotone, so the optimum over subsets of size <= budget is
    attained at size exactly min(budget, n); only that size is enumerated.
    """
    n = scene.n_frames
    if n > BRUTE_FORCE_MAX_FRAMES:
        raise InvalidInput(f"brute force capped at {BRUTE_FORCE_MAX_FRAMES} frames, got {n}")
    if budget < 1:
        raise InvalidInput(f"budget must be >= 1, got {budget}")
    masks = []
    for ids in scene.frame_universe_ids():
        m = 0
        for v in ids.tolist():
            m |= 1 << v
        masks.append(m)
    indices = [s.frame_index for s in scene.per_frame]
    size = min(budget, n)
    best_count = -1
    best_subset: tuple[int, ...] = ()
    for combo in itertools.combinations(range(n), size):
        union = 0
        for pos in combo:
            union |= masks[pos]
        count = union.bit_count()
        if count > best_count:
            best_count = count
            best_subset = tuple(indices[pos] for pos in combo)
    return best_subset, best_count


def write_result_json(path: str | Path, doc: dict) -> None:
    """Atomic write (temp + rename) with a canonical key order."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)
