"""Voxelization, coverage ratios, and the binary voxel cache."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scene_sampler.coverage import (
    CACHE_MAGIC,
    SceneCoverage,
    VoxelIndex,
    VoxelSet,
    coverage_ratio,
    read_cache,
    voxelize,
    write_cache,
)
from scene_sampler.errors import InvalidInput

from conftest import make_cmap


def scene_from_sets(*voxel_lists, voxel_size=1.0):
    sets = [
        VoxelSet.from_voxels(k, [(v, 0, 0) for v in vs], voxel_size)
        for k, vs in enumerate(voxel_lists)
    ]
    return SceneCoverage.from_voxel_sets(sets), sets


class TestVoxelize:
    def test_all_invalid_gives_empty_set(self):
        cmap = make_cmap(np.zeros((2, 2, 3)), valid=np.zeros((2, 2), dtype=bool))
        vs = voxelize(cmap, 0.1, frame_index=0)
        assert len(vs) == 0
        assert vs.voxels == frozenset()

    def test_floor_semantics_including_negatives(self):
        cmap = make_cmap([[[0.05, 0.15, -0.05]]])
        vs = voxelize(cmap, 0.1, frame_index=0)
        assert vs.voxels == {VoxelIndex(0, 1, -1)}

    def test_pixels_in_one_cell_deduplicate(self):
        """Brute-force binning of 4 points inside [0, 0.1)^3 yields one cell."""
        pts = np.array(
            [[[0.01, 0.02, 0.03], [0.09, 0.099, 0.0]],
             [[0.05, 0.0, 0.099], [0.0, 0.0, 0.0]]]
        )
        expected = {tuple(int(np.floor(c / 0.1)) for c in p) for p in pts.reshape(-1, 3)}
        vs = voxelize(make_cmap(pts), 0.1, frame_index=0)
        assert len(vs) == 1
        assert {tuple(v) for v in vs.voxels} == expected

    def test_exact_integer_multiples_bin_forward(self):
        cmap = make_cmap([[[0.2, -0.2, 0.0]]])
        vs = voxelize(cmap, 0.1, frame_index=0)
        assert vs.voxels == {VoxelIndex(2, -2, 0)}

    def test_invalid_voxel_size(self):
        cmap = make_cmap(np.zeros((1, 1, 3)))
        with pytest.raises(InvalidInput):
            voxelize(cmap, 0.0, frame_index=0)

    def test_pixel_stride_subsamples(self):
        coords = np.arange(16 * 3, dtype=np.float64).reshape(4, 4, 3)
        full = voxelize(make_cmap(coords), 0.5, 0)
        strided = voxelize(make_cmap(coords), 0.5, 0, pixel_stride=2)
        assert set(strided.voxels) <= set(full.voxels)
        assert len(strided) < len(full)


class TestCoverageRatio:
    def test_all_frames_cover_everything(self):
        scene, sets = scene_from_sets([1, 2, 3], [3, 4])
        assert coverage_ratio(sets, scene) == 1.0

    def test_empty_selection(self):
        scene, _ = scene_from_sets([1, 2, 3])
        assert coverage_ratio([], scene) == 0.0

    def test_hand_counted_union(self):
        """Frames {1,2,3} and {3,4} over a 5-voxel universe: first alone = 3/5."""
        scene, sets = scene_from_sets([1, 2, 3], [3, 4], [5])
        assert coverage_ratio([sets[0]], scene) == pytest.approx(0.6)

    def test_empty_universe_is_fully_covered(self):
        scene, sets = scene_from_sets([])
        assert coverage_ratio([], scene) == 1.0
        assert coverage_ratio(sets, scene) == 1.0

    def test_voxel_size_mismatch(self):
        scene, _ = scene_from_sets([1])
        alien = VoxelSet.from_voxels(9, [(0, 0, 0)], voxel_size=0.25)
        with pytest.raises(InvalidInput):
            coverage_ratio([alien], scene)


@st.composite
def voxel_family(draw):
    n_frames = draw(st.integers(1, 6))
    return [
        draw(st.sets(st.integers(0, 20), max_size=12)) for _ in range(n_frames)
    ]


class TestSetProperties:
    @given(voxel_family(), st.data())
    @settings(max_examples=60, deadline=None)
    def test_monotonicity(self, family, data):
        """Adding a frame never decreases the coverage ratio."""
        scene, sets = scene_from_sets(*family)
        subset_size = data.draw(st.integers(0, len(sets) - 1))
        chosen = sets[:subset_size]
        extra = sets[subset_size]
        assert coverage_ratio(chosen + [extra], scene) >= coverage_ratio(chosen, scene)

    @given(voxel_family())
    @settings(max_examples=60, deadline=None)
    def test_subadditivity(self, family):
        scene, sets = scene_from_sets(*family)
        for a in sets:
            for b in sets:
                union = len(set(a.voxels) | set(b.voxels))
                assert union <= len(a) + len(b)

    @given(
        st.lists(st.tuples(st.integers(-40, 40), st.integers(-40, 40), st.integers(-40, 40)),
                 min_size=1, max_size=30),
        st.integers(-8, 8),
    )
    @settings(max_examples=60, deadline=None)
    def test_translation_consistency(self, cells, shift):
        """Shifting by an exact multiple of the cell size shifts every index.

        Uses a power-of-two voxel size and 1/64-step coordinates so that all
        arithmetic is exact in binary floating point.
        """
        voxel_size = 0.125
        base = np.array(cells, dtype=np.float64) / 64.0
        shifted = base + shift * voxel_size
        vs_a = voxelize(make_cmap(base[None, :, :]), voxel_size, 0)
        vs_b = voxelize(make_cmap(shifted[None, :, :]), voxel_size, 0)
        moved = {(ix + shift, iy + shift, iz + shift) for ix, iy, iz in vs_a.voxels}
        assert {tuple(v) for v in vs_b.voxels} == moved
        assert len(vs_a) == len(vs_b)


class TestSceneCoverage:
    def test_universe_is_exact_union(self):
        scene, sets = scene_from_sets([1, 2], [2, 3], [9])
        want = set().union(*({tuple(v) for v in s.voxels} for s in sets))
        assert {tuple(v) for v in scene.universe} == want

    def test_mixed_voxel_sizes_rejected(self):
        a = VoxelSet.from_voxels(0, [(0, 0, 0)], 0.1)
        b = VoxelSet.from_voxels(1, [(0, 0, 0)], 0.2)
        with pytest.raises(InvalidInput):
            SceneCoverage.from_voxel_sets([a, b])

    def test_duplicate_frame_indices_rejected(self):
        a = VoxelSet.from_voxels(0, [(0, 0, 0)], 0.1)
        b = VoxelSet.from_voxels(0, [(1, 0, 0)], 0.1)
        with pytest.raises(InvalidInput):
            SceneCoverage.from_voxel_sets([a, b])


class TestCache:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        sets = [
            VoxelSet.from_voxels(
                k,
                {tuple(c) for c in rng.integers(-50, 50, size=(30, 3))},
                0.1,
            )
            for k in (0, 2, 5)
        ]
        path = tmp_path / "scene.voxels"
        write_cache(path, sets)
        loaded = read_cache(path)
        assert [s.frame_index for s in loaded] == [0, 2, 5]
        for a, b in zip(sets, loaded):
            assert a.voxel_size == b.voxel_size
            np.testing.assert_array_equal(a.keys, b.keys)

    def test_golden_bytes(self, tmp_path):
        """The exact on-disk layout, assembled independently with struct."""
        vs = VoxelSet.from_voxels(7, [(1, -2, 3), (0, 0, 0)], 0.25)
        path = tmp_path / "one.voxels"
        write_cache(path, [vs])
        expected = CACHE_MAGIC + struct.pack("<Id", 1, 0.25) + struct.pack("<I", 1)
        # keys sort lexicographically by (ix, iy, iz)
        expected += struct.pack("<II", 7, 2)
        expected += struct.pack("<3i", 0, 0, 0) + struct.pack("<3i", 1, -2, 3)
        assert path.read_bytes() == expected

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.voxels"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(InvalidInput):
            read_cache(path)

    def test_truncated_rejected(self, tmp_path):
        vs = VoxelSet.from_voxels(0, [(1, 1, 1)], 0.1)
        path = tmp_path / "t.voxels"
        write_cache(path, [vs])
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(InvalidInput):
            read_cache(path)
