import numpy as np
import pytest

import rahtp
from rahtp.geometry import (CENTER_SLOT, geometry_digest, morton_key,
                            morton_sort)

from _helpers import random_cloud


def test_morton_key_known_values():
    coords = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1], [3, 1, 2]])
    assert morton_key(coords, 2).tolist() == [1, 2, 4, 7, 43]


def test_morton_key_monotone_in_each_axis():
    base = morton_key(np.array([[2, 3, 1]]), 4)[0]
    for axis in range(3):
        bumped = np.array([[2, 3, 1]])
        bumped[0, axis] += 4
        assert morton_key(bumped, 4)[0] > base


def test_morton_sort_orders_and_is_stable_under_permutation():
    rng = np.random.default_rng(0)
    coords = rng.integers(0, 16, (50, 3)).astype(np.int64)
    sorted_coords, order = morton_sort(coords, 4)
    assert np.array_equal(sorted_coords, coords[order])
    keys = morton_key(sorted_coords, 4)
    assert np.all(np.diff(keys.astype(np.int64)) >= 0)


def test_voxelize_merges_duplicates_by_mean():
    cloud = rahtp.PointCloud(
        positions=np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0]], dtype=np.int64),
        attributes=np.array([[10.0], [30.0], [7.0]]),
        depth=1, channels=1)
    out = rahtp.voxelize(cloud, 1)
    assert len(out.positions) == 2
    merged = out.attributes[(out.positions == 0).all(axis=1)]
    assert merged[0, 0] == pytest.approx(20.0)


def test_voxelize_already_integer_grid_keeps_voxels():
    cl = random_cloud(1, 80, 3)
    again = rahtp.voxelize(cl, 3)
    assert np.array_equal(cl.positions, again.positions)
    assert np.allclose(cl.attributes, again.attributes)


def test_voxelize_scales_float_extent_into_grid():
    rng = np.random.default_rng(2)
    pos = rng.uniform(-5.0, 12.0, (200, 3))
    cloud = rahtp.PointCloud(positions=pos, attributes=np.ones((200, 1)),
                             depth=0, channels=1)
    out = rahtp.voxelize(cloud, 4)
    assert out.positions.min() >= 0 and out.positions.max() < 16
    assert out.depth == 4


def test_ply_roundtrip(tmp_path):
    cl = random_cloud(3, 60, 3)
    path = tmp_path / "c.ply"
    rahtp.save_ply(path, cl.positions, cl.attributes)
    back = rahtp.load_ply(path)
    out = rahtp.voxelize(back, 3)
    assert np.array_equal(out.positions, cl.positions)
    # attributes travel as float32
    assert np.abs(out.attributes - cl.attributes).max() < 1e-3


def test_hierarchy_levels_cover_children_both_orders():
    cl = random_cloud(4, 120, 3)
    for order in (1, 2):
        h = rahtp.build_hierarchy(cl, order)
        assert h.depth == 3
        assert np.array_equal(h.levels[-1].nodes, cl.positions)
        for lev in range(h.depth):
            parents = h.levels[lev].nodes
            children = h.levels[lev + 1].nodes
            pidx = {tuple(p): i for i, p in enumerate(parents)}
            lo = 0 if order == 1 else -1
            hi = 1
            for c in children:
                # every child must see at least one supporting parent and
                # all kernel-support parents must be present in the closure
                found = 0
                for m in np.ndindex(2, 2, 2) if order == 1 else np.ndindex(3, 3, 3):
                    d = np.array(m) + lo
                    parent = (c - d)
                    if np.all(parent % 2 == 0):
                        key = tuple(parent // 2)
                        if order == 1:
                            assert key in pidx
                            found += 1
                        elif key in pidx:
                            found += 1
                assert found >= 1


def test_hierarchy_neighbor_index_center_is_self():
    cl = random_cloud(5, 60, 2)
    h = rahtp.build_hierarchy(cl, 2)
    for geom in h.levels:
        n = len(geom.nodes)
        assert np.array_equal(geom.neighbor_index[:, CENTER_SLOT], np.arange(n))


def test_geometry_digest_invariant_to_input_order():
    cl = random_cloud(6, 90, 3)
    perm = np.random.default_rng(0).permutation(len(cl.positions))
    assert geometry_digest(cl.positions, 3) == geometry_digest(cl.positions[perm], 3)
    assert geometry_digest(cl.positions, 3) != geometry_digest(cl.positions, 4)


def test_pointcloud_validate_rejects_mismatched_rows():
    with pytest.raises(ValueError):
        rahtp.PointCloud(positions=np.zeros((3, 3), dtype=np.int64),
                         attributes=np.zeros((2, 1)), depth=1,
                         channels=1).validate()
