import numpy as np
import pytest

from semnav.errors import InvalidInputError, ValidationError
from semnav.geometry import (
    DepthMap,
    PointCloud,
    RigidPose,
    backproject,
    compose,
    project,
    project_points,
)

from conftest import random_pose, small_intrinsics


def test_compose_identity():
    rng = np.random.default_rng(0)
    p = random_pose(rng)
    q = compose(RigidPose.identity(), p)
    assert np.allclose(q.rotation, p.rotation)
    assert np.allclose(q.translation, p.translation)


def test_compose_inverse_is_identity():
    rng = np.random.default_rng(1)
    p = random_pose(rng)
    ident = compose(p, p.inverse())
    assert np.allclose(ident.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(ident.translation, 0, atol=1e-9)


def test_compose_matches_pointwise_application():
    rng = np.random.default_rng(2)
    p, q = random_pose(rng), random_pose(rng)
    xs = rng.normal(0, 3, (100, 3))
    assert np.allclose(compose(p, q).apply(xs), p.apply(q.apply(xs)), atol=1e-9)


def test_compose_associative_on_points():
    rng = np.random.default_rng(3)
    a, b, c = (random_pose(rng) for _ in range(3))
    xs = rng.normal(0, 2, (50, 3))
    left = compose(compose(a, b), c).apply(xs)
    right = compose(a, compose(b, c)).apply(xs)
    assert np.allclose(left, right, atol=1e-9)


def test_long_composition_chain_stays_orthonormal():
    rng = np.random.default_rng(4)
    pose = RigidPose.identity()
    step = random_pose(rng, trans_scale=0.1)
    for _ in range(500):
        pose = compose(pose, step)
    r = pose.rotation
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-9)
    assert np.isclose(np.linalg.det(r), 1.0, atol=1e-9)


def test_backproject_principal_point():
    intr = small_intrinsics()
    depth = np.zeros((intr.height, intr.width))
    depth[int(intr.cy), int(intr.cx)] = 2.0
    cloud = backproject(DepthMap(depth), intr, RigidPose.identity())
    assert len(cloud) == 1
    assert np.allclose(cloud.points[0], [0.0, 0.0, 2.0])


def test_backproject_translation_additivity():
    intr = small_intrinsics()
    depth = np.zeros((intr.height, intr.width))
    depth[int(intr.cy), int(intr.cx)] = 2.0
    pose = RigidPose(np.eye(3), np.array([1.0, 0.0, 0.0]))
    cloud = backproject(DepthMap(depth), intr, pose)
    assert np.allclose(cloud.points[0], [1.0, 0.0, 2.0])


def test_backproject_plane_round_trip():
    intr = small_intrinsics()
    # Render a wall at z = 3 analytically: depth is constant in z-depth terms.
    depth = np.full((intr.height, intr.width), 3.0)
    cloud = backproject(DepthMap(depth), intr, RigidPose.identity())
    assert len(cloud) == intr.width * intr.height
    assert np.allclose(cloud.points[:, 2], 3.0, atol=1e-6)


def test_backproject_counts_masked_nonzero_pixels():
    rng = np.random.default_rng(5)
    intr = small_intrinsics()
    depth = rng.uniform(0.5, 4.0, (intr.height, intr.width))
    depth[rng.random(depth.shape) < 0.3] = 0.0
    mask = rng.random(depth.shape) < 0.5
    cloud = backproject(DepthMap(depth), intr, RigidPose.identity(), mask)
    assert len(cloud) == int(((depth > 0) & mask).sum())


def test_backproject_dimension_mismatch():
    intr = small_intrinsics()
    with pytest.raises(InvalidInputError):
        backproject(DepthMap(np.ones((10, 10))), intr, RigidPose.identity())


def test_project_principal_point():
    intr = small_intrinsics()
    result = project(np.array([0.0, 0.0, 2.0]), intr, RigidPose.identity())
    assert result is not None
    u, v, d = result
    assert (u, v, d) == (intr.cx, intr.cy, 2.0)


def test_project_behind_camera_out_of_view():
    intr = small_intrinsics()
    assert project(np.array([0.0, 0.0, -1.0]), intr, RigidPose.identity()) is None


def test_project_backproject_round_trip():
    rng = np.random.default_rng(6)
    intr = small_intrinsics()
    pose = random_pose(rng)
    us = rng.integers(0, intr.width, 1000)
    vs = rng.integers(0, intr.height, 1000)
    ds = rng.uniform(0.5, 5.0, 1000)
    x = (us - intr.cx) / intr.fx * ds
    y = (vs - intr.cy) / intr.fy * ds
    world = pose.apply(np.stack([x, y, ds], axis=1))
    pu, pv, pd, ok = project_points(world, intr, pose)
    assert ok.all()
    assert np.abs(pu - us).max() < 0.5
    assert np.abs(pv - vs).max() < 0.5
    assert np.allclose(pd, ds, atol=1e-9)


def test_depth_map_rejects_negative_values():
    with pytest.raises(ValidationError):
        DepthMap(np.array([[-1.0]]))


def test_point_cloud_rejects_nan():
    with pytest.raises(ValidationError):
        PointCloud(np.array([[np.nan, 0.0, 0.0]]))
