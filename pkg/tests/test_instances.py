import numpy as np
import pytest
from scipy import ndimage

from semnav.errors import ConsistencyError
from semnav.geometry import DepthMap, RigidPose
from semnav.instances import (
    ForegroundCloud,
    LabeledPoint2D,
    ObjectState,
    TrackletRegistry,
    assign_masks,
    chamfer_distance,
    erode_mask,
    init_tracklets,
    lift_instances,
    propagate,
    rebuild_foreground_view,
    reidentify,
    sample_mask,
    update_object_states,
)
from semnav.oracles import exhaustive_chamfer
from semnav.session import FrameRecord, InstanceMask, PipelineConfig

from conftest import small_intrinsics

INTR = small_intrinsics()
H, W = INTR.height, INTR.width


def frame_with(index=0, masks=(), tracks=(), sensor=None):
    sensor = sensor if sensor is not None else np.full((H, W), 2.0)
    return FrameRecord(
        index=index,
        sensor_depth=DepthMap(sensor),
        pred_depth=DepthMap(sensor.copy()),
        pred_confidence=np.full((H, W), 2.0),
        local_pose=RigidPose.identity(),
        intrinsics=INTR,
        instance_masks=list(masks),
        track_points=np.array(tracks, dtype=np.float64).reshape(-1, 4),
    )


def rect_mask(v0, v1, u0, u1):
    m = np.zeros((H, W), dtype=bool)
    m[v0:v1, u0:u1] = True
    return m


# ---------------------------------------------------------------- erosion


def test_erode_radius_zero_is_identity():
    rng = np.random.default_rng(0)
    mask = rng.random((20, 20)) < 0.5
    assert np.array_equal(erode_mask(mask, 0), mask)


def test_erode_solid_square():
    mask = np.zeros((7, 7), dtype=bool)
    mask[1:6, 1:6] = True  # 5x5 solid
    eroded = erode_mask(mask, 1)
    expected = np.zeros((7, 7), dtype=bool)
    expected[2:5, 2:5] = True  # 3x3 solid
    assert np.array_equal(eroded, expected)


def test_erosion_duality_with_dilation():
    rng = np.random.default_rng(1)
    from semnav.instances import disc_structure
    for _ in range(10):
        mask = rng.random((30, 30)) < 0.6
        eroded = erode_mask(mask, 2)
        assert not np.any(eroded & ~mask)  # eroded subset of original
        # Duality: erosion = complement of dilating the complement. Outside
        # the image the complement is all true, hence border_value=1.
        dual = ~ndimage.binary_dilation(~mask, structure=disc_structure(2), border_value=1)
        assert np.array_equal(eroded, dual)


# ---------------------------------------------------------------- sampling


def test_sample_full_mask_grid_count():
    mask = np.zeros((8, 8), dtype=bool)
    mask[:, :] = True
    points = sample_mask(mask, 4)
    assert len(points) == 4  # (0,0),(0,4),(4,0),(4,4)


def test_sample_stride_one_takes_all():
    rng = np.random.default_rng(2)
    mask = rng.random((10, 10)) < 0.4
    assert len(sample_mask(mask, 1)) == int(mask.sum())


def test_sample_fallback_single_point():
    mask = np.zeros((20, 20), dtype=bool)
    mask[5, 7] = True
    mask[5, 9] = True
    points = sample_mask(mask, 16)
    assert len(points) == 1
    assert points[0] in [(7, 5), (9, 5)]


def test_sample_empty_mask():
    assert sample_mask(np.zeros((5, 5), dtype=bool), 2) == []


# ------------------------------------------------------------------- init


def test_init_cold_start_creates_sequential_ids(config):
    masks = [
        InstanceMask(1, 2, rect_mask(10, 20, 10, 20)),
        InstanceMask(2, 2, rect_mask(10, 20, 30, 40)),
        InstanceMask(3, 5, rect_mask(30, 40, 10, 20)),
    ]
    tracks = [(i + 1, 15 + 20 * (i % 2), 15 + 20 * (i // 2), 1) for i in range(3)]
    registry = TrackletRegistry()
    labels, assignment = init_tracklets(frame_with(masks=masks, tracks=tracks),
                                        registry, config, block_index=0)
    assert sorted(registry.tracklets) == [1, 2, 3]
    assert assignment == {1: 1, 2: 2, 3: 3}


def test_init_carries_previous_assignment(config):
    registry = TrackletRegistry()
    t = registry.new_tracklet(class_id=2, block_index=0, frame_index=5)
    registry.record_assignment(9, instance_id=4, tracklet_id=t.id)
    mask = InstanceMask(4, 2, rect_mask(10, 20, 10, 20))
    frame = frame_with(index=9, masks=[mask], tracks=[(77, 15, 15, 1)])
    labels, assignment = init_tracklets(frame, registry, config, block_index=1)
    assert assignment == {4: t.id}
    assert labels == {77: t.id}
    assert len(registry.tracklets) == 1  # no new tracklet


def test_init_empty_keyframe(config):
    registry = TrackletRegistry()
    labels, assignment = init_tracklets(frame_with(), registry, config, block_index=0)
    assert labels == {} and assignment == {}
    assert registry.tracklets == {}


def test_init_caps_labeled_points(config):
    mask = InstanceMask(1, 2, rect_mask(0, 48, 0, 64))
    tracks = [(i, float(i % 60) + 2, float(i // 60) + 2, 1) for i in range(200)]
    registry = TrackletRegistry()
    labels, _ = init_tracklets(frame_with(masks=[mask], tracks=tracks),
                               registry, config, block_index=0)
    assert len(labels) <= config.max_points_per_instance


# ----------------------------------------------------------------- assign


def make_registry_with(classes: dict[int, int]) -> TrackletRegistry:
    registry = TrackletRegistry()
    for tid, cls in sorted(classes.items()):
        registry._next_id = tid
        t = registry.new_tracklet(cls, 0, 0)
        assert t.id == tid
    return registry


def points_at(mask_box, tid, count, start_pid):
    v0, v1, u0, u1 = mask_box
    return [
        LabeledPoint2D(u=u0 + 1 + (i % (u1 - u0 - 2)), v=v0 + 1 + (i // (u1 - u0 - 2)),
                       tracklet_id=tid, point_id=start_pid + i)
        for i in range(count)
    ]


def test_assign_majority(config):
    registry = make_registry_with({1: 7, 2: 7, 3: 7})
    box = (10, 20, 10, 30)
    frame = frame_with(masks=[InstanceMask(1, 7, rect_mask(*box))])
    pts = points_at(box, 3, 7, 100) + points_at(box, 2, 2, 300)
    assignment = assign_masks(frame, pts, registry, config)
    assert assignment[1] == 3


def test_assign_requires_class_consistency(config):
    registry = make_registry_with({1: 7})  # tracklet of class "table"
    box = (10, 20, 10, 30)
    frame = frame_with(masks=[InstanceMask(5, 9, rect_mask(*box))])  # mask class "chair"
    pts = points_at(box, 1, 5, 100)
    assignment = assign_masks(frame, pts, registry, config)
    assert assignment[5] is None


def test_assign_tie_breaks_to_lower_id(config):
    registry = make_registry_with({2: 7, 6: 7})
    box = (10, 20, 10, 30)
    frame = frame_with(masks=[InstanceMask(1, 7, rect_mask(*box))])
    pts = points_at(box, 6, 4, 100) + points_at(box, 2, 4, 200)
    assignment = assign_masks(frame, pts, registry, config)
    assert assignment[1] == 2


def test_assign_one_mask_per_tracklet_greedy(config):
    registry = make_registry_with({1: 7})
    box_a = (10, 20, 10, 30)
    box_b = (30, 40, 10, 30)
    frame = frame_with(masks=[
        InstanceMask(1, 7, rect_mask(*box_a)),
        InstanceMask(2, 7, rect_mask(*box_b)),
    ])
    pts = points_at(box_a, 1, 3, 100) + points_at(box_b, 1, 5, 200)
    assignment = assign_masks(frame, pts, registry, config)
    assert assignment[2] == 1   # more votes wins the tracklet
    assert assignment[1] is None


def test_assign_no_points_means_untracked(config):
    registry = make_registry_with({1: 7})
    frame = frame_with(masks=[InstanceMask(1, 7, rect_mask(10, 20, 10, 30))])
    before = dict(registry.tracklets)
    assignment = assign_masks(frame, [], registry, config)
    assert assignment[1] is None
    assert registry.tracklets == before  # never creates tracklets mid-block


def test_assign_matches_exhaustive_oracle(config):
    # Exhaustive assignment oracle: maximize votes greedily over all pairs.
    rng = np.random.default_rng(3)
    for _ in range(20):
        n_masks = int(rng.integers(1, 4))
        n_tracklets = int(rng.integers(1, 4))
        registry = make_registry_with({i + 1: 7 for i in range(n_tracklets)})
        boxes = [(int(10 * i), int(10 * i) + 8, 5, 60) for i in range(n_masks)]
        frame = frame_with(masks=[InstanceMask(i + 1, 7, rect_mask(*b))
                                  for i, b in enumerate(boxes)])
        pts = []
        votes = np.zeros((n_masks, n_tracklets), dtype=int)
        pid = 0
        for m in range(n_masks):
            for t in range(n_tracklets):
                count = int(rng.integers(0, 5))
                votes[m, t] = count
                pts += points_at(boxes[m], t + 1, count, pid)
                pid += count
        assignment = assign_masks(frame, pts, registry, config)

        pairs = [(-votes[m, t], t + 1, m) for m in range(n_masks)
                 for t in range(n_tracklets) if votes[m, t] > 0]
        pairs.sort()
        expected: dict[int, int | None] = {m + 1: None for m in range(n_masks)}
        used_m, used_t = set(), set()
        for neg, tid, m in pairs:
            if m in used_m or tid in used_t:
                continue
            expected[m + 1] = tid
            used_m.add(m)
            used_t.add(tid)
        assert assignment == expected


# ------------------------------------------------------------------- lift


def lift_one(mask, sensor, config, registry=None, cloud=None, tid=1, frame_index=0):
    registry = registry or make_registry_with({tid: 7})
    cloud = cloud if cloud is not None else ForegroundCloud()
    frame = frame_with(index=frame_index, masks=[InstanceMask(1, 7, mask)], sensor=sensor)
    validity = np.ones((H, W), dtype=bool)
    lift_instances(frame, {1: tid}, RigidPose.identity(), validity, registry, cloud, config)
    return registry, cloud


def test_lift_disc_median_at_center(config):
    vv, uu = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    disc = (uu - 32) ** 2 + (vv - 24) ** 2 <= 100
    sensor = np.full((H, W), 2.0)
    registry, cloud = lift_one(disc, sensor, config)
    median = registry.tracklets[1].per_frame_medians[0]
    assert median[2] == pytest.approx(2.0, abs=1e-9)
    assert abs(median[0]) < 0.05 and abs(median[1]) < 0.05


def test_lift_annulus_median_stays_near_ring(config):
    vv, uu = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    r2 = (uu - 32) ** 2 + (vv - 24) ** 2
    ring = (r2 <= 400) & (r2 >= 225)
    sensor = np.full((H, W), 2.0)
    registry, _ = lift_one(ring, sensor, config)
    median = registry.tracklets[1].per_frame_medians[0]
    # Component-wise median lands near the ring centroid, never at infinity.
    assert np.linalg.norm(median[:2]) < 0.2
    assert median[2] == pytest.approx(2.0, abs=1e-9)


def test_lift_skips_mask_without_valid_depth(config):
    mask = rect_mask(10, 20, 10, 20)
    sensor = np.full((H, W), 2.0)
    sensor[10:20, 10:20] = 0.0
    registry, cloud = lift_one(mask, sensor, config)
    assert registry.tracklets[1].per_frame_medians == {}
    assert len(cloud) == 0


# ------------------------------------------------------------------ re-id


def test_chamfer_identical_sets_zero():
    rng = np.random.default_rng(4)
    pts = rng.normal(0, 1, (20, 3))
    assert chamfer_distance(pts, pts) == 0.0


def test_chamfer_symmetry():
    rng = np.random.default_rng(5)
    a, b = rng.normal(0, 1, (15, 3)), rng.normal(0, 1, (25, 3))
    assert chamfer_distance(a, b) == pytest.approx(chamfer_distance(b, a))


def test_chamfer_subset_is_zero():
    rng = np.random.default_rng(6)
    b = rng.normal(0, 1, (30, 3))
    a = b[:10]
    assert chamfer_distance(a, b) == 0.0


def test_chamfer_matches_exhaustive_oracle():
    rng = np.random.default_rng(7)
    for _ in range(30):
        a = rng.normal(0, 1, (int(rng.integers(1, 40)), 3))
        b = rng.normal(0, 1, (int(rng.integers(1, 40)), 3))
        assert chamfer_distance(a, b) == pytest.approx(exhaustive_chamfer(a, b), abs=1e-9)


def reg_with_medians(entries, config):
    registry = TrackletRegistry()
    for cls, medians in entries:
        t = registry.new_tracklet(cls, 0, 0)
        for i, m in enumerate(medians):
            t.record_median(i, np.asarray(m, dtype=np.float64), config.medians_cap)
    return registry


def test_reidentify_displacement_threshold(config):
    base = [(0.0, 0.0, 0.5), (0.1, 0.0, 0.5), (0.0, 0.1, 0.5)]
    near = [(x + 0.2, y, z) for x, y, z in base]
    far = [(x + 0.5, y, z) for x, y, z in base]
    registry = reg_with_medians([(7, base), (7, near), (7, far)], config)
    old, new_near, new_far = (registry.tracklets[i] for i in (1, 2, 3))
    assert reidentify(new_near, [old], config) is old
    assert reidentify(new_far, [old], config) is None


def test_reidentify_requires_same_class(config):
    base = [(0.0, 0.0, 0.5)]
    registry = reg_with_medians([(7, base), (9, base)], config)
    assert reidentify(registry.tracklets[2], [registry.tracklets[1]], config) is None


def test_merge_reassigns_ids_and_counts(config):
    registry = reg_with_medians([(7, [(0, 0, 0)]), (7, [(0.1, 0, 0)])], config)
    cloud = ForegroundCloud()
    cloud.append(np.zeros((4, 3)), 7, 1, 0)
    cloud.append(np.ones((3, 3)), 7, 2, 5)
    registry.merge(2, 1, config.medians_cap)
    view = rebuild_foreground_view(registry, cloud)
    _, _, tids, _ = view.arrays()
    assert set(tids.tolist()) == {1}
    assert len(view) == 7
    assert registry.resolve(2) == 1


# ------------------------------------------------------------------ states


def observed_tracklet(registry, config, frame_index=5):
    t = registry.new_tracklet(7, 0, frame_index)
    t.record_median(frame_index, np.array([0.0, 0.0, 2.0]), config.medians_cap)
    return t


def test_state_observed_is_recent(config):
    registry = TrackletRegistry()
    t = observed_tracklet(registry, config, frame_index=12)
    t.confidence = 0.5
    frame = frame_with(index=15)
    update_object_states(registry, frame, RigidPose.identity(), config, block_first_index=10)
    assert t.state is ObjectState.RECENT and t.confidence == 1.0


def test_state_linear_decay_to_removed(config):
    registry = TrackletRegistry()
    t = observed_tracklet(registry, config, frame_index=2)
    frame = frame_with(index=50, sensor=np.full((H, W), 2.0))
    # The stored point projects to the image center at depth 2; sensor sees
    # 2.0 there, so the object is observable and missing.
    expected = [(0.75, ObjectState.RETAINED), (0.5, ObjectState.RETAINED),
                (0.25, ObjectState.RETAINED), (0.0, ObjectState.REMOVED)]
    for conf, state in expected:
        update_object_states(registry, frame, RigidPose.identity(), config, block_first_index=10)
        assert t.confidence == pytest.approx(conf)
        assert t.state is state


def test_state_occluded_stays_retained(config):
    registry = TrackletRegistry()
    t = observed_tracklet(registry, config)
    t.per_frame_medians = {5: np.array([0.0, 0.0, 3.0])}
    frame = frame_with(index=50, sensor=np.full((H, W), 1.0))  # wall at 1 m
    update_object_states(registry, frame, RigidPose.identity(), config, block_first_index=10)
    assert t.state is ObjectState.RETAINED
    assert t.confidence == 1.0


def test_state_out_of_view_retained(config):
    registry = TrackletRegistry()
    t = observed_tracklet(registry, config)
    t.per_frame_medians = {5: np.array([0.0, 0.0, -2.0])}  # behind the camera
    t.confidence = 0.75
    frame = frame_with(index=50)
    update_object_states(registry, frame, RigidPose.identity(), config, block_first_index=10)
    assert t.state is ObjectState.RETAINED
    assert t.confidence == 0.75


# ---------------------------------------------------------------- rebuild


def test_rebuild_identity_when_nothing_removed(config):
    registry = make_registry_with({1: 7, 2: 8})
    cloud = ForegroundCloud()
    rng = np.random.default_rng(8)
    cloud.append(rng.normal(0, 1, (10, 3)), 7, 1, 0)
    cloud.append(rng.normal(0, 1, (5, 3)), 8, 2, 1)
    view = rebuild_foreground_view(registry, cloud)
    a = cloud.arrays()
    b = view.arrays()
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_rebuild_drops_removed_points_exactly(config):
    registry = make_registry_with({1: 7, 2: 8})
    registry.tracklets[2].state = ObjectState.REMOVED
    registry.tracklets[2].confidence = 0.0
    cloud = ForegroundCloud()
    rng = np.random.default_rng(9)
    keep_pts = rng.normal(0, 1, (10, 3))
    cloud.append(keep_pts, 7, 1, 0)
    cloud.append(rng.normal(0, 1, (5, 3)), 8, 2, 1)
    view = rebuild_foreground_view(registry, cloud)
    pts, _, tids, _ = view.arrays()
    assert set(tids.tolist()) == {1}
    assert np.array_equal(pts, keep_pts)


def test_rebuild_dangling_id_raises(config):
    registry = TrackletRegistry()
    cloud = ForegroundCloud()
    cloud.append(np.zeros((2, 3)), 7, 99, 0)
    with pytest.raises(ConsistencyError):
        rebuild_foreground_view(registry, cloud)


def test_propagate_filters_invisible_and_unlabeled():
    frame = frame_with(tracks=[(1, 5, 5, 1), (2, 6, 6, 0), (3, 7, 7, 1)])
    out = propagate(frame, {1: 10, 2: 10})
    assert len(out) == 1
    assert out[0].point_id == 1 and out[0].tracklet_id == 10
