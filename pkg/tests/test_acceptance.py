"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one PASS line so a -s run reads as a checklist. Tolerances
are pinned here and nowhere else.
"""

import filecmp
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from semnav.alignment import build_validity_mask, estimate_block_transform, lower_median
from semnav.floor import PlaneEstimate, PlaneTracker, planes_match
from semnav.geometry import DepthMap, RigidPose, compose
from semnav.metrics import IdTimeline, id_consistency
from semnav.navgrid import NavGrid, Occupancy, plan_path
from semnav.oracles import chordal_mean_rotation, dijkstra_cost, golden_section_scale
from semnav.pipeline import Pipeline, run
from semnav.session import FrameRecord, PipelineConfig, blockify
from semnav.synth import NoiseSpec, SessionGenerator, surface_distance

from conftest import generated_records, random_pose, room_scene, small_intrinsics
from test_pipeline import reappearance_scene, removal_scene, run_blockwise, state_timeline

Z_UP = PlaneEstimate(np.array([0.0, 0.0, 1.0]), 0.0)


def ok(name):
    print(f"ACCEPT pass {name}")


# 1 ------------------------------------------------------------------------


def test_noiseless_end_to_end(tmp_path):
    config = PipelineConfig(block_size=10, anchor_count=10)
    spec = room_scene(frames=30, noise=NoiseSpec(scale_factor=0.7))
    path = SessionGenerator(spec, config).write(tmp_path / "session")
    t0 = time.perf_counter()
    report = run(path, out_dir=tmp_path / "out", config=config, gt_dir=path / "gt")
    elapsed = time.perf_counter() - t0

    for s in report.scales:
        assert abs(s - 0.7) <= 1e-3
    assert report.metrics["ate_rmse_none"] <= 1e-6

    session_pipeline = Pipeline(config)
    for block in blockify(generated_records(spec, config), config):
        session_pipeline.process_block(block)
    pts, _ = session_pipeline.global_map.background_with_frames()
    world = spec.trajectory[0].apply(pts)
    assert float(surface_distance(spec, world).mean()) <= 0.005

    assert elapsed < 30.0
    ok("noiseless-end-to-end (scale 0.7±1e-3, ATE<=1e-6, cloud<=5mm, <30s)")


# 2 ------------------------------------------------------------------------


def test_scale_estimator_oracle():
    rng = np.random.default_rng(101)
    from semnav.alignment import frame_scale

    for _ in range(200):
        n = int(rng.integers(10, 200))
        pred = rng.uniform(0.3, 8.0, n)
        sensor = np.abs(pred * rng.uniform(0.05, 5.0) + rng.normal(0, 0.1, n)) + 1e-4
        closed = frame_scale(DepthMap(pred.reshape(1, -1)), DepthMap(sensor.reshape(1, -1)),
                             np.ones((1, n), dtype=bool))
        assert abs(closed - golden_section_scale(pred, sensor)) <= 1e-6
    ok("scale-estimator-oracle (200 pairs, closed form == 1-D search ±1e-6)")


# 3 ------------------------------------------------------------------------


def test_validity_mask_exactness():
    config = PipelineConfig(conf_threshold=1.1, conf_quantile=0.10)
    rng = np.random.default_rng(102)
    intr = small_intrinsics(width=20, height=10)
    for _ in range(20):
        conf = rng.uniform(0.5, 3.0, (10, 20))
        sensor = rng.uniform(0.0, 20.0, (10, 20))
        pred = rng.uniform(0.0, 5.0, (10, 20))
        frame = FrameRecord(
            index=0,
            sensor_depth=DepthMap(sensor),
            pred_depth=DepthMap(pred),
            pred_confidence=conf,
            local_pose=RigidPose.identity(),
            intrinsics=intr,
        )
        mask = build_validity_mask(frame, config)

        flat = np.sort(conf.reshape(-1))
        cutoff = flat[int(np.floor(0.10 * flat.size))]
        for v in range(10):
            for u in range(20):
                expected = (
                    conf[v, u] >= 1.1
                    and conf[v, u] >= cutoff
                    and 0.2 <= sensor[v, u] <= 15.0
                    and sensor[v, u] > 0
                    and pred[v, u] > 0
                )
                assert mask[v, u] == expected, (v, u)
    # The named constants themselves:
    conf = np.full((10, 10), 2.0)
    conf[0, 0] = 1.0
    frame = FrameRecord(
        index=0, sensor_depth=DepthMap(np.ones((10, 10))),
        pred_depth=DepthMap(np.ones((10, 10))), pred_confidence=conf,
        local_pose=RigidPose.identity(),
        intrinsics=small_intrinsics(width=10, height=10),
    )
    mask = build_validity_mask(frame, config)
    assert not mask[0, 0] and mask.sum() == 99
    ok("validity-mask-exactness (c=1.1 cutoff + per-frame 10% quantile, cell-by-cell)")


# 4 ------------------------------------------------------------------------


def test_anchor_alignment_oracle():
    rng = np.random.default_rng(103)
    for _ in range(50):
        true_t = random_pose(rng)
        locals_, globals_, candidates = [], [], []
        for _ in range(10):
            local = random_pose(rng)
            wobble = Rotation.from_rotvec(rng.normal(0, np.radians(0.5), 3)).as_matrix()
            noisy = compose(true_t, local)
            noisy = RigidPose(noisy.rotation @ wobble, noisy.translation)
            locals_.append(local)
            globals_.append(noisy)
            candidates.append(compose(noisy, local.inverse()))
        est = estimate_block_transform(globals_, locals_)
        oracle_r = chordal_mean_rotation([c.rotation for c in candidates])
        oracle_t = np.array([lower_median([c.translation[a] for c in candidates])
                             for a in range(3)])
        angle = np.degrees(Rotation.from_matrix(est.rotation.T @ oracle_r).magnitude())
        assert angle <= 0.2
        assert np.linalg.norm(est.translation - oracle_t) <= 1e-3
    ok("anchor-alignment (50 seeds, k=10, 0.5deg noise, within 0.2deg/1mm of oracle)")


# 5 ------------------------------------------------------------------------


def test_identity_persistence():
    from semnav.synth import SceneObject

    config = PipelineConfig(block_size=5, anchor_count=5)
    objects = [
        SceneObject(class_id=2 + (i % 3),
                    box_min=np.array([2.0 + 0.7 * i, 2.0 + 0.5 * (i % 2), 0.0]),
                    box_max=np.array([2.4 + 0.7 * i, 2.4 + 0.5 * (i % 2), 0.55 + 0.1 * i]))
        for i in range(5)
    ]
    spec = room_scene(frames=50, objects=objects, deg0=235, deg1=305)
    pipeline = Pipeline(config)
    for block in blockify(generated_records(spec, config), config):
        pipeline.process_block(block)
    assert pipeline.report.block_count == 10

    per_object: dict[int, list[tuple[int, int]]] = {}
    for frame, inst, tid in pipeline.resolved_timeline():
        per_object.setdefault(inst, []).append((frame, tid))
    assert len(per_object) == 5
    timeline = IdTimeline(per_object)
    assert id_consistency(timeline, count_midblock=False) == 100.0
    for inst, rows in per_object.items():
        single = IdTimeline({inst: rows})
        assert id_consistency(single, True) <= id_consistency(single, False) + 1e-9
    ok("identity-persistence (5 objects, 10 blocks, without=100%, with<=without)")


# 6 ------------------------------------------------------------------------


def test_reidentification_threshold(tmp_path):
    config = PipelineConfig(block_size=10, anchor_count=10)
    for seed in range(20):
        for displacement, expect_merge in ((0.2, True), (0.5, False)):
            spec = reappearance_scene(displacement, seed=seed)
            pipeline = Pipeline(config)
            for block in blockify(generated_records(spec, config), config):
                pipeline.process_block(block)
            if expect_merge:
                assert pipeline.report.merges == 1, (seed, displacement)
                assert pipeline.registry.resolve(2) == 1
            else:
                assert pipeline.report.merges == 0, (seed, displacement)
                assert 2 in pipeline.registry.tracklets
    ok("re-identification (20 seeds: 0.2m merges, 0.5m stays separate)")


# 7 ------------------------------------------------------------------------


def test_change_model_timeline(tmp_path):
    config = PipelineConfig(block_size=10, anchor_count=10, decay_rate=0.25)
    spec = removal_scene()
    path = SessionGenerator(spec, config).write(tmp_path / "session", write_gt=False)
    pipeline, snaps = run_blockwise(path, config)
    assert state_timeline(snaps, 1) == [
        ("Recent", 1.0), ("Recent", 1.0),
        ("Retained", 0.75), ("Retained", 0.5), ("Retained", 0.25),
        ("Removed", 0.0),
    ]
    occluded = state_timeline(snaps, 2)[2:]
    assert all(s == "Retained" and c == 1.0 for s, c in occluded)
    ok("change-model (removal decays 1->0.75->0.5->0.25->Removed; occluded Retained)")


# 8 ------------------------------------------------------------------------


def test_plane_tracker_majority():
    config = PipelineConfig(plane_history=5)

    def tilted(angle_deg, d=0.0):
        a = np.radians(angle_deg)
        return PlaneEstimate(np.array([np.sin(a), 0.0, np.cos(a)]), d)

    tracker = PlaneTracker(config)
    tracker.update_reference(tilted(0.0))
    tracker.update_reference(tilted(0.2))
    assert not tracker.update_reference(tilted(10.0))
    assert not tracker.update_reference(tilted(10.1))
    assert tracker.update_reference(tilted(10.2))  # 3 of 5 history entries
    assert tracker.change_count == 1

    rng = np.random.default_rng(104)
    for _ in range(100):
        tracker = PlaneTracker(config)
        tracker.update_reference(tilted(0.0))
        for _ in range(int(rng.integers(1, 4))):
            tracker.update_reference(tilted(rng.uniform(0, 1.5)))
        tracker.update_reference(PlaneEstimate(rng.normal(0, 1, 3), rng.uniform(0.5, 2)))
        for _ in range(int(rng.integers(1, 4))):
            tracker.update_reference(tilted(rng.uniform(0, 1.5)))
        assert tracker.change_count == 0
        assert planes_match(tracker.reference, tilted(0.0), config)
    ok("plane-tracker (switch only on strict majority; 100 jolt scenarios stable)")


# 9 ------------------------------------------------------------------------


def test_planes_match_boundaries():
    config = PipelineConfig(plane_angle_tol=5.0, plane_offset_tol=0.1)

    def tilted(angle_deg, d=0.0):
        a = np.radians(angle_deg)
        return PlaneEstimate(np.array([np.sin(a), 0.0, np.cos(a)]), d)

    assert planes_match(tilted(0.0, 0.0), tilted(4.9, 0.09), config)
    assert not planes_match(tilted(0.0, 0.0), tilted(5.1, 0.0), config)
    assert not planes_match(tilted(0.0, 0.0), tilted(0.0, 0.11), config)
    ok("planes-match-boundary (4.9deg/0.09m true; 5.1deg or 0.11m false)")


# 10 -----------------------------------------------------------------------


def test_planner_optimality():
    config = PipelineConfig()
    rng = np.random.default_rng(105)
    for _ in range(100):
        free = rng.random((64, 64)) > 0.3
        cells = np.argwhere(free)
        start = tuple(cells[rng.integers(len(cells))])
        goal = tuple(cells[rng.integers(len(cells))])
        grid = NavGrid(plane=Z_UP, cell=0.05)
        occ = np.full((64, 64), int(Occupancy.OBSTACLE), dtype=np.uint8)
        occ[~free] = np.where(rng.random(int((~free).sum())) < 0.5,
                              int(Occupancy.OBSTACLE), int(Occupancy.UNKNOWN))
        occ[free] = int(Occupancy.FREE)
        grid.occupancy = occ
        plan = plan_path(grid, start, goal, config)
        oracle = dijkstra_cost(free, start, goal)
        if oracle is None:
            assert plan.status == "NoGoal"
        else:
            assert plan.cost == oracle  # exact, not approximate
            for r, c in plan.waypoints:
                assert occ[r, c] == Occupancy.FREE
    ok("planner-optimality (100 grids, cost == Dijkstra exactly, Free cells only)")


# 11 -----------------------------------------------------------------------


def test_bounded_streaming_state():
    config = PipelineConfig(block_size=10, anchor_count=10)
    short = room_scene(frames=300, width=48, height=36)
    long_ = room_scene(frames=3000, width=48, height=36)
    long_.trajectory = (short.trajectory * 10)[:3000]

    def peak_steady(spec):
        pipeline = Pipeline(config)
        for block in blockify(generated_records(spec, config), config):
            pipeline.process_block(block)
        return max(pipeline.report.working_states[1:])

    p300 = peak_steady(short)
    p3000 = peak_steady(long_)
    assert abs(p3000 - p300) / p300 < 0.10
    ok(f"bounded-streaming-state (peak {p300} vs {p3000}, <10% apart)")


# 12 -----------------------------------------------------------------------


def test_determinism_byte_identical(tmp_path):
    config = PipelineConfig(block_size=10, anchor_count=10)
    spec = room_scene(frames=30, noise=NoiseSpec(scale_factor=0.7, depth_sigma=0.01),
                      seed=9)
    path = SessionGenerator(spec, config).write(tmp_path / "session", write_gt=False)
    run(path, out_dir=tmp_path / "a", config=config, seed=5, target_class=2)
    run(path, out_dir=tmp_path / "b", config=config, seed=5, target_class=2)
    files = sorted(p.relative_to(tmp_path / "a")
                   for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        if rel.name == "report.txt":
            continue  # wall-clock timings differ by definition
        assert filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel, shallow=False), rel
    ok("determinism (identical seeds -> byte-identical exports)")
