"""End-to-end per-block driver: align, lift, floor, navigate, export."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import alignment as align_mod
from .alignment import GlobalMap, accumulate, align_block, build_validity_mask
from .errors import InvalidStartError, NoPlaneError
from .floor import PlaneTracker, gravity_axis, ransac_plane
from .geometry import RigidPose, compose
from .instances import (
    ForegroundCloud,
    ObjectState,
    TrackletRegistry,
    assign_masks,
    init_tracklets,
    lift_instances,
    propagate,
    rebuild_foreground_view,
    reidentify,
    update_object_states,
)
from .metrics import IdTimeline, TrajectoryPair, ate_rmse, cloud_accuracy_completeness, id_consistency
from .navgrid import (
    NavGrid,
    NavPlan,
    build_occupancy,
    export_layer,
    frontier_explore,
    plan_path,
    project_frame_points,
    rebuild_labels,
    reproject_all,
    select_goal,
)
from .session import Block, PipelineConfig, Session, blockify, open_session

NAV_LAYERS = ("occupancy", "label", "density", "obs_frames", "min_height")


@dataclass
class RunReport:
    frame_count: int = 0
    block_count: int = 0
    block_times_ms: list[float] = field(default_factory=list)
    scales: list[float] = field(default_factory=list)
    tracklets_created: int = 0
    merges: int = 0
    removed_total: int = 0
    plane_changes: int = 0
    peak_working_state: int = 0
    working_states: list[int] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [
            f"frames={self.frame_count}",
            f"blocks={self.block_count}",
            f"total_ms={sum(self.block_times_ms):.3f}",
            f"tracklets_created={self.tracklets_created}",
            f"merges={self.merges}",
            f"removed_total={self.removed_total}",
            f"plane_changes={self.plane_changes}",
            f"peak_working_state={self.peak_working_state}",
        ]
        for i, (t, s) in enumerate(zip(self.block_times_ms, self.scales)):
            out.append(f"block_{i}_ms={t:.3f}")
            out.append(f"block_{i}_scale={repr(float(s))}")
        for key in sorted(self.metrics):
            out.append(f"{key}={self.metrics[key]:.9f}")
        return out


@dataclass
class BlockSnapshot:
    """Immutable per-block view published for readers (service, UI)."""

    block_index: int
    last_frame_index: int
    trajectory_tail: list[tuple[int, RigidPose]]
    grid: NavGrid | None
    plan: NavPlan | None
    registry_rows: list[dict]
    plane_normal: list[float] | None
    plane_offset: float | None
    user_cell: tuple[int, int] | None
    target_class: int | None


class Pipeline:
    """Streaming engine state; one instance per session run."""

    def __init__(self, config: PipelineConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.global_map = GlobalMap()
        self.registry = TrackletRegistry()
        self.fg_cloud = ForegroundCloud()
        self.plane_tracker = PlaneTracker(config)
        self.grid: NavGrid | None = None
        self.labels: dict[int, int] = {}
        self.anchor_globals: list[RigidPose] = []
        self.prev_scale: float | None = None
        self.target_class: int | None = None
        self.current_goal: tuple[tuple[int, int], int, float] | None = None
        self.timeline: list[tuple[int, int, int]] = []
        self.report = RunReport()
        self.last_plan: NavPlan | None = None
        self.removed_ever: set[int] = set()

    # ------------------------------------------------------------------ align

    def _align(self, block: Block, masks) -> align_mod.BlockAlignment:
        result = align_block(block, masks, self.anchor_globals, self.prev_scale)
        self.prev_scale = result.scale
        k = self.config.anchor_count
        self.anchor_globals = result.per_frame_global[-k:]
        return result

    # -------------------------------------------------------------- semantics

    def _semantics(self, block: Block, result, masks) -> dict[int, list[tuple[np.ndarray, int]]]:
        before = len(self.registry.tracklets) + len(self.registry.alias)
        keyframe = block.keyframe
        self.labels, key_assignment = init_tracklets(
            keyframe, self.registry, self.config, block.index
        )
        self.report.tracklets_created += (
            len(self.registry.tracklets) + len(self.registry.alias) - before
        )

        fg_increments: dict[int, list[tuple[np.ndarray, int]]] = {}
        for frame, pose, validity in zip(block.frames, result.per_frame_global, masks):
            if frame is keyframe:
                assignment: dict[int, int | None] = dict(key_assignment)
            else:
                points = propagate(frame, self.labels)
                assignment = assign_masks(frame, points, self.registry, self.config)
            for im in frame.instance_masks:
                tid = assignment.get(im.instance_id)
                self.timeline.append((frame.index, im.instance_id, tid or 0))
            incs = lift_instances(
                frame, assignment, pose, validity, self.registry, self.fg_cloud, self.config
            )
            if incs:
                fg_increments[frame.index] = incs

        # Re-identify tracklets born this block against objects unseen since
        # the block began; merging adopts the older identity.
        new_ids = sorted(
            t.id for t in self.registry.tracklets.values()
            if t.created_block == block.index
        )
        for tid in new_ids:
            tracklet = self.registry.tracklets.get(tid)
            if tracklet is None or tracklet.median_points().shape[0] == 0:
                continue
            candidates = [
                c for c in self.registry.tracklets.values()
                if c.last_seen < block.first_index
            ]
            target = reidentify(tracklet, candidates, self.config)
            if target is not None:
                self.registry.merge(tid, target.id, self.config.medians_cap)
                self.report.merges += 1

        update_object_states(
            self.registry,
            block.frames[-1],
            result.per_frame_global[-1],
            self.config,
            block.first_index,
        )
        for t in self.registry.tracklets.values():
            if t.state is ObjectState.REMOVED:
                self.removed_ever.add(t.id)
        self.report.removed_total = len(self.removed_ever)
        self.registry.prune_assignments(block.first_index)
        return fg_increments

    # ------------------------------------------------------------------ floor

    def _floor(self, block: Block) -> bool:
        if block.index % self.config.plane_every_blocks != 0:
            return False
        points, _ = self.global_map.background_with_frames()
        if points.shape[0] < 50:
            return False
        rng = np.random.default_rng(self.seed + 7919 * (block.index + 1))
        if points.shape[0] > 20000:
            points = points[rng.choice(points.shape[0], 20000, replace=False)]
        centers = np.stack([p.translation for _, p in self.global_map.trajectory])
        axis = gravity_axis(centers)
        try:
            estimate = ransac_plane(
                points,
                iterations=self.config.ransac_iterations,
                inlier_tol=self.config.ransac_inlier_tol,
                seed=self.seed + 31 * (block.index + 1),
                axis_hint=axis,
                above_point=centers.mean(axis=0),
            )
        except NoPlaneError:
            return False
        estimate.frame_index = block.last_index
        changed = self.plane_tracker.update_reference(estimate)
        self.report.plane_changes = self.plane_tracker.change_count
        return changed

    # -------------------------------------------------------------------- nav

    def _navigate(
        self,
        block: Block,
        result,
        bg_chunks: list[tuple[int, np.ndarray]],
        fg_increments: dict[int, list[tuple[np.ndarray, int]]],
        plane_changed: bool,
    ) -> tuple[NavPlan | None, tuple[int, int] | None, int]:
        reference = self.plane_tracker.reference
        if reference is None:
            return None, None, 0

        fg_view = rebuild_foreground_view(self.registry, self.fg_cloud)
        fg_pts, _, fg_tids, fg_frames = fg_view.arrays()

        cells_touched = 0
        if self.grid is None or (plane_changed and reference is not self.grid.plane):
            self.grid = reproject_all(
                self.grid or NavGrid(plane=reference, cell=self.config.grid_cell),
                self.global_map.background_with_frames(),
                (fg_pts, fg_tids, fg_frames),
                reference,
                self.config,
            )
        else:
            for frame_index, pts in bg_chunks:
                extra = fg_increments.get(frame_index, [])
                if extra:
                    pts = np.vstack([pts] + [p for p, _ in extra]) if pts.shape[0] else \
                        np.vstack([p for p, _ in extra])
                before = int(self.grid.obs_frames.sum())
                project_frame_points(self.grid, frame_index, pts, self.config)
                cells_touched += int(self.grid.obs_frames.sum()) - before
            rebuild_labels(self.grid, fg_pts, fg_tids, self.config)
        build_occupancy(self.grid, self.config)

        user_world = result.per_frame_global[-1].translation
        user_cell = self.grid.world_to_cell(user_world)

        plan = self._plan(user_cell)
        return plan, user_cell, cells_touched

    def _plan(self, user_cell: tuple[int, int]) -> NavPlan:
        grid = self.grid
        goal = None
        if self.target_class is not None:
            goal = self._select_goal_with_hysteresis(user_cell)
        if goal is not None:
            try:
                return plan_path(grid, user_cell, goal[0], self.config, goal_tracklet=goal[1])
            except InvalidStartError:
                return NavPlan(goal_cell=goal[0], goal_tracklet=goal[1], waypoints=[], status="NoGoal")
        frontier = frontier_explore(grid, user_cell)
        if frontier is not None:
            try:
                plan = plan_path(grid, user_cell, frontier, self.config)
                if plan.status == "Planned":
                    plan.status = "Exploring"
                return plan
            except InvalidStartError:
                pass
        return NavPlan(goal_cell=None, goal_tracklet=None, waypoints=[], status="NoGoal")

    def _select_goal_with_hysteresis(self, user_cell) -> tuple[tuple[int, int], int] | None:
        found = select_goal(self.grid, self.registry, self.target_class, user_cell, self.config)
        if found is None:
            self.current_goal = None
            return None
        cell, tid = found
        dist = float(np.hypot(cell[0] - user_cell[0], cell[1] - user_cell[1]))
        if self.current_goal is not None:
            prev_cell, prev_tid, _ = self.current_goal
            prev_alive = (
                self.registry.tracklets.get(self.registry.resolve(prev_tid)) is not None
                and self.registry.tracklets[self.registry.resolve(prev_tid)].state
                is not ObjectState.REMOVED
            )
            if prev_alive and tid != self.registry.resolve(prev_tid):
                prev_dist = float(np.hypot(prev_cell[0] - user_cell[0], prev_cell[1] - user_cell[1]))
                # Keep the previous goal unless the new one is clearly closer.
                if dist > (1.0 - self.config.goal_hysteresis) * prev_dist:
                    self.current_goal = (prev_cell, self.registry.resolve(prev_tid), prev_dist)
                    return prev_cell, self.registry.resolve(prev_tid)
        self.current_goal = (cell, tid, dist)
        return cell, tid

    # ------------------------------------------------------------------ block

    def process_block(self, block: Block) -> BlockSnapshot:
        t0 = time.perf_counter()
        masks = [build_validity_mask(f, self.config) for f in block.frames]
        result = self._align(block, masks)
        self.report.scales.append(result.scale)

        bg_chunks = accumulate(self.global_map, block, result, masks, self.config)
        fg_increments = self._semantics(block, result, masks)
        plane_changed = self._floor(block)
        plan, user_cell, cells_touched = self._navigate(
            block, result, bg_chunks, fg_increments, plane_changed
        )
        self.last_plan = plan

        working_state = (
            len(block.frames)
            + len(block.anchor_frames)
            + len(self.labels)
            + cells_touched
        )
        self.report.working_states.append(working_state)
        self.report.peak_working_state = max(self.report.peak_working_state, working_state)
        self.report.block_count += 1
        self.report.frame_count += len(block.frames)
        self.report.block_times_ms.append((time.perf_counter() - t0) * 1000.0)

        rows = []
        for tid in sorted(self.registry.tracklets):
            t = self.registry.tracklets[tid]
            rows.append(
                {
                    "id": t.id,
                    "class": t.class_id,
                    "state": t.state.value,
                    "confidence": round(t.confidence, 6),
                    "last_seen": t.last_seen,
                }
            )
        reference = self.plane_tracker.reference
        tail = self.global_map.trajectory[-(len(block.frames)):]
        return BlockSnapshot(
            block_index=block.index,
            last_frame_index=block.last_index,
            trajectory_tail=tail,
            grid=self.grid.snapshot() if self.grid is not None else None,
            plan=plan,
            registry_rows=rows,
            plane_normal=list(map(float, reference.normal)) if reference else None,
            plane_offset=float(reference.offset) if reference else None,
            user_cell=user_cell,
            target_class=self.target_class,
        )

    # ---------------------------------------------------------------- exports

    def resolved_timeline(self) -> list[tuple[int, int, int]]:
        out = []
        for frame, inst, tid in self.timeline:
            out.append((frame, inst, self.registry.resolve(tid) if tid else 0))
        return out

    def write_outputs(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

        with open(out / "trajectory.txt", "w") as fh:
            for index, pose in self.global_map.trajectory:
                vals = " ".join(repr(float(x)) for x in pose.matrix().reshape(-1))
                fh.write(f"{index} {vals}\n")

        fg_view = rebuild_foreground_view(self.registry, self.fg_cloud)
        fg_pts, fg_cls, fg_tids, _ = fg_view.arrays()
        bg_pts, _ = self.global_map.background_with_frames()
        with open(out / "cloud.xyz", "w") as fh:
            for p in bg_pts:
                fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")
            for p, c, t in zip(fg_pts, fg_cls, fg_tids):
                fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c} {t}\n")

        (out / "registry.txt").write_text(self.registry.export_text())

        with open(out / "timeline.txt", "w") as fh:
            for frame, inst, tid in self.resolved_timeline():
                fh.write(f"{frame} {inst} {tid}\n")

        if self.grid is not None:
            nav = out / "nav"
            nav.mkdir(exist_ok=True)
            for layer in NAV_LAYERS:
                (nav / f"{layer}.txt").write_text(export_layer(self.grid, layer))

        (out / "report.txt").write_text("\n".join(self.report.lines()) + "\n")


def run(
    session_path,
    out_dir=None,
    config: PipelineConfig | None = None,
    max_frames: int | None = None,
    seed: int = 0,
    target_class: int | None = None,
    gt_dir=None,
) -> RunReport:
    """Process a session start to finish, optionally writing exports and metrics."""
    session = open_session(session_path)
    config = session.config(config)
    pipeline = Pipeline(config, seed=seed)
    pipeline.target_class = target_class
    for block in blockify(session.frames(max_frames), config):
        pipeline.process_block(block)
    if gt_dir is not None:
        pipeline.report.metrics.update(evaluate_against_gt(pipeline, gt_dir))
    if out_dir is not None:
        pipeline.write_outputs(out_dir)
    return pipeline.report


def load_gt_trajectory(gt_dir) -> list[tuple[int, RigidPose]]:
    rows = []
    for line in (Path(gt_dir) / "trajectory.txt").read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        index = int(parts[0])
        mat = np.array(parts[1:13], dtype=np.float64).reshape(3, 4)
        rows.append((index, RigidPose(mat[:, :3], mat[:, 3])))
    return rows


def evaluate_against_gt(pipeline: Pipeline, gt_dir) -> dict[str, float]:
    """Trajectory, cloud and identity metrics against generated ground truth.

    The estimated trajectory is anchored at the first camera, so the ground
    truth is re-expressed relative to its own first pose before comparison.
    """
    gt_dir = Path(gt_dir)
    metrics: dict[str, float] = {}

    gt_traj = load_gt_trajectory(gt_dir)
    if gt_traj:
        base_inv = gt_traj[0][1].inverse()
        gt_rel = [(i, compose(base_inv, p)) for i, p in gt_traj]
        est = pipeline.global_map.trajectory
        gt_map = dict(gt_rel)
        common = [(i, p) for i, p in est if i in gt_map]
        ref = [(i, gt_map[i]) for i, _ in common]
        if len(common) >= 2:
            pair = TrajectoryPair(estimated=common, reference=ref)
            metrics["ate_rmse_none"] = ate_rmse(pair, "none")
            metrics["ate_rmse_rigid"] = ate_rmse(pair, "rigid")

    surface_path = gt_dir / "surface.xyz"
    if surface_path.is_file():
        gt_pts = np.loadtxt(surface_path, dtype=np.float64).reshape(-1, 3)
        base_inv = gt_traj[0][1].inverse()
        gt_pts = base_inv.apply(gt_pts)
        bg_pts, _ = pipeline.global_map.background_with_frames()
        fg_pts, _, _, _ = rebuild_foreground_view(pipeline.registry, pipeline.fg_cloud).arrays()
        pred = np.vstack([bg_pts, fg_pts]) if fg_pts.shape[0] else bg_pts
        if pred.shape[0] and gt_pts.shape[0]:
            acc_mean, acc_med, compl_mean, compl_med = cloud_accuracy_completeness(pred, gt_pts)
            metrics["cloud_acc_mean"] = acc_mean
            metrics["cloud_acc_median"] = acc_med
            metrics["cloud_compl_mean"] = compl_mean
            metrics["cloud_compl_median"] = compl_med

    per_object: dict[int, list[tuple[int, int]]] = {}
    for frame, inst, tid in pipeline.resolved_timeline():
        per_object.setdefault(inst, []).append((frame, tid))
    if per_object:
        timeline = IdTimeline(per_object)
        metrics["id_consistency_without"] = id_consistency(timeline, count_midblock=False)
        metrics["id_consistency_with"] = id_consistency(timeline, count_midblock=True)
    return metrics
