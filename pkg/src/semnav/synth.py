"""Synthetic box-world sessions with exact ground truth.

Scenes are an axis-aligned room (floor at z = 0) containing axis-aligned
boxes that can appear or disappear at scripted frames. Depth is ray-cast per
pixel, instance rasters come from the first-hit object, track
correspondences are true projections of persistent surface samples, and the
model-side outputs (predicted depth, local poses) are derived from ground
truth with configurable scale and noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Intrinsics, RigidPose, compose
from .instances import sample_mask
from .session import PipelineConfig, write_frame, write_manifest


def look_pose(position, target, up=(0.0, 0.0, 1.0)) -> RigidPose:
    """Camera-to-world pose at `position` looking at `target` with zero roll.

    Follows the +z forward / +y down convention, so with up = world z the
    camera y axis points toward the floor.
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position equals look target")
    forward = forward / norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=1)
    return RigidPose(rotation, position)


@dataclass
class SceneObject:
    class_id: int
    box_min: np.ndarray
    box_max: np.ndarray
    object_id: int = 0
    insertion_frame: int | None = None
    removal_frame: int | None = None

    def active(self, frame: int) -> bool:
        if self.insertion_frame is not None and frame < self.insertion_frame:
            return False
        if self.removal_frame is not None and frame >= self.removal_frame:
            return False
        return True


@dataclass
class NoiseSpec:
    scale_factor: float = 1.0   # model units = meters / scale_factor
    depth_sigma: float = 0.0    # multiplicative predicted-depth noise
    pose_rot_deg: float = 0.0   # local pose rotation noise
    pose_trans: float = 0.0     # local pose translation noise (model units)
    conf_high: float = 2.0
    conf_low: float = 0.3       # assigned near depth discontinuities


@dataclass
class SceneSpec:
    room: np.ndarray            # extents; room spans [0, room] per axis
    trajectory: list[RigidPose]
    intrinsics: Intrinsics
    objects: list[SceneObject] = field(default_factory=list)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0

    def __post_init__(self):
        self.room = np.asarray(self.room, dtype=np.float64).reshape(3)
        for i, obj in enumerate(self.objects):
            obj.box_min = np.asarray(obj.box_min, dtype=np.float64).reshape(3)
            obj.box_max = np.asarray(obj.box_max, dtype=np.float64).reshape(3)
            if obj.object_id == 0:
                obj.object_id = i + 1

    @property
    def frame_count(self) -> int:
        return len(self.trajectory)


def _ray_dirs(intr: Intrinsics) -> np.ndarray:
    us = np.arange(intr.width, dtype=np.float64)
    vs = np.arange(intr.height, dtype=np.float64)
    uu, vv = np.meshgrid(us, vs)
    return np.stack(
        [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1
    )


def _box_entry(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Slab-method entry parameter per ray; inf where the box is missed."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - origin) / dirs
        t1 = (hi - origin) / dirs
    t_near = np.nanmax(np.minimum(t0, t1), axis=-1)
    t_far = np.nanmin(np.maximum(t0, t1), axis=-1)
    hit = (t_near <= t_far) & (t_far > 0) & (t_near > 1e-9)
    return np.where(hit, t_near, np.inf)


def _room_exit(origin: np.ndarray, dirs: np.ndarray, room: np.ndarray) -> np.ndarray:
    """Exit parameter of rays cast from inside the room box."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (np.zeros(3) - origin) / dirs
        t1 = (room - origin) / dirs
    return np.nanmin(np.maximum(t0, t1), axis=-1)


def render_frame(spec: SceneSpec, frame_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast one frame; returns (depth, instance raster).

    Depth is the camera-frame z-distance (the ray parameter for K-normalized
    directions), matching what back-projection inverts.
    """
    pose = spec.trajectory[frame_index]
    dirs_cam = _ray_dirs(spec.intrinsics)
    dirs = dirs_cam @ pose.rotation.T
    origin = pose.translation

    depth = _room_exit(origin, dirs, spec.room)
    raster = np.zeros(depth.shape, dtype=np.uint16)
    for obj in spec.objects:
        if not obj.active(frame_index):
            continue
        t = _box_entry(origin, dirs, obj.box_min, obj.box_max)
        closer = t < depth
        depth = np.where(closer, t, depth)
        raster[closer] = obj.object_id
    return depth, raster


def _confidence(depth: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    """High on smooth surfaces, low next to depth discontinuities."""
    jump = np.zeros(depth.shape, dtype=bool)
    dv = np.abs(np.diff(depth, axis=0)) > 0.05 * depth[1:] + 0.02
    du = np.abs(np.diff(depth, axis=1)) > 0.05 * depth[:, 1:] + 0.02
    jump[1:][dv] = True
    jump[:-1][dv] = True
    jump[:, 1:][du] = True
    jump[:, :-1][du] = True
    return np.where(jump, noise.conf_low, noise.conf_high)


@dataclass
class GeneratedFrame:
    index: int
    sensor_depth: np.ndarray
    pred_depth: np.ndarray
    pred_conf: np.ndarray
    local_pose: RigidPose        # window-relative, model units
    raster: np.ndarray           # ground-truth instance ids
    mask_classes: dict[int, int]
    tracks: np.ndarray           # rows (pid, u, v, visible)
    true_pose: RigidPose


class SessionGenerator:
    """Streams GeneratedFrames and can persist them in the session layout."""

    def __init__(self, spec: SceneSpec, config: PipelineConfig | None = None):
        self.spec = spec
        self.config = config or PipelineConfig()
        self.rng = np.random.default_rng(spec.seed)
        self._next_point_id = 1
        # Active track generations: (end_frame, points, owner_ids, point_ids)
        self._generations: list[tuple[int, np.ndarray, np.ndarray, np.ndarray]] = []

    def _window_start(self, block: int) -> int:
        n, k = self.config.block_size, self.config.anchor_count
        return max(0, block * n - k)

    def _spawn_generation(self, frame_index: int, end_frame: int,
                          depth: np.ndarray, raster: np.ndarray) -> None:
        pose = self.spec.trajectory[frame_index]
        intr = self.spec.intrinsics
        points = []
        owners = []
        for obj in self.spec.objects:
            if not obj.active(frame_index):
                continue
            mask = raster == obj.object_id
            for u, v in sample_mask(mask, self.config.sample_stride):
                d = depth[v, u]
                cam = np.array([(u - intr.cx) / intr.fx * d, (v - intr.cy) / intr.fy * d, d])
                points.append(pose.apply(cam))
                owners.append(obj.object_id)
        if not points:
            return
        pts = np.stack(points)
        ids = np.arange(self._next_point_id, self._next_point_id + pts.shape[0])
        self._next_point_id += pts.shape[0]
        self._generations.append((end_frame, pts, np.array(owners), ids))

    def _project_tracks(self, frame_index: int, depth: np.ndarray) -> np.ndarray:
        intr = self.spec.intrinsics
        pose = self.spec.trajectory[frame_index]
        active_by_id = {o.object_id: o.active(frame_index) for o in self.spec.objects}
        rows = []
        for _, pts, owners, ids in self._generations:
            cam = (pts - pose.translation) @ pose.rotation
            z = cam[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                u = intr.fx * cam[:, 0] / z + intr.cx
                v = intr.fy * cam[:, 1] / z + intr.cy
            in_view = (z > 0) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
            vis = np.zeros(pts.shape[0], dtype=bool)
            idx = np.nonzero(in_view)[0]
            if idx.size:
                px = np.clip(np.rint(u[idx]).astype(int), 0, intr.width - 1)
                py = np.clip(np.rint(v[idx]).astype(int), 0, intr.height - 1)
                seen = np.abs(depth[py, px] - z[idx]) <= 0.01 * z[idx] + 0.02
                alive = np.array([active_by_id.get(o, False) for o in owners[idx]])
                vis[idx] = seen & alive
            for pid, uu, vv, flag in zip(ids, u, v, vis):
                if np.isfinite(uu) and np.isfinite(vv):
                    rows.append((float(pid), float(uu), float(vv), float(flag)))
        return np.array(rows, dtype=np.float64).reshape(-1, 4)

    def generate(self):
        n = self.config.block_size
        frames = self.spec.frame_count
        noise = self.spec.noise
        num_blocks = (frames + n - 1) // n
        window_base: RigidPose | None = None

        for f in range(frames):
            depth, raster = render_frame(self.spec, f)

            # Retire finished generations, then spawn any starting here.
            self._generations = [g for g in self._generations if g[0] >= f]
            for b in range(num_blocks):
                if self._window_start(b) == f:
                    end = min((b + 1) * n, frames) - 1
                    self._spawn_generation(f, end, depth, raster)

            if f % n == 0:
                window_base = self.spec.trajectory[self._window_start(f // n)]
            true_pose = self.spec.trajectory[f]
            local = compose(window_base.inverse(), true_pose)
            if noise.pose_rot_deg > 0 or noise.pose_trans > 0:
                from scipy.spatial.transform import Rotation
                rotvec = self.rng.normal(0.0, math.radians(noise.pose_rot_deg), 3)
                wobble = Rotation.from_rotvec(rotvec).as_matrix()
                local = RigidPose(
                    local.rotation @ wobble,
                    local.translation + self.rng.normal(0.0, noise.pose_trans, 3),
                )
            local = RigidPose(local.rotation, local.translation / noise.scale_factor)

            pred = depth / noise.scale_factor
            if noise.depth_sigma > 0:
                pred = pred * (1.0 + self.rng.normal(0.0, noise.depth_sigma, depth.shape))
                pred = np.maximum(pred, 1e-6)

            sensor = depth.copy()
            sensor[sensor > self.config.sensor_max] = 0.0

            yield GeneratedFrame(
                index=f,
                sensor_depth=sensor,
                pred_depth=pred,
                pred_conf=_confidence(depth, noise),
                local_pose=local,
                raster=raster,
                mask_classes={
                    o.object_id: o.class_id
                    for o in self.spec.objects
                    if o.active(f) and np.any(raster == o.object_id)
                },
                tracks=self._project_tracks(f, depth),
                true_pose=true_pose,
            )

    def write(self, out_dir, write_gt: bool = True, gt_surface_stride: int = 2) -> Path:
        """Persist the session; optionally also ground truth under gt/."""
        out = Path(out_dir)
        write_manifest(out, self.spec.frame_count, self.spec.intrinsics)
        intr = self.spec.intrinsics
        gt_lines = []
        surface = []
        dirs = _ray_dirs(intr)
        for gen in self.generate():
            write_frame(
                out,
                gen.index,
                gen.sensor_depth,
                gen.pred_depth,
                gen.pred_conf,
                gen.local_pose,
                gen.raster,
                gen.mask_classes,
                gen.tracks,
            )
            if write_gt:
                vals = " ".join(repr(float(x)) for x in gen.true_pose.matrix().reshape(-1))
                gt_lines.append(f"{gen.index} {vals}")
                sub = gen.sensor_depth[::gt_surface_stride, ::gt_surface_stride]
                sub_dirs = dirs[::gt_surface_stride, ::gt_surface_stride]
                ok = sub > 0
                cam = sub_dirs[ok] * sub[ok][:, None]
                surface.append(gen.true_pose.apply(cam))
        if write_gt:
            gt = out / "gt"
            gt.mkdir(exist_ok=True)
            (gt / "trajectory.txt").write_text("\n".join(gt_lines) + "\n")
            pts = np.vstack(surface)
            with open(gt / "surface.xyz", "w") as fh:
                for p in pts:
                    fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")
        return out


def _box_surface_distance(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Exact distance from each point to the boundary of an axis-aligned box."""
    below = np.maximum(lo - points, 0.0)
    above = np.maximum(points - hi, 0.0)
    outside = np.sqrt((below * below + above * above).sum(axis=1))
    inside_margin = np.minimum(points - lo, hi - points).min(axis=1)
    inside = np.all((points >= lo) & (points <= hi), axis=1)
    return np.where(inside, np.maximum(inside_margin, 0.0), outside)


def surface_distance(spec: SceneSpec, points: np.ndarray, frame: int | None = None) -> np.ndarray:
    """Exact distance from points to the nearest scene surface.

    Surfaces are the room walls plus every object box active at `frame`
    (all permanent objects when frame is None). This is the analytic oracle
    for reconstruction accuracy, free of any sampling density artifacts.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    best = _box_surface_distance(pts, np.zeros(3), spec.room)
    for obj in spec.objects:
        if frame is None:
            if obj.insertion_frame is not None or obj.removal_frame is not None:
                continue
        elif not obj.active(frame):
            continue
        best = np.minimum(best, _box_surface_distance(pts, obj.box_min, obj.box_max))
    return best


def line_trajectory(start, end, target, frames: int) -> list[RigidPose]:
    """Linear camera path with a fixed look target."""
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    poses = []
    for i in range(frames):
        a = i / max(frames - 1, 1)
        poses.append(look_pose(start + a * (end - start), target))
    return poses


def arc_trajectory(center, radius: float, height: float, deg0: float, deg1: float,
                   target, frames: int) -> list[RigidPose]:
    """Camera arc at fixed height looking at a fixed target."""
    cx, cy = float(center[0]), float(center[1])
    poses = []
    for i in range(frames):
        a = math.radians(deg0 + (deg1 - deg0) * i / max(frames - 1, 1))
        pos = np.array([cx + radius * math.cos(a), cy + radius * math.sin(a), height])
        poses.append(look_pose(pos, target))
    return poses
