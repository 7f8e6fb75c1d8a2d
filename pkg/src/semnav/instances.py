"""Lifting 2-D instance masks to persistent 3-D object identities.

Tracklets are created only at block keyframes, carried across frames by the
track correspondences in the stream, re-identified after gaps by comparing
per-frame median point clouds, and cycled through a Recent / Removed /
Retained change model once per block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ConsistencyError
from .geometry import backproject, project_points
from .session import FrameRecord, InstanceMask, PipelineConfig


class ObjectState(Enum):
    RECENT = "Recent"
    REMOVED = "Removed"
    RETAINED = "Retained"


def disc_structure(radius: int) -> np.ndarray:
    """Boolean disc of the given pixel radius (Euclidean)."""
    if radius <= 0:
        return np.ones((1, 1), dtype=bool)
    span = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    return dy * dy + dx * dx <= radius * radius


def erode_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological erosion with a disc element; radius 0 is the identity."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    return ndimage.binary_erosion(mask, structure=disc_structure(radius))


def sample_mask(mask: np.ndarray, stride: int) -> list[tuple[int, int]]:
    """Grid-sample a mask: pixels with u % stride == 0 and v % stride == 0.

    If the grid misses a non-empty mask entirely, the mask pixel nearest the
    centroid is returned instead, so small masks always yield one sample.
    Returns (u, v) pairs.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    vs, us = np.nonzero(mask)
    if vs.size == 0:
        return []
    keep = (us % stride == 0) & (vs % stride == 0)
    if np.any(keep):
        return list(zip(us[keep].tolist(), vs[keep].tolist()))
    cu, cv = us.mean(), vs.mean()
    i = int(np.argmin((us - cu) ** 2 + (vs - cv) ** 2))
    return [(int(us[i]), int(vs[i]))]


@dataclass
class LabeledPoint2D:
    """A track point carrying a tracklet label within the current block."""

    u: float
    v: float
    tracklet_id: int
    point_id: int


@dataclass
class Tracklet:
    """A persistent object identity."""

    id: int
    class_id: int
    created_block: int
    per_frame_medians: dict[int, np.ndarray] = field(default_factory=dict)
    last_seen: int = -1
    confidence: float = 1.0
    state: ObjectState = ObjectState.RECENT

    def record_median(self, frame_index: int, median: np.ndarray, cap: int) -> None:
        self.per_frame_medians[frame_index] = median
        while len(self.per_frame_medians) > cap:
            oldest = min(self.per_frame_medians)
            del self.per_frame_medians[oldest]

    def median_points(self) -> np.ndarray:
        if not self.per_frame_medians:
            return np.zeros((0, 3))
        return np.stack([self.per_frame_medians[k] for k in sorted(self.per_frame_medians)])


class TrackletRegistry:
    """All tracklets plus merge aliases and recent per-frame mask assignments."""

    def __init__(self):
        self.tracklets: dict[int, Tracklet] = {}
        self.alias: dict[int, int] = {}
        self.frame_assignments: dict[int, dict[int, int]] = {}
        self._next_id = 1
        self.merge_count = 0

    def new_tracklet(self, class_id: int, block_index: int, frame_index: int) -> Tracklet:
        t = Tracklet(
            id=self._next_id,
            class_id=class_id,
            created_block=block_index,
            last_seen=frame_index,
        )
        self._next_id += 1
        self.tracklets[t.id] = t
        return t

    def resolve(self, tracklet_id: int) -> int:
        while tracklet_id in self.alias:
            tracklet_id = self.alias[tracklet_id]
        return tracklet_id

    def get(self, tracklet_id: int) -> Tracklet:
        return self.tracklets[self.resolve(tracklet_id)]

    def record_assignment(self, frame_index: int, instance_id: int, tracklet_id: int) -> None:
        self.frame_assignments.setdefault(frame_index, {})[instance_id] = tracklet_id

    def assignment_for(self, frame_index: int, instance_id: int) -> int | None:
        tid = self.frame_assignments.get(frame_index, {}).get(instance_id)
        return self.resolve(tid) if tid is not None else None

    def prune_assignments(self, keep_from_frame: int) -> None:
        for idx in [i for i in self.frame_assignments if i < keep_from_frame]:
            del self.frame_assignments[idx]

    def merge(self, source_id: int, target_id: int, cap: int) -> None:
        """Fold the newer tracklet into the older identity."""
        source = self.tracklets[source_id]
        target = self.tracklets[target_id]
        for frame_index in sorted(source.per_frame_medians):
            target.record_median(frame_index, source.per_frame_medians[frame_index], cap)
        target.last_seen = max(target.last_seen, source.last_seen)
        self.alias[source_id] = target_id
        del self.tracklets[source_id]
        self.merge_count += 1

    def export_text(self) -> str:
        lines = []
        for tid in sorted(self.tracklets):
            t = self.tracklets[tid]
            medians = t.median_points()
            lines.append(
                f"{t.id} {t.class_id} {t.state.value} {t.confidence:.6f} "
                f"{t.last_seen} {medians.shape[0]}"
            )
            for row in medians:
                lines.append(f"{row[0]:.6f} {row[1]:.6f} {row[2]:.6f}")
        return "\n".join(lines) + ("\n" if lines else "")


class ForegroundCloud:
    """Labeled object points, stored with the frame that produced them."""

    def __init__(self):
        self._points: list[np.ndarray] = []
        self._classes: list[np.ndarray] = []
        self._tracklets: list[np.ndarray] = []
        self._frames: list[np.ndarray] = []

    def append(self, points: np.ndarray, class_id: int, tracklet_id: int, frame_index: int):
        if points.shape[0] == 0:
            return
        n = points.shape[0]
        self._points.append(np.asarray(points, dtype=np.float64))
        self._classes.append(np.full(n, class_id, dtype=np.int64))
        self._tracklets.append(np.full(n, tracklet_id, dtype=np.int64))
        self._frames.append(np.full(n, frame_index, dtype=np.int64))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        if not self._points:
            empty = np.zeros(0, dtype=np.int64)
            return np.zeros((0, 3)), empty, empty, empty
        return (
            np.vstack(self._points),
            np.concatenate(self._classes),
            np.concatenate(self._tracklets),
            np.concatenate(self._frames),
        )

    def __len__(self):
        return sum(p.shape[0] for p in self._points)

    @staticmethod
    def from_arrays(points, classes, tracklets, frames) -> "ForegroundCloud":
        cloud = ForegroundCloud()
        if points.shape[0]:
            cloud._points = [points]
            cloud._classes = [classes]
            cloud._tracklets = [tracklets]
            cloud._frames = [frames]
        return cloud


def eroded_masks(frame: FrameRecord, config: PipelineConfig) -> list[np.ndarray]:
    """Per-instance masks after the standard noise-reducing erosion.

    A mask that erosion would empty out is kept as-is, so thin objects are
    not dropped entirely.
    """
    out = []
    for im in frame.instance_masks:
        e = erode_mask(im.mask, config.erosion_radius)
        out.append(e if e.any() else im.mask)
    return out


def _points_in_mask(mask: np.ndarray, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    px = np.clip(np.rint(us).astype(int), 0, w - 1)
    py = np.clip(np.rint(vs).astype(int), 0, h - 1)
    inside = (us >= 0) & (us < w) & (vs >= 0) & (vs < h)
    return inside & mask[py, px]


def init_tracklets(
    keyframe: FrameRecord,
    registry: TrackletRegistry,
    config: PipelineConfig,
    block_index: int,
) -> tuple[dict[int, int], dict[int, int]]:
    """Create or carry tracklets for every keyframe mask and label its track points.

    Masks already assigned a tracklet when this frame was processed in the
    previous block keep that identity; the rest get fresh tracklets. Returns
    (labels, keyframe_assignment) where labels maps track point id to
    tracklet id and keyframe_assignment maps mask instance id to tracklet id.
    """
    labels: dict[int, int] = {}
    assignment: dict[int, int] = {}
    tracks = keyframe.track_points
    visible = tracks[:, 3] > 0
    masks = eroded_masks(keyframe, config)

    for im, emask in zip(keyframe.instance_masks, masks):
        prior = registry.assignment_for(keyframe.index, im.instance_id)
        if prior is not None and registry.tracklets.get(prior) is not None \
                and registry.tracklets[prior].class_id == im.class_id:
            tid = prior
        else:
            tid = registry.new_tracklet(im.class_id, block_index, keyframe.index).id
        assignment[im.instance_id] = tid
        registry.record_assignment(keyframe.index, im.instance_id, tid)

        inside = visible & _points_in_mask(emask, tracks[:, 1], tracks[:, 2])
        idx = np.nonzero(inside)[0]
        if idx.size > config.max_points_per_instance:
            # Uniform thinning along scanline order keeps coverage spread out.
            order = idx[np.lexsort((tracks[idx, 1], tracks[idx, 2]))]
            pick = np.linspace(0, order.size - 1, config.max_points_per_instance)
            idx = order[np.unique(pick.astype(int))]
        for i in idx:
            labels[int(tracks[i, 0])] = tid
    return labels, assignment


def propagate(frame: FrameRecord, labels: dict[int, int]) -> list[LabeledPoint2D]:
    """Positions of labeled track points visible in this frame."""
    out = []
    for pid, u, v, vis in frame.track_points:
        if vis > 0 and int(pid) in labels:
            out.append(LabeledPoint2D(u=u, v=v, tracklet_id=labels[int(pid)], point_id=int(pid)))
    return out


def assign_masks(
    frame: FrameRecord,
    propagated: list[LabeledPoint2D],
    registry: TrackletRegistry,
    config: PipelineConfig,
) -> dict[int, int | None]:
    """Vote each mask's tracklet id from the propagated points inside it.

    Only class-consistent votes count. Each tracklet claims at most one mask,
    resolved greedily by descending vote count with ties broken toward the
    lower tracklet id, then the earlier mask. Masks with no votes are
    untracked (None) and never spawn tracklets mid-block.
    """
    masks = eroded_masks(frame, config)
    if propagated:
        us = np.array([p.u for p in propagated])
        vs = np.array([p.v for p in propagated])
    else:
        us = vs = np.zeros(0)

    candidates = []
    for mask_pos, (im, emask) in enumerate(zip(frame.instance_masks, masks)):
        if us.size == 0:
            continue
        inside = _points_in_mask(emask, us, vs)
        votes: dict[int, int] = {}
        for flag, p in zip(inside, propagated):
            if not flag:
                continue
            tid = registry.resolve(p.tracklet_id)
            tracklet = registry.tracklets.get(tid)
            if tracklet is None or tracklet.class_id != im.class_id:
                continue
            votes[tid] = votes.get(tid, 0) + 1
        for tid, count in votes.items():
            candidates.append((count, tid, mask_pos))

    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    assignment: dict[int, int | None] = {im.instance_id: None for im in frame.instance_masks}
    used: set[int] = set()
    claimed: set[int] = set()
    for count, tid, mask_pos in candidates:
        inst = frame.instance_masks[mask_pos].instance_id
        if mask_pos in claimed or tid in used:
            continue
        assignment[inst] = tid
        used.add(tid)
        claimed.add(mask_pos)
        registry.record_assignment(frame.index, inst, tid)
    return assignment


def lift_instances(
    frame: FrameRecord,
    assignment: dict[int, int | None],
    pose,
    validity: np.ndarray,
    registry: TrackletRegistry,
    cloud: ForegroundCloud,
    config: PipelineConfig,
) -> list[tuple[np.ndarray, int]]:
    """Back-project each assigned mask and record its per-frame median point.

    The median is taken component-wise over the raw lifted points, which keeps
    it on the object even for ring-shaped masks; the stored cloud increment is
    voxel thinned like the background. Masks whose valid pixels are all
    missing depth are skipped without touching the tracklet. Returns per-mask
    (points, tracklet_id) increments for the navigation layer.
    """
    from .alignment import voxel_downsample

    masks = eroded_masks(frame, config)
    increments = []
    for im, emask in zip(frame.instance_masks, masks):
        tid = assignment.get(im.instance_id)
        if tid is None:
            continue
        tid = registry.resolve(tid)
        tracklet = registry.tracklets.get(tid)
        if tracklet is None:
            continue
        lift_mask = emask & validity
        if not lift_mask.any():
            continue
        pts = backproject(frame.sensor_depth, frame.intrinsics, pose, lift_mask).points
        if pts.shape[0] == 0:
            continue
        median = np.median(pts, axis=0)
        tracklet.record_median(frame.index, median, config.medians_cap)
        tracklet.last_seen = max(tracklet.last_seen, frame.index)
        thin = voxel_downsample(pts, config.grid_cell / 2.0)
        cloud.append(thin, im.class_id, tid, frame.index)
        increments.append((thin, tid))
    return increments


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Min of the two directed mean nearest-neighbor distances.

    Taking the minimum direction keeps a partially observed object close to
    its fuller previous observation.
    """
    if a.shape[0] == 0 or b.shape[0] == 0:
        return float("inf")
    d_ab = float(np.mean(cKDTree(b).query(a)[0]))
    d_ba = float(np.mean(cKDTree(a).query(b)[0]))
    return min(d_ab, d_ba)


def reidentify(
    new_tracklet: Tracklet,
    candidates: list[Tracklet],
    config: PipelineConfig,
) -> Tracklet | None:
    """Best same-class inactive tracklet within the merge threshold, if any."""
    new_pts = new_tracklet.median_points()
    if new_pts.shape[0] == 0:
        return None
    best: tuple[float, int, Tracklet] | None = None
    for cand in candidates:
        if cand.class_id != new_tracklet.class_id or cand.id == new_tracklet.id:
            continue
        d = chamfer_distance(new_pts, cand.median_points())
        if d < config.merge_threshold and (best is None or (d, cand.id) < best[:2]):
            best = (d, cand.id, cand)
    return best[2] if best else None


def update_object_states(
    registry: TrackletRegistry,
    frame: FrameRecord,
    pose,
    config: PipelineConfig,
    block_first_index: int,
) -> None:
    """End-of-block state refresh against the block's last view.

    Observed tracklets become Recent with full confidence. Unobserved ones
    are projected into the view: mostly out of frame or behind something
    keeps them Retained with confidence untouched; observable-but-missing
    decays confidence linearly until Removed.
    """
    h, w = frame.sensor_depth.shape
    for tracklet in registry.tracklets.values():
        if tracklet.last_seen >= block_first_index:
            tracklet.state = ObjectState.RECENT
            tracklet.confidence = 1.0
            continue
        pts = tracklet.median_points()
        if pts.shape[0] == 0:
            tracklet.state = ObjectState.RETAINED
            continue
        u, v, depth, in_view = project_points(pts, frame.intrinsics, pose)
        if np.mean(in_view) < config.visibility_fraction:
            tracklet.state = ObjectState.RETAINED
            continue
        px = np.clip(np.rint(u[in_view]).astype(int), 0, w - 1)
        py = np.clip(np.rint(v[in_view]).astype(int), 0, h - 1)
        sensor = frame.sensor_depth.values[py, px]
        observable = (sensor > 0) & (sensor > depth[in_view] - config.occlusion_margin)
        if np.mean(observable) >= 0.5:
            tracklet.confidence = max(0.0, tracklet.confidence - config.decay_rate)
            if tracklet.confidence == 0.0:
                tracklet.state = ObjectState.REMOVED
            else:
                tracklet.state = ObjectState.RETAINED
        else:
            tracklet.state = ObjectState.RETAINED


def rebuild_foreground_view(registry: TrackletRegistry, cloud: ForegroundCloud) -> ForegroundCloud:
    """Filter out Removed objects and remap merged ids, by payload lookup only."""
    points, classes, tracklets, frames = cloud.arrays()
    if points.shape[0] == 0:
        return ForegroundCloud()
    remapped = np.array([registry.resolve(int(t)) for t in tracklets], dtype=np.int64)
    keep = np.ones(points.shape[0], dtype=bool)
    for tid in np.unique(remapped):
        tracklet = registry.tracklets.get(int(tid))
        if tracklet is None:
            raise ConsistencyError(f"foreground cloud references unknown tracklet {tid}")
        if tracklet.state is ObjectState.REMOVED:
            keep[remapped == tid] = False
    return ForegroundCloud.from_arrays(
        points[keep], classes[keep], remapped[keep], frames[keep]
    )
