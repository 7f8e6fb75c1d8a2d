"""Metric scale recovery and anchor-based inter-block alignment.

Each block's model output lives in its own local frame at an unknown scale.
The scale is recovered per frame from the sensor depth and aggregated as a
median; anchor frames shared with the previous block give the rigid transform
that chains the block into the global trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    AlignmentError,
    BlockScaleError,
    InvalidScaleError,
    NoScaleError,
)
from .geometry import DepthMap, PointCloud, RigidPose, backproject, compose
from .session import Block, FrameRecord, PipelineConfig


def build_validity_mask(frame: FrameRecord, config: PipelineConfig) -> np.ndarray:
    """Pixels trusted by both depth sources.

    A pixel is valid iff its confidence clears the absolute threshold, is not
    in the lowest conf_quantile fraction of this frame's confidence values,
    the sensor depth lies inside the sensor range, and both depths are > 0.
    """
    conf = frame.pred_confidence
    sensor = frame.sensor_depth.values
    pred = frame.pred_depth.values

    ok = conf >= config.conf_threshold
    flat = np.sort(conf.reshape(-1))
    drop = int(np.floor(config.conf_quantile * flat.size))
    if drop > 0:
        ok &= conf >= flat[drop]
    lo, hi = config.sensor_range
    ok &= (sensor >= lo) & (sensor <= hi)
    ok &= (sensor > 0) & (pred > 0)
    return ok


def frame_scale(pred: DepthMap, sensor: DepthMap, mask: np.ndarray) -> float:
    """Closed-form argmin_s sum_valid (s*pred - sensor)^2."""
    p = pred.values[mask]
    s = sensor.values[mask]
    if p.size == 0:
        raise NoScaleError("no valid pixels for scale estimation")
    denom = float(np.dot(p, p))
    if denom == 0.0:
        raise NoScaleError("predicted depth is zero on all valid pixels")
    return float(np.dot(p, s) / denom)


def lower_median(values) -> float:
    """Median; for an even count, the lower of the two middle values."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("empty")
    return float(ordered[(len(ordered) - 1) // 2])


def block_scale(frames: list[FrameRecord], masks: list[np.ndarray]) -> float:
    """Median of per-frame scales; frames with no valid pixels are skipped."""
    scales = []
    for frame, mask in zip(frames, masks):
        try:
            scales.append(frame_scale(frame.pred_depth, frame.sensor_depth, mask))
        except NoScaleError:
            continue
    if not scales:
        raise BlockScaleError("no frame in block produced a scale")
    return lower_median(scales)


def apply_scale(pose: RigidPose, s: float) -> RigidPose:
    """Scale a pose's translation, leaving the rotation untouched."""
    if s <= 0:
        raise InvalidScaleError(f"scale must be positive, got {s}")
    return RigidPose(pose.rotation, pose.translation * s)


def apply_block_scale(
    local_poses: list[RigidPose], depths: list[DepthMap], s: float
) -> tuple[list[RigidPose], list[DepthMap]]:
    """Bring model-unit poses and predicted depths into metric units."""
    if s <= 0:
        raise InvalidScaleError(f"scale must be positive, got {s}")
    scaled_poses = [apply_scale(p, s) for p in local_poses]
    scaled_depths = [DepthMap(d.values * s, d.validity) for d in depths]
    return scaled_poses, scaled_depths


def average_rotations(rotations: list[np.ndarray]) -> np.ndarray:
    """Chordal L2 mean rotation via the quaternion outer-product eigenproblem."""
    acc = np.zeros((4, 4))
    for r in rotations:
        q = Rotation.from_matrix(r).as_quat()
        acc += np.outer(q, q)
    _, vecs = np.linalg.eigh(acc)
    q_mean = vecs[:, -1]
    return Rotation.from_quat(q_mean).as_matrix()


def estimate_block_transform(
    anchor_global: list[RigidPose], anchor_local_scaled: list[RigidPose]
) -> RigidPose:
    """Rigid transform T with T o local_i ~= global_i over the anchor pairs.

    Per-anchor candidates T_i = global_i o inverse(local_i) are fused with a
    chordal-mean rotation and a component-wise median translation, which
    tolerates a single bad anchor without an iterative solver.
    """
    if len(anchor_global) == 0 or len(anchor_global) != len(anchor_local_scaled):
        raise AlignmentError("need at least one aligned anchor pair")
    candidates = [
        compose(g, l.inverse()) for g, l in zip(anchor_global, anchor_local_scaled)
    ]
    if len(candidates) == 1:
        return candidates[0]
    rotation = average_rotations([c.rotation for c in candidates])
    translations = np.stack([c.translation for c in candidates])
    translation = np.array(
        [lower_median(translations[:, axis]) for axis in range(3)]
    )
    return RigidPose(rotation, translation)


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Keep the first point seen in each voxel (deterministic for fixed order)."""
    if points.shape[0] == 0:
        return points
    keys = np.floor(points / voxel).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


@dataclass
class BlockAlignment:
    """Result of aligning one block into the global frame."""

    scale: float
    block_to_global: RigidPose
    per_frame_global: list[RigidPose]


@dataclass
class GlobalMap:
    """Accumulated trajectory and background geometry.

    Background points are stored per block together with the index of the
    frame that produced each point, so the navigation grid can be rebuilt
    with per-frame granularity after a reference-plane change.
    """

    trajectory: list[tuple[int, RigidPose]] = field(default_factory=list)
    background_chunks: list[np.ndarray] = field(default_factory=list)
    background_frame_ids: list[np.ndarray] = field(default_factory=list)

    def background_cloud(self) -> PointCloud:
        if not self.background_chunks:
            return PointCloud(np.zeros((0, 3)))
        return PointCloud(np.vstack(self.background_chunks))

    def background_with_frames(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.background_chunks:
            return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
        return np.vstack(self.background_chunks), np.concatenate(self.background_frame_ids)

    def point_count(self) -> int:
        return sum(c.shape[0] for c in self.background_chunks)


def background_mask(frame: FrameRecord, validity: np.ndarray) -> np.ndarray:
    """Valid pixels not covered by any instance mask."""
    m = validity.copy()
    for im in frame.instance_masks:
        m &= ~im.mask
    return m


def accumulate(
    global_map: GlobalMap,
    block: Block,
    alignment: BlockAlignment,
    masks: list[np.ndarray],
    config: PipelineConfig,
) -> list[tuple[int, np.ndarray]]:
    """Extend the trajectory and background cloud with this block's frames.

    Anchor frames contributed their points in their home block, so only the
    block's own frames are ingested. Each frame's background points are voxel
    downsampled at half the nav cell size before being stored. Returns the
    per-frame downsampled chunks for the navigation layer.
    """
    voxel = config.grid_cell / 2.0
    per_frame: list[tuple[int, np.ndarray]] = []
    for frame, pose, validity in zip(block.frames, alignment.per_frame_global, masks):
        global_map.trajectory.append((frame.index, pose))
        cloud = backproject(
            frame.sensor_depth, frame.intrinsics, pose, background_mask(frame, validity)
        )
        pts = voxel_downsample(cloud.points, voxel)
        per_frame.append((frame.index, pts))
        if pts.shape[0]:
            global_map.background_chunks.append(pts)
            global_map.background_frame_ids.append(
                np.full(pts.shape[0], frame.index, dtype=np.int64)
            )
    return per_frame


def window_locals(block: Block) -> tuple[list[RigidPose], list[RigidPose]]:
    """Re-express stored poses relative to the current window's first frame.

    Stored local poses are relative to the frame's home-window start. Anchors
    all come from the previous block, so composing with the inverse of the
    first anchor's stored pose cancels the shared reference and yields every
    anchor's pose in the current window frame. The block's own frames are
    already stored relative to this window's start.
    """
    anchor_locals: list[RigidPose] = []
    if block.anchor_frames:
        base_inv = block.anchor_frames[0].local_pose.inverse()
        anchor_locals = [compose(base_inv, a.local_pose) for a in block.anchor_frames]
    frame_locals = [f.local_pose for f in block.frames]
    return anchor_locals, frame_locals


def align_block(
    block: Block,
    masks: list[np.ndarray],
    anchor_globals: list[RigidPose],
    fallback_scale: float | None,
) -> BlockAlignment:
    """Scale and globalize one block.

    anchor_globals are the previously computed global poses of the block's
    anchor frames, in frame order. For block 0 the transform is the identity
    (the global frame is anchored at the first camera).
    """
    try:
        s = block_scale(block.frames, masks)
    except BlockScaleError:
        if fallback_scale is None:
            raise
        s = fallback_scale

    anchor_locals, frame_locals = window_locals(block)
    scaled_frames = [apply_scale(p, s) for p in frame_locals]

    if block.index == 0:
        transform = RigidPose.identity()
    else:
        if not block.anchor_frames:
            raise AlignmentError(f"block {block.index} has no anchor frames")
        if len(anchor_globals) != len(anchor_locals):
            raise AlignmentError(
                f"block {block.index}: {len(anchor_globals)} anchor poses for "
                f"{len(anchor_locals)} anchors"
            )
        scaled_anchors = [apply_scale(p, s) for p in anchor_locals]
        transform = estimate_block_transform(anchor_globals, scaled_anchors)

    per_frame_global = [compose(transform, p) for p in scaled_frames]
    return BlockAlignment(scale=s, block_to_global=transform, per_frame_global=per_frame_global)
