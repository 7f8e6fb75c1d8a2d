"""On-disk session format and block-ordered streaming.

A session is a directory with a text ``manifest`` plus one ``frame_<i>/``
subdirectory per frame. All binary grids are little-endian row-major.

    manifest                 key=value lines (version, frames, width, height,
                             fx fy cx cy, optional config overrides)
    frame_<i>/sensor_depth.f32   W*H float32 meters, 0 = invalid
    frame_<i>/pred_depth.f32     W*H float32 model units (pre-scale)
    frame_<i>/pred_conf.f32      W*H float32 confidence
    frame_<i>/pose.txt           12 decimals, row-major 3x4 [R|t]
    frame_<i>/masks.u16          W*H uint16 instance ids, 0 = background
    frame_<i>/mask_classes.txt   lines "<instance-id> <class-id>"
    frame_<i>/tracks.txt         lines "<point-id> <u> <v> <visible:0|1>"
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import FormatError, ValidationError
from .geometry import DepthMap, Intrinsics, RigidPose


@dataclass
class PipelineConfig:
    """All tunables of the engine, overridable from a manifest or config file."""

    block_size: int = 10          # frames per block
    anchor_count: int = 10        # trailing frames shared with the next block
    conf_threshold: float = 1.1   # absolute confidence cutoff
    conf_quantile: float = 0.10   # per-frame fraction of lowest confidences dropped
    sensor_min: float = 0.2       # meters, reliable sensor range
    sensor_max: float = 15.0
    merge_threshold: float = 0.30     # meters, re-identification distance
    decay_rate: float = 0.25          # confidence lost per missed visible check
    plane_angle_tol: float = 5.0      # degrees
    plane_offset_tol: float = 0.1     # meters
    plane_history: int = 5            # ring buffer length l
    plane_every_blocks: int = 2       # re-estimate cadence
    ransac_iterations: int = 256
    ransac_inlier_tol: float = 0.02   # meters
    grid_cell: float = 0.05           # meters per nav cell
    dilation_radius: float = 0.30     # meters, obstacle inflation
    min_component_area: int = 4       # cells, spurious goal filter
    sample_stride: int = 4            # pixels, mask grid sampling
    erosion_radius: int = 1           # pixels
    max_points_per_instance: int = 64
    medians_cap: int = 50             # most recent medians kept per tracklet
    visibility_fraction: float = 0.5
    occlusion_margin: float = 0.10    # meters
    density_threshold: float = 3.0    # mean points/frame marking an obstacle
    speckle_min_cells: int = 3        # smaller obstacle blobs are noise
    floor_eps: float = 0.08           # meters, known-floor height band
    agent_height: float = 2.0         # meters, obstacle-relevant height ceiling
    snap_radius: float = 0.5          # meters, goal/start snapping
    goal_hysteresis: float = 0.2      # new goal must be this fraction closer

    def __post_init__(self):
        if not (0 < self.anchor_count <= self.block_size):
            raise ValidationError("require 0 < anchor_count <= block_size")
        if not (0 < self.conf_quantile < 1):
            raise ValidationError("conf_quantile must be in (0, 1)")
        for name in ("sensor_min", "sensor_max", "merge_threshold", "grid_cell",
                     "plane_offset_tol", "snap_radius"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.sensor_min >= self.sensor_max:
            raise ValidationError("sensor_min must be below sensor_max")

    @property
    def sensor_range(self) -> tuple[float, float]:
        return (self.sensor_min, self.sensor_max)

    def with_overrides(self, overrides: dict[str, str]) -> "PipelineConfig":
        """Apply string key=value overrides, coercing to each field's type."""
        kwargs = {}
        types = {f.name: f.type for f in fields(self)}
        for key, raw in overrides.items():
            if key not in types:
                raise FormatError(f"unknown config key: {key}")
            current = getattr(self, key)
            kwargs[key] = type(current)(raw) if not isinstance(current, bool) else raw in ("1", "true")
        return replace(self, **kwargs)


@dataclass
class InstanceMask:
    """One segmented instance in one frame."""

    instance_id: int
    class_id: int
    mask: np.ndarray  # H x W bool


@dataclass
class FrameRecord:
    """One stream element, as produced by the perception adapter."""

    index: int
    sensor_depth: DepthMap
    pred_depth: DepthMap
    pred_confidence: np.ndarray
    local_pose: RigidPose
    intrinsics: Intrinsics
    instance_masks: list[InstanceMask] = field(default_factory=list)
    track_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    # track_points rows: (point_id, u, v, visible)

    def __post_init__(self):
        shape = self.sensor_depth.shape
        if self.pred_depth.shape != shape or self.pred_confidence.shape != shape:
            raise ValidationError(f"frame {self.index}: grid size mismatch")
        if shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValidationError(f"frame {self.index}: grids do not match intrinsics")
        seen = set()
        for im in self.instance_masks:
            if im.mask.shape != shape:
                raise ValidationError(f"frame {self.index}: mask size mismatch")
            if im.instance_id in seen:
                raise ValidationError(f"frame {self.index}: duplicate instance id")
            seen.add(im.instance_id)
        tp = np.asarray(self.track_points, dtype=np.float64).reshape(-1, 4)
        ids = tp[:, 0].astype(np.int64)
        if len(np.unique(ids)) != len(ids):
            raise ValidationError(f"frame {self.index}: duplicate track point ids")
        self.track_points = tp


@dataclass
class Block:
    """A contiguous run of frames plus the previous block's trailing anchors."""

    index: int
    frames: list[FrameRecord]
    anchor_frames: list[FrameRecord] = field(default_factory=list)

    @property
    def keyframe(self) -> FrameRecord:
        """First frame of the processing window (first anchor, or frame 0)."""
        return self.anchor_frames[0] if self.anchor_frames else self.frames[0]

    @property
    def first_index(self) -> int:
        return self.frames[0].index

    @property
    def last_index(self) -> int:
        return self.frames[-1].index


def _parse_manifest(path: Path) -> dict[str, str]:
    entries = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"bad manifest line: {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


_MANIFEST_KEYS = {"version", "frames", "width", "height", "fx", "fy", "cx", "cy"}


class Session:
    """Handle over a session directory; yields FrameRecords in index order.

    Reading is lazy: each frame's files are loaded when the iterator reaches
    it, so memory stays bounded by one frame regardless of stream length.
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        manifest_path = self.root / "manifest"
        if not manifest_path.is_file():
            raise FormatError(f"no manifest in {self.root}")
        entries = _parse_manifest(manifest_path)
        missing = _MANIFEST_KEYS - entries.keys()
        if missing:
            raise FormatError(f"manifest missing keys: {sorted(missing)}")
        if entries["version"] != "1":
            raise FormatError(f"unsupported session version {entries['version']}")
        self.frame_count = int(entries["frames"])
        self.width = int(entries["width"])
        self.height = int(entries["height"])
        self.intrinsics = Intrinsics(
            fx=float(entries["fx"]),
            fy=float(entries["fy"]),
            cx=float(entries["cx"]),
            cy=float(entries["cy"]),
            width=self.width,
            height=self.height,
        )
        self.config_overrides = {
            k: v for k, v in entries.items() if k not in _MANIFEST_KEYS
        }

    def config(self, base: PipelineConfig | None = None) -> PipelineConfig:
        base = base or PipelineConfig()
        return base.with_overrides(self.config_overrides)

    def _read_grid(self, path: Path, dtype, frame: int) -> np.ndarray:
        if not path.is_file():
            raise FormatError(f"frame {frame}: missing {path.name}")
        raw = np.fromfile(path, dtype=dtype)
        expected = self.width * self.height
        if raw.size != expected:
            raise ValidationError(
                f"frame {frame}: {path.name} has {raw.size} values, expected {expected}"
            )
        return raw.reshape(self.height, self.width)

    def read_frame(self, index: int) -> FrameRecord:
        fdir = self.root / f"frame_{index}"
        if not fdir.is_dir():
            raise FormatError(f"frame {index}: directory missing")
        sensor = self._read_grid(fdir / "sensor_depth.f32", "<f4", index).astype(np.float64)
        pred = self._read_grid(fdir / "pred_depth.f32", "<f4", index).astype(np.float64)
        conf = self._read_grid(fdir / "pred_conf.f32", "<f4", index).astype(np.float64)

        pose_path = fdir / "pose.txt"
        if not pose_path.is_file():
            raise FormatError(f"frame {index}: missing pose.txt")
        vals = np.array(pose_path.read_text().split(), dtype=np.float64)
        if vals.size != 12:
            raise ValidationError(f"frame {index}: pose.txt needs 12 values")
        mat = vals.reshape(3, 4)
        pose = RigidPose(mat[:, :3], mat[:, 3])

        raster = self._read_grid(fdir / "masks.u16", "<u2", index)
        classes_path = fdir / "mask_classes.txt"
        masks = []
        if classes_path.is_file():
            for line in classes_path.read_text().splitlines():
                line = line.strip()
                if not line:
                    continue
                inst_s, cls_s = line.split()
                inst = int(inst_s)
                masks.append(
                    InstanceMask(instance_id=inst, class_id=int(cls_s), mask=raster == inst)
                )

        tracks_path = fdir / "tracks.txt"
        rows = []
        if tracks_path.is_file():
            for line in tracks_path.read_text().splitlines():
                line = line.strip()
                if not line:
                    continue
                pid, u, v, vis = line.split()
                rows.append((float(pid), float(u), float(v), float(vis)))
        tracks = np.array(rows, dtype=np.float64).reshape(-1, 4)

        return FrameRecord(
            index=index,
            sensor_depth=DepthMap(sensor),
            pred_depth=DepthMap(pred),
            pred_confidence=conf,
            local_pose=pose,
            intrinsics=self.intrinsics,
            instance_masks=masks,
            track_points=tracks,
        )

    def frames(self, max_frames: int | None = None) -> Iterator[FrameRecord]:
        count = self.frame_count if max_frames is None else min(max_frames, self.frame_count)
        for i in range(count):
            yield self.read_frame(i)

    def __iter__(self) -> Iterator[FrameRecord]:
        return self.frames()


def open_session(path) -> Session:
    return Session(Path(path))


def blockify(stream: Iterable[FrameRecord], config: PipelineConfig) -> Iterator[Block]:
    """Partition an index-ordered stream into blocks of block_size frames.

    Block i holds frames [i*n, (i+1)*n); its anchors are the trailing
    anchor_count frames of block i-1 (empty for block 0). At most
    n + anchor_count frames are held at any time.
    """
    n, k = config.block_size, config.anchor_count
    anchors: list[FrameRecord] = []
    current: list[FrameRecord] = []
    block_index = 0
    for frame in stream:
        current.append(frame)
        if len(current) == n:
            yield Block(index=block_index, frames=current, anchor_frames=anchors)
            anchors = current[-k:]
            current = []
            block_index += 1
    if current:
        yield Block(index=block_index, frames=current, anchor_frames=anchors)


def write_frame(
    root: Path,
    index: int,
    sensor_depth: np.ndarray,
    pred_depth: np.ndarray,
    pred_conf: np.ndarray,
    pose: RigidPose,
    mask_raster: np.ndarray,
    mask_classes: dict[int, int],
    tracks: np.ndarray,
) -> None:
    """Write one frame directory in the session layout."""
    fdir = Path(root) / f"frame_{index}"
    fdir.mkdir(parents=True, exist_ok=True)
    np.asarray(sensor_depth, dtype="<f4").tofile(fdir / "sensor_depth.f32")
    np.asarray(pred_depth, dtype="<f4").tofile(fdir / "pred_depth.f32")
    np.asarray(pred_conf, dtype="<f4").tofile(fdir / "pred_conf.f32")
    (fdir / "pose.txt").write_text(
        " ".join(repr(float(x)) for x in pose.matrix().reshape(-1)) + "\n"
    )
    np.asarray(mask_raster, dtype="<u2").tofile(fdir / "masks.u16")
    (fdir / "mask_classes.txt").write_text(
        "".join(f"{inst} {cls}\n" for inst, cls in sorted(mask_classes.items()))
    )
    lines = []
    for pid, u, v, vis in np.asarray(tracks, dtype=np.float64).reshape(-1, 4):
        lines.append(f"{int(pid)} {repr(float(u))} {repr(float(v))} {int(vis)}\n")
    (fdir / "tracks.txt").write_text("".join(lines))


def write_manifest(
    root: Path,
    frames: int,
    intrinsics: Intrinsics,
    overrides: dict[str, object] | None = None,
) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = [
        "version=1",
        f"frames={frames}",
        f"width={intrinsics.width}",
        f"height={intrinsics.height}",
        f"fx={repr(float(intrinsics.fx))}",
        f"fy={repr(float(intrinsics.fy))}",
        f"cx={repr(float(intrinsics.cx))}",
        f"cy={repr(float(intrinsics.cy))}",
    ]
    for key, value in (overrides or {}).items():
        lines.append(f"{key}={value}")
    (root / "manifest").write_text("\n".join(lines) + "\n")
