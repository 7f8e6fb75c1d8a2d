"""Rigid poses, pinhole cameras, depth maps and point clouds.

Camera convention used everywhere: +z forward, +x right, +y down.
Pixel (u, v) has u horizontal (column) and v vertical (row). A pose maps
camera-frame points into the world frame: x_world = R @ x_cam + t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ValidationError

# Composition chains longer than this are renormalized to bound rotation drift.
RENORMALIZE_CHAIN = 100


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix onto SO(3) (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


@dataclass(frozen=True)
class RigidPose:
    """SE(3) transform: rotation (3x3, det +1) and translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray
    chain: int = field(default=0, compare=False)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValidationError("pose contains non-finite entries")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T
        return RigidPose(rt, -rt @ self.translation, chain=self.chain)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """3x4 [R|t] row-major matrix."""
        return np.hstack([self.rotation, self.translation[:, None]])


def compose(a: RigidPose, b: RigidPose) -> RigidPose:
    """Composition a∘b, so that (a∘b)(x) == a(b(x))."""
    r = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    chain = a.chain + b.chain + 1
    if chain > RENORMALIZE_CHAIN:
        r = orthonormalize(r)
        chain = 0
    return RigidPose(r, t, chain=chain)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point outside image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass
class DepthMap:
    """H x W depth grid in meters; 0 marks invalid pixels."""

    values: np.ndarray
    validity: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError("depth map must be 2-D")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValidationError("depth values must be finite and >= 0")
        self.values = v
        if self.validity is not None:
            m = np.asarray(self.validity, dtype=bool)
            if m.shape != v.shape:
                raise ValidationError("validity shape mismatch")
            self.validity = m

    @property
    def shape(self):
        return self.values.shape

    def valid_mask(self) -> np.ndarray:
        m = self.values > 0
        if self.validity is not None:
            m = m & self.validity
        return m


@dataclass
class PointCloud:
    """Bag of 3-D points with optional (class_id, instance_id) payload per point."""

    points: np.ndarray
    class_ids: np.ndarray | None = None
    instance_ids: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValidationError("point cloud contains NaN/Inf")
        self.points = p
        for name in ("class_ids", "instance_ids"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.int64).reshape(-1)
                if arr.shape[0] != p.shape[0]:
                    raise ValidationError(f"{name} length mismatch")
                setattr(self, name, arr)

    def __len__(self):
        return self.points.shape[0]


def backproject(
    depth: DepthMap,
    intr: Intrinsics,
    pose: RigidPose,
    mask: np.ndarray | None = None,
) -> PointCloud:
    """Back-project masked valid depth pixels into world-frame points.

    One point per pixel where mask is true and depth > 0. Pixel (u, v) with
    depth d maps to pose applied to d * K^-1 [u, v, 1].
    """
    h, w = depth.shape
    if (h, w) != (intr.height, intr.width):
        raise InvalidInputError(
            f"depth {h}x{w} does not match intrinsics {intr.height}x{intr.width}"
        )
    m = depth.valid_mask()
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (h, w):
            raise InvalidInputError("mask shape mismatch")
        m = m & mask
    vs, us = np.nonzero(m)
    d = depth.values[vs, us]
    x = (us - intr.cx) / intr.fx * d
    y = (vs - intr.cy) / intr.fy * d
    cam = np.stack([x, y, d], axis=1)
    return PointCloud(pose.apply(cam))


def project_points(
    points: np.ndarray, intr: Intrinsics, pose: RigidPose
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Project world points into the camera.

    Returns (u, v, depth, in_view) arrays. in_view is false for points behind
    the camera or outside the image footprint. Pixel centers sit at integer
    coordinates, so the footprint spans [-0.5, size - 0.5) per axis and every
    in-view coordinate rounds to a valid pixel index.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = (pts - pose.translation) @ pose.rotation
    z = cam[:, 2]
    behind = z <= 0
    safe_z = np.where(behind, 1.0, z)
    u = intr.fx * cam[:, 0] / safe_z + intr.cx
    v = intr.fy * cam[:, 1] / safe_z + intr.cy
    in_view = (
        ~behind
        & (u >= -0.5) & (u < intr.width - 0.5)
        & (v >= -0.5) & (v < intr.height - 0.5)
    )
    return u, v, z, in_view


def project(point: np.ndarray, intr: Intrinsics, pose: RigidPose):
    """Project a single world point; returns (u, v, depth) or None if out of view."""
    u, v, z, ok = project_points(np.asarray(point)[None, :], intr, pose)
    if not ok[0]:
        return None
    return float(u[0]), float(v[0]), float(z[0])
