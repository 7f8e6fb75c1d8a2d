"""Floor plane estimation and reference-plane tracking.

The plane is {x : n.x + d = 0} with the normal oriented so the camera
trajectory sits on the positive side. A new estimate replaces the reference
only when it disagrees with it but agrees with a strict majority of the
recent estimate history, which shrugs off single-estimate jolts.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import NoPlaneError
from .session import PipelineConfig


@dataclass
class PlaneEstimate:
    normal: np.ndarray   # unit 3-vector
    offset: float        # meters
    inlier_count: int = 0
    frame_index: int = -1

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise NoPlaneError("zero normal")
        self.normal = n / norm
        self.offset = float(self.offset)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.offset

    def oriented_toward(self, point: np.ndarray) -> "PlaneEstimate":
        """Flip so the given point has positive signed distance."""
        if float(np.dot(self.normal, point) + self.offset) < 0:
            return PlaneEstimate(-self.normal, -self.offset, self.inlier_count, self.frame_index)
        return self


def angle_between_normals(a: np.ndarray, b: np.ndarray) -> float:
    """Angle in degrees between two unit normals, sign-insensitive."""
    c = abs(float(np.dot(a, b)))
    return math.degrees(math.acos(min(1.0, c)))


def gravity_axis(trajectory_positions: np.ndarray) -> np.ndarray | None:
    """Axis of least camera-motion variance; None when the path is degenerate.

    Indoor trajectories move mostly parallel to the floor, so the quiet axis
    is a usable up-direction prior for plane hypotheses.
    """
    pts = np.asarray(trajectory_positions, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] < 3:
        return None
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    if vals[-1] < 1e-12:
        return None
    return vecs[:, 0]


def ransac_plane(
    points: np.ndarray,
    iterations: int,
    inlier_tol: float,
    seed: int,
    axis_hint: np.ndarray | None = None,
    axis_tol_deg: float = 30.0,
    above_point: np.ndarray | None = None,
) -> PlaneEstimate:
    """Best 3-point plane hypothesis by inlier count, refined by least squares.

    Hypotheses whose normal strays more than axis_tol_deg from axis_hint are
    rejected, which stops the floor search from locking onto walls. The
    refinement fits the inlier centroid plus the smallest covariance
    eigenvector. Deterministic for a fixed seed.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise NoPlaneError(f"need at least 3 points, got {pts.shape[0]}")
    rng = np.random.default_rng(seed)

    best_inliers = -1
    best_plane: tuple[np.ndarray, float] | None = None
    for _ in range(iterations):
        i, j, k = rng.choice(pts.shape[0], size=3, replace=False)
        n = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            continue
        n = n / norm
        if axis_hint is not None and angle_between_normals(n, axis_hint) > axis_tol_deg:
            continue
        d = -float(np.dot(n, pts[i]))
        count = int(np.sum(np.abs(pts @ n + d) <= inlier_tol))
        if count > best_inliers:
            best_inliers = count
            best_plane = (n, d)
    if best_plane is None:
        raise NoPlaneError("no non-degenerate plane hypothesis found")

    n, d = best_plane
    inliers = pts[np.abs(pts @ n + d) <= inlier_tol]
    if inliers.shape[0] >= 3:
        centroid = inliers.mean(axis=0)
        centered = inliers - centroid
        cov = centered.T @ centered
        _, vecs = np.linalg.eigh(cov)
        refined_n = vecs[:, 0]
        if np.dot(refined_n, n) < 0:
            refined_n = -refined_n
        # Near-collinear inlier sets leave the smallest eigenvector unconstrained;
        # keep the sampled normal if the refinement swings far away from it.
        if angle_between_normals(refined_n, n) <= 45.0:
            n = refined_n
            d = -float(np.dot(n, centroid))
        inlier_count = inliers.shape[0]
    else:
        inlier_count = best_inliers
    estimate = PlaneEstimate(n, d, inlier_count=inlier_count)
    if above_point is not None:
        estimate = estimate.oriented_toward(np.asarray(above_point, dtype=np.float64))
    return estimate


def planes_match(a: PlaneEstimate, b: PlaneEstimate, config: PipelineConfig) -> bool:
    """Same plane iff normal angle and offset both land inside tolerance."""
    if angle_between_normals(a.normal, b.normal) >= config.plane_angle_tol:
        return False
    # Compare offsets with both normals in the same hemisphere.
    offset_b = b.offset if float(np.dot(a.normal, b.normal)) >= 0 else -b.offset
    return abs(a.offset - offset_b) < config.plane_offset_tol


class PlaneTracker:
    """Reference plane with a ring buffer of the last few estimates."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.reference: PlaneEstimate | None = None
        self.history: deque[PlaneEstimate] = deque(maxlen=config.plane_history)
        self.change_count = 0

    def update_reference(self, new: PlaneEstimate) -> bool:
        """Absorb one estimate; returns True when the reference plane changed.

        The first estimate seeds the reference. Later, a mismatching estimate
        replaces the reference only when it matches a strict majority of the
        history (its own entry included), so one jolt can never flip it.
        """
        self.history.append(new)
        if self.reference is None:
            self.reference = new
            return True
        if planes_match(new, self.reference, self.config):
            return False
        matches = sum(1 for est in self.history if planes_match(new, est, self.config))
        if matches > self.config.plane_history // 2:
            self.reference = new
            self.change_count += 1
            return True
        return False
