"""Floor-projected 2-D mapping and goal-directed planning.

The grid accumulates a per-cell mean point density (total points divided by
the number of frames that observed the cell), a minimum observed height for
the known-floor test, and a semantic label raster rebuilt from the filtered
foreground cloud each block. Occupancy combines density-thresholded obstacle
seeds, morphological denoising and inflation, and an undilated unknown-floor
layer; planning runs A* over free cells with exact diagonal bookkeeping.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError, InvalidStartError, ReprojectionRequiredError
from .floor import PlaneEstimate
from .instances import ObjectState, TrackletRegistry
from .session import PipelineConfig

SQRT2 = math.sqrt(2.0)
EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


class Occupancy(IntEnum):
    FREE = 0
    OBSTACLE = 1
    UNKNOWN = 2


def plane_basis(plane: PlaneEstimate) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal (u, v) chart spanning the plane.

    u is the normalized in-plane projection of world-x, falling back to
    world-y when the normal is nearly parallel to x; v completes the
    right-handed frame (u, v, normal).
    """
    n = plane.normal
    for axis in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        u = axis - np.dot(axis, n) * n
        norm = np.linalg.norm(u)
        if norm > 1e-6:
            u = u / norm
            break
    v = np.cross(n, u)
    return u, v


@dataclass
class NavPlan:
    goal_cell: tuple[int, int] | None
    goal_tracklet: int | None
    waypoints: list[tuple[int, int]]
    status: str  # Reached | Planned | Exploring | NoGoal

    # Straight/diagonal step counts; cost = straight + diagonal * sqrt(2).
    straight_steps: int = 0
    diagonal_steps: int = 0

    @property
    def cost(self) -> float:
        return self.straight_steps + self.diagonal_steps * SQRT2


@dataclass
class NavGrid:
    """Raster stack over the floor plane. Cell (row, col) covers plane
    coordinates [origin + (col, row)*cell, origin + (col+1, row+1)*cell)."""

    plane: PlaneEstimate
    cell: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    density_sum: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))
    obs_frames: np.ndarray = field(default_factory=lambda: np.zeros((1, 1), dtype=np.int64))
    last_frame: np.ndarray = field(default_factory=lambda: np.full((1, 1), -1, dtype=np.int64))
    min_height: np.ndarray = field(default_factory=lambda: np.full((1, 1), np.inf))
    label: np.ndarray = field(default_factory=lambda: np.zeros((1, 1), dtype=np.int64))
    occupancy: np.ndarray = field(
        default_factory=lambda: np.full((1, 1), Occupancy.UNKNOWN, dtype=np.uint8)
    )
    total_points: int = 0

    def __post_init__(self):
        self._basis = plane_basis(self.plane)

    @property
    def shape(self) -> tuple[int, int]:
        return self.density_sum.shape

    def plane_coords(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(pu, pv) chart coordinates and heights above the plane."""
        u_axis, v_axis = self._basis
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        pu = pts @ u_axis
        pv = pts @ v_axis
        h = pts @ self.plane.normal + self.plane.offset
        return np.stack([pu, pv], axis=1), h

    def cells_of(self, plane_uv: np.ndarray) -> np.ndarray:
        """(row, col) integer cells; callers must have covered the extents."""
        rel = (plane_uv - self.origin) / self.cell
        cols = np.floor(rel[:, 0]).astype(np.int64)
        rows = np.floor(rel[:, 1]).astype(np.int64)
        return np.stack([rows, cols], axis=1)

    def cell_center(self, cell: tuple[int, int]) -> np.ndarray:
        row, col = cell
        return self.origin + (np.array([col, row]) + 0.5) * self.cell

    def world_to_cell(self, point: np.ndarray) -> tuple[int, int]:
        uv, _ = self.plane_coords(np.asarray(point).reshape(1, 3))
        self.ensure_cover(uv)
        rc = self.cells_of(uv)[0]
        return int(rc[0]), int(rc[1])

    def ensure_cover(self, plane_uv: np.ndarray, pad: int = 2) -> None:
        """Grow rasters (shifting the origin) so every coordinate has a cell."""
        if plane_uv.shape[0] == 0:
            return
        rel = (plane_uv - self.origin) / self.cell
        min_col = math.floor(rel[:, 0].min()) - pad
        max_col = math.floor(rel[:, 0].max()) + pad
        min_row = math.floor(rel[:, 1].min()) - pad
        max_row = math.floor(rel[:, 1].max()) + pad
        h, w = self.shape
        grow_left = max(0, -min_col)
        grow_top = max(0, -min_row)
        grow_right = max(0, max_col - (w - 1))
        grow_bottom = max(0, max_row - (h - 1))
        if not (grow_left or grow_top or grow_right or grow_bottom):
            return
        new_h = h + grow_top + grow_bottom
        new_w = w + grow_left + grow_right

        def expand(arr, fill):
            out = np.full((new_h, new_w), fill, dtype=arr.dtype)
            out[grow_top:grow_top + h, grow_left:grow_left + w] = arr
            return out

        self.density_sum = expand(self.density_sum, 0.0)
        self.obs_frames = expand(self.obs_frames, 0)
        self.last_frame = expand(self.last_frame, -1)
        self.min_height = expand(self.min_height, np.inf)
        self.label = expand(self.label, 0)
        self.occupancy = expand(self.occupancy, int(Occupancy.UNKNOWN))
        self.origin = self.origin - np.array([grow_left, grow_top]) * self.cell

    def density_mean(self) -> np.ndarray:
        return self.density_sum / np.maximum(self.obs_frames, 1)

    def snapshot(self) -> "NavGrid":
        """Frozen copy for publication; later blocks mutate only the original."""
        return NavGrid(
            plane=self.plane,
            cell=self.cell,
            origin=self.origin.copy(),
            density_sum=self.density_sum.copy(),
            obs_frames=self.obs_frames.copy(),
            last_frame=self.last_frame.copy(),
            min_height=self.min_height.copy(),
            label=self.label.copy(),
            occupancy=self.occupancy.copy(),
            total_points=self.total_points,
        )


def project_frame_points(
    grid: NavGrid,
    frame_index: int,
    points: np.ndarray,
    config: PipelineConfig,
    plane: PlaneEstimate | None = None,
) -> None:
    """Fuse one frame's points into the grid.

    Density counts only points in the obstacle height band, so the floor
    itself never reads as occupied; the frame counter increments once per
    (frame, cell) pair no matter how the frame's points are split across
    calls. Heights update the minimum-height layer unconditionally.
    """
    if plane is not None and plane is not grid.plane:
        same = np.allclose(plane.normal, grid.plane.normal) and math.isclose(
            plane.offset, grid.plane.offset, abs_tol=1e-12
        )
        if not same:
            raise ReprojectionRequiredError("grid was built for a different plane")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return
    uv, heights = grid.plane_coords(pts)
    grid.ensure_cover(uv)
    cells = grid.cells_of(uv)
    rows, cols = cells[:, 0], cells[:, 1]

    in_band = (heights > config.floor_eps) & (heights <= config.agent_height)
    if np.any(in_band):
        np.add.at(grid.density_sum, (rows[in_band], cols[in_band]), 1.0)

    touched = np.unique(cells, axis=0)
    tr, tc = touched[:, 0], touched[:, 1]
    fresh = grid.last_frame[tr, tc] != frame_index
    grid.obs_frames[tr[fresh], tc[fresh]] += 1
    grid.last_frame[tr[fresh], tc[fresh]] = frame_index

    np.minimum.at(grid.min_height, (rows, cols), heights)
    grid.total_points += pts.shape[0]


def project_block(
    grid: NavGrid,
    frame_points: list[tuple[int, np.ndarray]],
    config: PipelineConfig,
) -> None:
    """Fuse a block's per-frame point chunks into the grid."""
    for frame_index, pts in frame_points:
        project_frame_points(grid, frame_index, pts, config)


def rebuild_labels(
    grid: NavGrid,
    fg_points: np.ndarray,
    fg_tracklets: np.ndarray,
    config: PipelineConfig,
) -> None:
    """Recompute the semantic label raster from the filtered foreground cloud.

    Majority tracklet id per cell, ties toward the lower id. Runs every block
    so removals and merges show up immediately.
    """
    grid.label[:] = 0
    if fg_points.shape[0] == 0:
        return
    uv, _ = grid.plane_coords(fg_points)
    grid.ensure_cover(uv)
    cells = grid.cells_of(uv)
    h, w = grid.shape
    flat = cells[:, 0] * w + cells[:, 1]
    order = np.lexsort((fg_tracklets, flat))
    flat_sorted = flat[order]
    tid_sorted = fg_tracklets[order]
    # Count (cell, tid) runs, then keep the best tid per cell.
    boundaries = np.nonzero(
        (np.diff(flat_sorted) != 0) | (np.diff(tid_sorted) != 0)
    )[0]
    starts = np.concatenate([[0], boundaries + 1])
    ends = np.concatenate([boundaries + 1, [flat_sorted.size]])
    best_count: dict[int, tuple[int, int]] = {}
    for s, e in zip(starts, ends):
        cell_key = int(flat_sorted[s])
        tid = int(tid_sorted[s])
        count = int(e - s)
        cur = best_count.get(cell_key)
        if cur is None or count > cur[0] or (count == cur[0] and tid < cur[1]):
            best_count[cell_key] = (count, tid)
    for cell_key, (_, tid) in best_count.items():
        grid.label[cell_key // w, cell_key % w] = tid


def reproject_all(
    old_grid: NavGrid,
    background: tuple[np.ndarray, np.ndarray],
    foreground: tuple[np.ndarray, np.ndarray, np.ndarray],
    new_plane: PlaneEstimate,
    config: PipelineConfig,
) -> NavGrid:
    """Fresh grid from all persisted points under a new reference plane.

    background is (points, frame_ids); foreground is (points, tracklet_ids,
    frame_ids). Per-frame grouping is replayed so the density denominator
    is rebuilt faithfully.
    """
    grid = NavGrid(plane=new_plane, cell=old_grid.cell)
    bg_pts, bg_frames = background
    fg_pts, fg_tids, fg_frames = foreground
    all_pts = np.vstack([bg_pts, fg_pts]) if fg_pts.shape[0] else bg_pts
    all_frames = (
        np.concatenate([bg_frames, fg_frames]) if fg_pts.shape[0] else bg_frames
    )
    for frame_index in np.unique(all_frames):
        sel = all_frames == frame_index
        project_frame_points(grid, int(frame_index), all_pts[sel], config)
    rebuild_labels(grid, fg_pts, fg_tids, config)
    return grid


def build_occupancy(grid: NavGrid, config: PipelineConfig) -> np.ndarray:
    """Classify every cell as Free, Obstacle or Unknown.

    Obstacle seeds come from the band-limited density mean, denoised with an
    area opening (connected components below speckle_min_cells are dropped;
    a structural disc opening would also erase one-cell-thick walls), then
    inflated by the agent radius. Known floor is a min-height test around
    the plane. Unknown floor stays non-traversable but is never inflated.
    """
    from .instances import disc_structure

    mean = grid.density_mean()
    seeds = mean >= config.density_threshold
    if seeds.any():
        labeled, count = ndimage.label(seeds, structure=EIGHT_CONNECTED)
        sizes = np.bincount(labeled.reshape(-1))
        drop = np.nonzero(sizes < config.speckle_min_cells)[0]
        seeds &= ~np.isin(labeled, drop[drop > 0])
    radius_cells = int(round(config.dilation_radius / grid.cell))
    if radius_cells > 0:
        obstacles = ndimage.binary_dilation(seeds, structure=disc_structure(radius_cells))
    else:
        obstacles = seeds
    known = np.isfinite(grid.min_height) & (np.abs(grid.min_height) <= config.floor_eps)

    occ = np.full(grid.shape, int(Occupancy.UNKNOWN), dtype=np.uint8)
    occ[known] = int(Occupancy.FREE)
    occ[obstacles] = int(Occupancy.OBSTACLE)
    grid.occupancy = occ
    return occ


def snap_to_free(
    grid: NavGrid, cell: tuple[int, int], radius_cells: int
) -> tuple[int, int] | None:
    """Nearest Free cell within the radius, or None."""
    h, w = grid.occupancy.shape
    r0, c0 = cell
    best = None
    best_d2 = None
    for dr in range(-radius_cells, radius_cells + 1):
        for dc in range(-radius_cells, radius_cells + 1):
            r, c = r0 + dr, c0 + dc
            if not (0 <= r < h and 0 <= c < w):
                continue
            if grid.occupancy[r, c] != Occupancy.FREE:
                continue
            d2 = dr * dr + dc * dc
            if d2 <= radius_cells * radius_cells and (best_d2 is None or d2 < best_d2):
                best = (r, c)
                best_d2 = d2
    return best


def select_goal(
    grid: NavGrid,
    registry: TrackletRegistry,
    target_class: int,
    user_cell: tuple[int, int],
    config: PipelineConfig,
) -> tuple[tuple[int, int], int] | None:
    """Pick the nearest sufficiently large instance of the target class.

    Label cells of non-Removed tracklets of the class are grouped into
    8-connected components; runt components are dropped; the component whose
    centroid is closest to the user wins and its centroid is snapped onto
    free space. Returns (goal_cell, tracklet_id) or None.
    """
    wanted = np.zeros(grid.shape, dtype=bool)
    ids = np.unique(grid.label)
    for tid in ids:
        if tid == 0:
            continue
        tracklet = registry.tracklets.get(registry.resolve(int(tid)))
        if tracklet is None or tracklet.state is ObjectState.REMOVED:
            continue
        if tracklet.class_id == target_class:
            wanted |= grid.label == tid
    if not wanted.any():
        return None

    labeled, count = ndimage.label(wanted, structure=EIGHT_CONNECTED)
    user = np.array(user_cell, dtype=np.float64)
    candidates = []
    for comp in range(1, count + 1):
        rows, cols = np.nonzero(labeled == comp)
        if rows.size < config.min_component_area:
            continue
        centroid = np.array([rows.mean(), cols.mean()])
        dist = float(np.linalg.norm(centroid - user))
        candidates.append((dist, comp, centroid, rows, cols))
    if not candidates:
        return None
    candidates.sort(key=lambda c: (c[0], c[1]))

    snap_cells = max(1, int(round(config.snap_radius / grid.cell)))
    for _, _, centroid, rows, cols in candidates:
        cell = (int(round(centroid[0])), int(round(centroid[1])))
        snapped = snap_to_free(grid, cell, snap_cells)
        if snapped is not None:
            i = int(np.argmin((rows - centroid[0]) ** 2 + (cols - centroid[1]) ** 2))
            tid = int(grid.label[rows[i], cols[i]])
            return snapped, registry.resolve(tid)
    return None


def frontier_explore(
    grid: NavGrid, user_cell: tuple[int, int]
) -> tuple[int, int] | None:
    """Frontier cell to explore next: biggest frontier, nearby as tie-break.

    Frontiers are Free cells 8-adjacent to Unknown. Components within 10% of
    the largest size compete on centroid distance to the user; the winner's
    member cell nearest the user is returned.
    """
    free = grid.occupancy == Occupancy.FREE
    unknown = grid.occupancy == Occupancy.UNKNOWN
    near_unknown = ndimage.binary_dilation(unknown, structure=EIGHT_CONNECTED.astype(bool))
    frontier = free & near_unknown
    if not frontier.any():
        return None
    labeled, count = ndimage.label(frontier, structure=EIGHT_CONNECTED)
    comps = []
    user = np.array(user_cell, dtype=np.float64)
    for comp in range(1, count + 1):
        rows, cols = np.nonzero(labeled == comp)
        centroid = np.array([rows.mean(), cols.mean()])
        comps.append((rows.size, float(np.linalg.norm(centroid - user)), rows, cols))
    largest = max(c[0] for c in comps)
    in_band = [c for c in comps if c[0] >= 0.9 * largest]
    in_band.sort(key=lambda c: (c[1], -c[0]))
    _, _, rows, cols = in_band[0]
    d2 = (rows - user[0]) ** 2 + (cols - user[1]) ** 2
    i = int(np.argmin(d2))
    return int(rows[i]), int(cols[i])


_NEIGHBORS = [
    (-1, 0, False), (1, 0, False), (0, -1, False), (0, 1, False),
    (-1, -1, True), (-1, 1, True), (1, -1, True), (1, 1, True),
]


def plan_path(
    grid: NavGrid,
    start_cell: tuple[int, int],
    goal_cell: tuple[int, int],
    config: PipelineConfig,
    goal_tracklet: int | None = None,
) -> NavPlan:
    """Optimal 8-connected path over Free cells (diagonal cost sqrt(2)).

    A* with an octile heuristic; path costs are tracked as exact
    (straight, diagonal) step counts so optimality checks are exact.
    """
    h, w = grid.occupancy.shape

    def free(cell):
        r, c = cell
        return 0 <= r < h and 0 <= c < w and grid.occupancy[r, c] == Occupancy.FREE

    snap_cells = max(1, int(round(config.snap_radius / grid.cell)))
    if not free(start_cell):
        snapped = snap_to_free(grid, start_cell, snap_cells)
        if snapped is None:
            raise InvalidStartError(f"start cell {start_cell} not traversable")
        start_cell = snapped
    if not free(goal_cell):
        return NavPlan(goal_cell=goal_cell, goal_tracklet=goal_tracklet,
                       waypoints=[], status="NoGoal")
    if start_cell == goal_cell:
        return NavPlan(goal_cell=goal_cell, goal_tracklet=goal_tracklet,
                       waypoints=[start_cell], status="Reached")

    def heuristic(cell):
        dr = abs(cell[0] - goal_cell[0])
        dc = abs(cell[1] - goal_cell[1])
        return (dr + dc) + (SQRT2 - 2.0) * min(dr, dc)

    # g-scores as (straight, diagonal) integer counts; priority uses floats.
    g: dict[tuple[int, int], tuple[int, int]] = {start_cell: (0, 0)}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    counter = 0
    open_heap = [(heuristic(start_cell), counter, start_cell)]
    closed: set[tuple[int, int]] = set()

    while open_heap:
        _, _, cell = heapq.heappop(open_heap)
        if cell in closed:
            continue
        if cell == goal_cell:
            break
        closed.add(cell)
        gs, gd = g[cell]
        for dr, dc, diag in _NEIGHBORS:
            nxt = (cell[0] + dr, cell[1] + dc)
            if nxt in closed or not free(nxt):
                continue
            cand = (gs, gd + 1) if diag else (gs + 1, gd)
            cand_cost = cand[0] + cand[1] * SQRT2
            known = g.get(nxt)
            if known is None or cand_cost < known[0] + known[1] * SQRT2 - 1e-12:
                g[nxt] = cand
                parent[nxt] = cell
                counter += 1
                heapq.heappush(open_heap, (cand_cost + heuristic(nxt), counter, nxt))
    if goal_cell not in g:
        return NavPlan(goal_cell=goal_cell, goal_tracklet=goal_tracklet,
                       waypoints=[], status="NoGoal")

    waypoints = [goal_cell]
    while waypoints[-1] != start_cell:
        waypoints.append(parent[waypoints[-1]])
    waypoints.reverse()
    gs, gd = g[goal_cell]
    return NavPlan(
        goal_cell=goal_cell,
        goal_tracklet=goal_tracklet,
        waypoints=waypoints,
        status="Planned",
        straight_steps=gs,
        diagonal_steps=gd,
    )


def export_layer(grid: NavGrid, layer: str) -> str:
    """Text dump of one raster layer: header line then row-major values."""
    layers = {
        "occupancy": grid.occupancy,
        "label": grid.label,
        "density": grid.density_mean(),
        "obs_frames": grid.obs_frames,
        "min_height": grid.min_height,
    }
    if layer not in layers:
        raise InvalidInputError(f"unknown layer {layer!r}")
    arr = layers[layer]
    h, w = arr.shape
    lines = [f"{layer} {w} {h}"]
    for row in arr:
        if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.uint8:
            lines.append(" ".join(str(int(x)) for x in row))
        else:
            lines.append(" ".join("inf" if np.isinf(x) else f"{x:.6f}" for x in row))
    return "\n".join(lines) + "\n"
