"""Naive reference implementations used to cross-check the fast paths.

Each oracle is deliberately the obvious O(big) formulation of its paired
production operation, sharing nothing with it beyond the problem statement.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

SQRT2 = math.sqrt(2.0)


def golden_section_scale(pred: np.ndarray, sensor: np.ndarray,
                         lo: float = 0.01, hi: float = 100.0,
                         tol: float = 1e-9) -> float:
    """1-D minimization of sum((s*pred - sensor)^2) by golden-section search."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    s = np.asarray(sensor, dtype=np.float64).reshape(-1)

    def cost(scale):
        r = scale * p - s
        return float(np.dot(r, r))

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - (b - a) * invphi
    d = a + (b - a) * invphi
    fc, fd = cost(c), cost(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - (b - a) * invphi
            fc = cost(c)
        else:
            a, c, fc = c, d, fd
            d = a + (b - a) * invphi
            fd = cost(d)
    return (a + b) / 2.0


def chordal_mean_rotation(rotations: list[np.ndarray]) -> np.ndarray:
    """argmin_R sum ||R - R_i||_F^2 by SVD projection of the matrix mean."""
    m = np.zeros((3, 3))
    for r in rotations:
        m += np.asarray(r, dtype=np.float64)
    m /= len(rotations)
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def exhaustive_nearest_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each point of a, distance to its nearest point of b; O(|a||b|)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2)).min(axis=1)


def exhaustive_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Min of the two directed mean nearest-neighbor distances, exhaustively."""
    d_ab = float(exhaustive_nearest_distances(a, b).mean())
    d_ba = float(exhaustive_nearest_distances(b, a).mean())
    return min(d_ab, d_ba)


def dijkstra_cost(free: np.ndarray, start: tuple[int, int],
                  goal: tuple[int, int]) -> float | None:
    """Shortest 8-connected path cost over free cells, or None if unreachable.

    Costs are tracked as (straight, diagonal) integer counts so the returned
    float is bit-identical to any other planner using the same bookkeeping.
    """
    h, w = free.shape
    if not (free[start] and free[goal]):
        return None
    dist: dict[tuple[int, int], tuple[int, int]] = {start: (0, 0)}
    heap = [(0.0, start)]
    done = set()
    while heap:
        cost, cell = heapq.heappop(heap)
        if cell in done:
            continue
        done.add(cell)
        if cell == goal:
            s, d = dist[cell]
            return s + d * SQRT2
        s, d = dist[cell]
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                nxt = (cell[0] + dr, cell[1] + dc)
                if not (0 <= nxt[0] < h and 0 <= nxt[1] < w) or not free[nxt]:
                    continue
                diag = dr != 0 and dc != 0
                cand = (s, d + 1) if diag else (s + 1, d)
                cand_cost = cand[0] + cand[1] * SQRT2
                known = dist.get(nxt)
                if known is None or cand_cost < known[0] + known[1] * SQRT2 - 1e-12:
                    dist[nxt] = cand
                    heapq.heappush(heap, (cand_cost, nxt))
    return None
