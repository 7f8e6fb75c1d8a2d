"""Evaluation measures: trajectory error, cloud quality, identity consistency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError
from .geometry import RigidPose


@dataclass
class TrajectoryPair:
    """Estimated and reference trajectories over the same frame indices."""

    estimated: list[tuple[int, RigidPose]]
    reference: list[tuple[int, RigidPose]]

    def __post_init__(self):
        if [i for i, _ in self.estimated] != [i for i, _ in self.reference]:
            raise InvalidInputError("trajectory index sets differ")

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        est = np.stack([p.translation for _, p in self.estimated])
        ref = np.stack([p.translation for _, p in self.reference])
        return est, ref


def rigid_align(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form least-squares rigid (R, t) with R @ source + t ~= target."""
    sc = source.mean(axis=0)
    tc = target.mean(axis=0)
    h = (source - sc).T @ (target - tc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = tc - r @ sc
    return r, t


def ate_rmse(pair: TrajectoryPair, align_mode: str = "none") -> float:
    """RMSE of per-frame translation error, optionally after rigid alignment."""
    est, ref = pair.centers()
    if est.shape[0] < 2:
        raise InvalidInputError("need at least 2 poses")
    if align_mode == "rigid":
        r, t = rigid_align(est, ref)
        est = est @ r.T + t
    elif align_mode != "none":
        raise InvalidInputError(f"unknown align mode {align_mode!r}")
    err = est - ref
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def cloud_accuracy_completeness(
    pred: np.ndarray, gt: np.ndarray
) -> tuple[float, float, float, float]:
    """(acc_mean, acc_median, compl_mean, compl_median) nearest-neighbor stats.

    Accuracy measures predicted points against ground truth; completeness the
    reverse direction.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if pred.shape[0] == 0 or gt.shape[0] == 0:
        raise InvalidInputError("clouds must be non-empty")
    d_pred = cKDTree(gt).query(pred)[0]
    d_gt = cKDTree(pred).query(gt)[0]
    return (
        float(np.mean(d_pred)),
        float(np.median(d_pred)),
        float(np.mean(d_gt)),
        float(np.median(d_gt)),
    )


@dataclass
class IdTimeline:
    """Per ground-truth object: (frame, predicted id) with 0 = unassigned."""

    per_object: dict[int, list[tuple[int, int]]]

    def __post_init__(self):
        for gt_id, rows in self.per_object.items():
            frames = [f for f, _ in rows]
            if any(b <= a for a, b in zip(frames, frames[1:])):
                raise InvalidInputError(f"object {gt_id}: frames not increasing")


def _dominant(predictions: list[int]) -> int:
    counts: dict[int, int] = {}
    for p in predictions:
        counts[p] = counts.get(p, 0) + 1
    return min(counts, key=lambda p: (-counts[p], p))


def id_consistency(timeline: IdTimeline, count_midblock: bool) -> float:
    """Mean dominance ratio over ground-truth objects, in percent.

    For each object, the most frequent non-zero predicted id is dominant.
    Without mid-block counting the share is over frames with a non-zero
    prediction; with it, zeros stay in the denominator. Objects that were
    never assigned any id are skipped in the first variant and score 0 in
    the second.
    """
    shares = []
    for _, rows in sorted(timeline.per_object.items()):
        preds = [p for _, p in rows]
        nonzero = [p for p in preds if p != 0]
        if not nonzero:
            if count_midblock:
                shares.append(0.0)
            continue
        dom = _dominant(nonzero)
        hits = sum(1 for p in nonzero if p == dom)
        denom = len(preds) if count_midblock else len(nonzero)
        shares.append(hits / denom)
    if not shares:
        return 0.0
    return float(np.mean(shares) * 100.0)
