"""Axis-aligned 3D box algebra and point-cloud spatial kernels.

Boxes are stored as center + full edge lengths (matching the detector's
output layout) and converted to min/max corners for overlap tests. All
spatial searches are brute force; the point counts used here never need an
acceleration structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box: center (3,) and full extents (3,), meters."""

    center: tuple[float, float, float]
    lengths: tuple[float, float, float]

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        r = np.asarray(self.lengths, dtype=np.float64)
        if c.shape != (3,) or r.shape != (3,):
            raise ValueError("Aabb requires 3-vector center and lengths")
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(r)):
            raise ValueError("Aabb requires finite center and lengths")
        if not np.all(r > 0):
            raise ValueError(f"Aabb lengths must be positive, got {tuple(r)}")
        object.__setattr__(self, "center", tuple(float(x) for x in c))
        object.__setattr__(self, "lengths", tuple(float(x) for x in r))

    @property
    def volume(self) -> float:
        rx, ry, rz = self.lengths
        return rx * ry * rz

    def corners(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        half = np.asarray(self.lengths) / 2.0
        return c - half, c + half

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Closed-box membership test for an (N, 3) array."""
        lo, hi = self.corners()
        pts = np.asarray(points)
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.center + self.lengths, dtype=np.float64)


def iou3d(a: Aabb, b: Aabb) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    a_lo, a_hi = a.corners()
    b_lo, b_hi = b.corners()
    overlap = np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo)
    if np.any(overlap <= 0):
        return 0.0
    inter = float(np.prod(overlap))
    union = a.volume + b.volume - inter
    return inter / union


def boxes_to_array(boxes: list[Aabb]) -> np.ndarray:
    """(N, 6) array of [center | lengths] rows."""
    if not boxes:
        return np.zeros((0, 6), dtype=np.float64)
    return np.stack([b.as_array() for b in boxes])


def iou3d_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (N, 6) and (M, 6) center+lengths arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 6)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 6)
    a_lo = a[:, :3] - a[:, 3:] / 2.0
    a_hi = a[:, :3] + a[:, 3:] / 2.0
    b_lo = b[:, :3] - b[:, 3:] / 2.0
    b_hi = b[:, :3] + b[:, 3:] / 2.0
    overlap = np.minimum(a_hi[:, None, :], b_hi[None, :, :]) - np.maximum(a_lo[:, None, :], b_lo[None, :, :])
    overlap = np.clip(overlap, 0.0, None)
    inter = overlap.prod(axis=-1)
    vol_a = a[:, 3:].prod(axis=-1)
    vol_b = b[:, 3:].prod(axis=-1)
    union = vol_a[:, None] + vol_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    return iou


def nms(boxes: list[Aabb], scores, iou_threshold: float = 0.25) -> list[int]:
    """Greedy class-agnostic suppression; returns kept indices by score.

    Survivors come out sorted by descending score; ties keep the lower
    index first.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(boxes) != scores.shape[0]:
        raise ValueError("boxes and scores length mismatch")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if not boxes:
        return []
    order = np.argsort(-scores, kind="stable")
    arr = boxes_to_array(boxes)
    iou = iou3d_matrix(arr, arr)
    kept: list[int] = []
    suppressed = np.zeros(len(boxes), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        kept.append(int(i))
        suppressed |= iou[i] >= iou_threshold
    return kept


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(M, N) squared Euclidean distances via the quadratic expansion.

    Follows the wider input float type, so float32 clouds stay on the fast
    single-precision path.
    """
    dt = np.result_type(np.asarray(a).dtype, np.asarray(b).dtype, np.float32)
    a = np.ascontiguousarray(a, dtype=dt)
    b = np.ascontiguousarray(b, dtype=dt)
    d2 = a @ b.T
    d2 *= -2.0
    d2 += np.einsum("ij,ij->i", a, a)[:, None]
    d2 += np.einsum("ij,ij->i", b, b)[None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


def farthest_point_sample(points: np.ndarray, k: int, rng: np.random.Generator,
                          start_index: int | None = None) -> np.ndarray:
    """Greedy max-min subset of ``k`` point indices.

    The first index is drawn from ``rng`` (or forced by ``start_index``);
    each following pick maximizes the minimum distance to the chosen set,
    breaking ties by lowest index.
    """
    dt = np.result_type(np.asarray(points).dtype, np.float32)
    pts = np.ascontiguousarray(points, dtype=dt)
    n = pts.shape[0]
    if k > n:
        raise ValueError(f"cannot sample {k} from {n} points")
    if k <= 0:
        raise ValueError("k must be positive")
    first = int(rng.integers(n)) if start_index is None else int(start_index)
    norms = np.einsum("ij,ij->i", pts, pts)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = first
    min_d2 = norms + norms[first] - 2.0 * (pts @ pts[first])
    for i in range(1, k):
        nxt = int(np.argmax(min_d2))  # argmax takes the lowest index on ties
        chosen[i] = nxt
        d2 = norms + norms[nxt] - 2.0 * (pts @ pts[nxt])
        np.minimum(min_d2, d2, out=min_d2)
    return chosen


def ball_query(points: np.ndarray, centers: np.ndarray, radius: float,
               max_k: int) -> np.ndarray:
    """Group point indices within ``radius`` of each center.

    Returns an (M, max_k) index array. Members are kept in ascending index
    order and truncated to ``max_k``; short groups are padded by repeating
    their first member. A center with no point in range falls back to its
    single nearest point so pooling never sees an empty group.
    """
    pts = np.asarray(points)
    ctr = np.asarray(centers).reshape(-1, pts.shape[1])
    n = pts.shape[0]
    if n == 0:
        raise ValueError("ball_query on empty point set")
    if radius <= 0 or max_k < 1:
        raise ValueError("ball_query requires radius > 0 and max_k >= 1")
    d2 = squared_distances(ctr, pts)
    # Out-of-range slots get the sentinel index n; the max_k smallest
    # values per row are then exactly the lowest in-range indices.
    idx = np.where(d2 <= radius * radius, np.arange(n, dtype=np.int32)[None, :],
                   np.int32(n))
    k = min(max_k, n)
    if k < n:
        idx = np.partition(idx, k - 1, axis=1)[:, :k]
    idx = np.sort(idx, axis=1)[:, :max_k]
    if idx.shape[1] < max_k:
        pad = np.full((idx.shape[0], max_k - idx.shape[1]), n, dtype=idx.dtype)
        idx = np.concatenate([idx, pad], axis=1)
    empty = idx[:, 0] == n
    if empty.any():
        idx[empty, 0] = d2[empty].argmin(axis=1)
    groups = np.where(idx == n, idx[:, :1], idx)
    return groups.astype(np.int64)
