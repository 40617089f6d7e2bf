"""Point cloud containers and sampling operators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PointCloud:
    """An unordered set of 3D points.

    Parameters
    ----------
    points : ndarray, shape (N, 3)
        Finite coordinates, N >= 1.
    canonical : bool
        True when points are expressed in an object's canonical (rest) frame
        rather than the world frame.
    """

    points: np.ndarray
    canonical: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"points must have shape (N, 3) with N >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def fps(points, k: int, seed_index: int = 0) -> np.ndarray:
    """Farthest point sampling.

    Greedy max-min selection: start from ``seed_index``, then repeatedly take
    the point with the largest distance to the selected set.  Ties resolve to
    the lowest index (numpy argmax).  Deterministic given inputs.

    Parameters
    ----------
    points : ndarray, shape (N, 3)
    k : int
        Number of samples, 1 <= k <= N.
    seed_index : int
        Index of the first selected point.

    Returns
    -------
    ndarray of int, shape (k,)
        Selected indices, in selection order.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index out of range: {seed_index}")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = seed_index
    dist = np.linalg.norm(pts - pts[seed_index], axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return chosen


def ball_query(center, points, radius: float, max_neighbors: int) -> np.ndarray:
    """Indices of points within ``radius`` of ``center``.

    Sorted ascending by distance with index as tie-break, truncated to
    ``max_neighbors``.  May return fewer (or zero) indices.

    Parameters
    ----------
    center : ndarray, shape (3,)
    points : ndarray, shape (N, 3)
    radius : float
        Inclusive search radius, > 0.
    max_neighbors : int
        Cap on the number of returned indices, >= 1.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    if max_neighbors < 1:
        raise ValueError("max_neighbors must be >= 1")
    pts = np.asarray(points, dtype=float)
    c = np.asarray(center, dtype=float).reshape(3)
    dist = np.linalg.norm(pts - c, axis=1)
    inside = np.flatnonzero(dist <= radius)
    # stable sort keeps index order among equal distances
    order = np.argsort(dist[inside], kind="stable")
    return inside[order][:max_neighbors]
