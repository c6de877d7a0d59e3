"""Clustering and line fitting shared by the lane detectors."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

NOISE = -1


class VerticalLineError(ValueError):
    """All x values are equal, so y = m*x + b has no finite slope."""


@dataclass
class ClusterResult:
    labels: np.ndarray
    centroids: np.ndarray
    reduced: bool = False
    n_iter: int = 0
    sse_history: list[float] = field(default_factory=list)
    core: np.ndarray | None = None

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


@dataclass(frozen=True)
class LineFit:
    m: float
    b: float
    n: int

    def y_at(self, x: float) -> float:
        return self.m * x + self.b


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def _sse(pts: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(((pts - centroids[labels]) ** 2).sum())


def kmeans(points, k: int, init=None, max_iter: int = 50) -> ClusterResult:
    """Lloyd's algorithm.

    ``points`` is a sequence of scalars or of (x, y) pairs. Distance ties go to
    the lower centroid index. A cluster that loses all members keeps its
    previous centroid. When ``k`` exceeds the number of distinct points the
    result uses that smaller count and ``reduced`` is set.
    """
    pts = _as_points(points)
    if len(pts) == 0:
        raise ValueError("kmeans needs at least one point")
    if k < 1:
        raise ValueError("k must be >= 1")
    scalar = np.asarray(points).ndim == 1
    distinct = np.unique(pts, axis=0)
    reduced = False
    if k > len(distinct):
        warnings.warn(f"k={k} exceeds {len(distinct)} distinct points; reducing k")
        k = len(distinct)
        reduced = True
        init = None
    if init is None:
        # spread seeds over the sorted distinct values
        picks = np.linspace(0, len(distinct) - 1, k).round().astype(int)
        centroids = distinct[picks].copy()
    else:
        centroids = _as_points(init)[:k].astype(np.float64).copy()
        if len(centroids) != k:
            raise ValueError("need one seed per cluster")

    labels = np.full(len(pts), -1, dtype=np.int64)
    history: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = d2.argmin(axis=1)  # argmin returns the first (lowest) index on ties
        if it > 1:
            history.append(_sse(pts, new, centroids))
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            sel = labels == j
            if sel.any():
                centroids[j] = pts[sel].mean(axis=0)
        history.append(_sse(pts, labels, centroids))
    if scalar:
        centroids = centroids[:, 0]
    return ClusterResult(labels=labels, centroids=centroids, reduced=reduced,
                         n_iter=it, sse_history=history)


def dbscan(points, eps: float, min_points: int) -> ClusterResult:
    """Density clustering with a brute-force Euclidean neighbour search.

    A point is core when at least ``min_points`` points (itself included) lie
    within ``eps``. Clusters are grown in input order; a border point belongs
    to the first cluster that reaches it.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_points < 1:
        raise ValueError("min_points must be >= 1")
    pts = _as_points(points)
    n = len(pts)
    if n == 0:
        return ClusterResult(labels=np.empty(0, dtype=np.int64),
                             centroids=np.empty((0, 2)), core=np.empty(0, dtype=bool))
    diff = pts[:, None, :] - pts[None, :, :]
    adj = (diff * diff).sum(axis=2) <= eps * eps
    core = adj.sum(axis=1) >= min_points

    labels, cluster = _kernels.dbscan_expand(adj, core)
    centroids = np.array([pts[labels == c].mean(axis=0) for c in range(cluster)]).reshape(-1, pts.shape[1])
    return ClusterResult(labels=labels, centroids=centroids, core=core)


def fit_least_squares(points) -> LineFit:
    """Ordinary least squares for y = m*x + b from the normal-equation sums."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n < 2:
        raise ValueError("need at least two points")
    x, y = pts[:, 0], pts[:, 1]
    sx, sy = math.fsum(x), math.fsum(y)
    sxx, sxy = math.fsum(x * x), math.fsum(x * y)
    denom = n * sxx - sx * sx
    if np.all(x == x[0]) or denom == 0.0:
        raise VerticalLineError("all x values are equal")
    m = (n * sxy - sx * sy) / denom
    b = (sy - m * sx) / n
    return LineFit(m=m, b=b, n=n)
