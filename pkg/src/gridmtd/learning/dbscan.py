"""Density-based clustering (DBSCAN) and a k-distance elbow rule for its radius."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .. import _kernels

NOISE = -1


@dataclass(frozen=True)
class ClusterLabeling:
    labels: np.ndarray
    cluster_count: int
    core: np.ndarray  # boolean mask of core points

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> ClusterLabeling:
    """Label points by density reachability; noise is -1.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``.  Clusters are numbered in order of their lowest-index core
    point.  A border point reachable from several clusters joins the cluster of
    its lowest-index core neighbour.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be at least 1")
    x = np.ascontiguousarray(points, dtype=float)
    n = x.shape[0]
    if n == 0:
        return ClusterLabeling(np.zeros(0, dtype=int), 0, np.zeros(0, dtype=bool))
    indptr, indices = _kernels.eps_graph(x, float(eps))
    core = np.diff(indptr) >= min_pts
    labels = np.full(n, NOISE, dtype=int)
    count = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != NOISE:
            continue
        labels[seed] = count
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            for j in indices[indptr[i] : indptr[i + 1]]:
                if core[j] and labels[j] == NOISE:
                    labels[j] = count
                    queue.append(j)
        count += 1
    for i in np.flatnonzero(~core):
        nbrs = indices[indptr[i] : indptr[i + 1]]
        core_nbrs = nbrs[core[nbrs]]
        if core_nbrs.size:
            labels[i] = labels[core_nbrs.min()]
    return ClusterLabeling(labels, count, core)


def kth_neighbor_distances(points: np.ndarray, k: int) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if k < 1:
        raise ValueError("k must be at least 1")
    if x.shape[0] < k + 1:
        raise ValueError(f"need at least {k + 1} points for k={k}")
    d = np.sqrt(_kernels.sq_distances(x))
    np.fill_diagonal(d, np.inf)
    return np.partition(d, k - 1, axis=1)[:, k - 1]


def estimate_eps(points: np.ndarray, k: int) -> float:
    """Radius at the elbow of the ascending k-th nearest-neighbour distance curve.

    The elbow is the point farthest below the chord joining the curve's ends
    after both axes are scaled to [0, 1].
    """
    curve = np.sort(kth_neighbor_distances(points, k))
    lo, hi = curve[0], curve[-1]
    if hi - lo <= 1e-12 * max(hi, 1e-300):
        value = hi
    else:
        xs = np.linspace(0.0, 1.0, curve.size)
        ys = (curve - lo) / (hi - lo)
        value = curve[int(np.argmax(xs - ys))]
    if value > 0:
        return float(value)
    positive = curve[curve > 0]
    return float(positive[0]) if positive.size else float(np.finfo(float).eps)
