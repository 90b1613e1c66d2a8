"""k-means over uninspected surface points and the guidance unit vector."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from proxrl.errors import DomainError

MAX_ITER = 50
MAX_CLUSTERS = 6
POINTS_PER_CLUSTER = 10


@dataclass(frozen=True)
class ClusterResult:
    centers: np.ndarray  # (k, 3)
    assignment: np.ndarray  # (m,) index into centers
    iterations: int


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = len(points)
    chosen = [int(rng.integers(m))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # remaining points coincide with chosen centers
            remaining = np.setdiff1d(np.arange(m), chosen)
            nxt = int(remaining[0])
        else:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, m - 1)
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return points[chosen].copy()


def kmeans(points, k: int, seed: int) -> ClusterResult:
    """Lloyd iteration from k-means++ seeding; deterministic in (points, k, seed)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise DomainError("kmeans needs a non-empty (m, d) point array")
    if not 1 <= k <= len(pts):
        raise DomainError(f"k must be in [1, {len(pts)}], got {k}")
    rng = np.random.default_rng(seed)
    centers = _plusplus_init(pts, k, rng)
    assignment = np.argmin(_sq_dists(pts, centers), axis=1)
    it = 0
    for it in range(1, MAX_ITER + 1):
        counts = np.bincount(assignment, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assignment, pts)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        new_assignment = np.argmin(_sq_dists(pts, centers), axis=1)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
    return ClusterResult(centers=centers, assignment=assignment, iterations=it)


def cluster_count(n_uninspected: int) -> int:
    return min(math.ceil(n_uninspected / POINTS_PER_CLUSTER), MAX_CLUSTERS)


def uninspected_clusters(surface_points: np.ndarray, inspected: np.ndarray, seed: int) -> np.ndarray | None:
    """Cluster centers of the uninspected surface points, or None if none remain."""
    remaining = surface_points[~inspected]
    if len(remaining) == 0:
        return None
    return kmeans(remaining, cluster_count(len(remaining)), seed).centers


def nearest_center_direction(centers: np.ndarray | None, deputy_pos) -> np.ndarray:
    if centers is None:
        return np.zeros(3)
    d = np.asarray(deputy_pos, dtype=float)
    offsets = centers - d
    dist2 = np.einsum("ij,ij->i", offsets, offsets)
    v = offsets[int(np.argmin(dist2))]
    return v / math.sqrt(float(v @ v))


def guidance_vector(model, inspected, deputy_pos, seed: int) -> np.ndarray:
    """Unit vector from the deputy toward the nearest uninspected cluster; zeros when all are inspected."""
    centers = uninspected_clusters(model.surface, np.asarray(inspected, dtype=bool), seed)
    return nearest_center_direction(centers, deputy_pos)
