"""Ground planes: height-field representation z = a x + b y + c, point-plane
distance, least-squares fitting from foot positions, and 1-D floor clustering
for scenes with people on multiple levels."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

MAX_SLOPE = 1.0            # reject near-vertical fits at init
DEFAULT_SPREAD = 0.5       # meters; max in-cluster foot-height spread


@dataclass
class GroundPlane:
    """Plane z = a x + b y + c (slopes unitless, c meters)."""

    coeffs: np.ndarray  # (3,) = (a, b, c)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("non-finite plane coefficients")

    @classmethod
    def horizontal(cls, z: float = 0.0) -> "GroundPlane":
        return cls(np.array([0.0, 0.0, float(z)]))


def point_plane_distance(p: np.ndarray, g: GroundPlane) -> np.ndarray:
    """Signed distance (meters) of points (..., 3); positive above the plane."""
    p = np.asarray(p, dtype=np.float64)
    a, b, c = g.coeffs
    num = p[..., 2] - a * p[..., 0] - b * p[..., 1] - c
    return num / np.sqrt(1.0 + a * a + b * b)


def point_plane_distance_grad(p: np.ndarray, g: GroundPlane):
    """d(distance)/dp (..., 3) and d(distance)/dcoeffs (..., 3)."""
    p = np.asarray(p, dtype=np.float64)
    a, b, c = g.coeffs
    norm = np.sqrt(1.0 + a * a + b * b)
    num = p[..., 2] - a * p[..., 0] - b * p[..., 1] - c
    dp = np.broadcast_to(np.array([-a, -b, 1.0]) / norm, p.shape).copy()
    # quotient rule for the plane coefficients
    dnum = np.stack([-p[..., 0], -p[..., 1], -np.ones_like(num)], axis=-1)
    dnorm = np.array([a / norm, b / norm, 0.0])
    dg = dnum / norm - (num / norm**2)[..., None] * dnorm
    return dp, dg


def fit_ground(points: np.ndarray) -> GroundPlane:
    """Least-squares plane through world points (N, 3).

    Falls back to a horizontal plane at the median height (with a warning)
    for degenerate or near-vertical configurations.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] < 3:
        raise ValueError("plane fit needs at least 3 points")
    design = np.column_stack([points[:, 0], points[:, 1], np.ones(points.shape[0])])
    sv = np.linalg.svd(design - design.mean(axis=0) * [1, 1, 0], compute_uv=False)
    if sv[2] < 1e-9 * max(sv[0], 1.0):
        warnings.warn("degenerate foot configuration; using horizontal plane at median height")
        return GroundPlane.horizontal(float(np.median(points[:, 2])))
    coeffs, *_ = np.linalg.lstsq(design, points[:, 2], rcond=None)
    if max(abs(coeffs[0]), abs(coeffs[1])) >= MAX_SLOPE:
        warnings.warn("near-vertical plane fit rejected; using horizontal plane at median height")
        return GroundPlane.horizontal(float(np.median(points[:, 2])))
    return GroundPlane(coeffs)


@dataclass
class FloorAssignment:
    """Cluster id per person plus one plane per cluster."""

    labels: np.ndarray                 # (N,) int cluster ids, 0..K-1
    planes: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= len(self.planes)):
            raise ValueError("every person must map to a valid cluster")

    @property
    def n_clusters(self) -> int:
        return len(self.planes)


def _best_partition(sorted_heights: np.ndarray, k: int):
    """Contiguous partition of sorted values into k groups minimizing the
    maximum in-group spread. Returns (max_spread, boundaries)."""
    n = len(sorted_heights)
    if k >= n:
        return 0.0, list(range(1, n))
    # DP over prefix lengths; tiny n so no need for anything clever
    inf = float("inf")
    cost = np.full((k + 1, n + 1), inf)
    back = np.zeros((k + 1, n + 1), dtype=int)
    cost[0, 0] = 0.0
    for g in range(1, k + 1):
        for j in range(g, n + 1):
            for i in range(g - 1, j):
                spread = sorted_heights[j - 1] - sorted_heights[i]
                val = max(cost[g - 1, i], spread)
                if val < cost[g, j]:
                    cost[g, j] = val
                    back[g, j] = i
    bounds = []
    j = n
    for g in range(k, 0, -1):
        bounds.append(back[g, j])
        j = back[g, j]
    bounds = sorted(bounds)[1:]  # drop the leading 0
    return float(cost[k, n]), bounds


def cluster_floors(median_foot_heights: np.ndarray, max_clusters: int = 3,
                   max_spread: float = DEFAULT_SPREAD) -> FloorAssignment:
    """1-D clustering of per-person foot heights.

    K is the smallest cluster count whose worst in-cluster spread stays
    below max_spread, capped at max_clusters. Initial planes are horizontal
    at each cluster's median height; callers refit from member feet.
    """
    heights = np.asarray(median_foot_heights, dtype=np.float64).reshape(-1)
    n = heights.size
    if n == 0:
        raise ValueError("need at least one person")
    order = np.argsort(heights, kind="stable")
    sorted_h = heights[order]

    chosen_bounds = None
    for k in range(1, min(max_clusters, n) + 1):
        spread, bounds = _best_partition(sorted_h, k)
        if spread < max_spread or k == min(max_clusters, n):
            chosen_bounds = bounds
            break

    labels = np.zeros(n, dtype=np.int64)
    edges = [0] + list(chosen_bounds) + [n]
    planes = []
    for ci in range(len(edges) - 1):
        members = order[edges[ci] : edges[ci + 1]]
        labels[members] = ci
        planes.append(GroundPlane.horizontal(float(np.median(heights[members]))))
    return FloorAssignment(labels=labels, planes=planes)
