"""Seed boxes from clusters of dynamic points."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import OrientedBox
from .persistence import DYNAMIC, ScenePointSet, classify_points
from .reward import RewardConfig, score_boxes

__all__ = ["SeedConfig", "dbscan", "convex_hull_2d", "min_area_rect", "fit_box", "generate_seeds"]

FALLBACK_MIN_SIZE = 0.2


@dataclass
class SeedConfig:
    eps: float = 0.5
    min_pts: int = 5
    ground_margin: float = 0.1

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")


def dbscan(points, eps: float, min_pts: int) -> tuple[list[list[int]], list[int]]:
    """Density-based clustering on 3D Euclidean distance.

    Clusters are grown in index order of their first core point; a border
    point joins the first cluster that reaches it. A point's neighborhood
    includes the point itself.

    Returns
    -------
    clusters : list of sorted index lists
    noise : sorted list of indices that belong to no cluster
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return [], []
    neighbors = cKDTree(pts).query_ball_point(pts, r=eps)
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    assigned = np.full(n, -1, dtype=np.int64)
    clusters: list[list[int]] = []
    for i in range(n):
        if assigned[i] >= 0 or not core[i]:
            continue
        cid = len(clusters)
        members = [i]
        assigned[i] = cid
        queue = deque([i])
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for k in sorted(neighbors[j]):
                if assigned[k] < 0:
                    assigned[k] = cid
                    members.append(k)
                    queue.append(k)
        clusters.append(sorted(members))
    noise = [int(i) for i in np.flatnonzero(assigned < 0)]
    return clusters, noise


def convex_hull_2d(xy) -> np.ndarray:
    """Counter-clockwise hull vertices (monotone chain), collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(xy, dtype=np.float64).reshape(-1, 2))))
    if len(pts) <= 2:
        return np.array(pts, dtype=np.float64).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def min_area_rect(xy) -> tuple[float, float, float, float, float]:
    """Minimum-area enclosing rectangle via rotating calipers over hull edges.

    Returns (cx, cy, length, width, yaw) with length >= width and yaw of the
    length axis wrapped to [-pi/2, pi/2).
    """
    hull = convex_hull_2d(xy)
    if len(hull) < 3:
        raise ValueError("degenerate point set: fewer than 3 non-collinear points")
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.arctan2(edges[:, 1], edges[:, 0])
    best = None
    for theta in angles:
        c, s = math.cos(theta), math.sin(theta)
        u = hull[:, 0] * c + hull[:, 1] * s
        v = -hull[:, 0] * s + hull[:, 1] * c
        du, dv = u.max() - u.min(), v.max() - v.min()
        area = du * dv
        if best is None or area < best[0] - 1e-12:
            best = (area, theta, u.min(), u.max(), v.min(), v.max())
    _, theta, u0, u1, v0, v1 = best
    cu, cv = (u0 + u1) / 2.0, (v0 + v1) / 2.0
    c, s = math.cos(theta), math.sin(theta)
    cx, cy = cu * c - cv * s, cu * s + cv * c
    length, width, yaw = u1 - u0, v1 - v0, theta
    if width > length:
        length, width, yaw = width, length, theta + math.pi / 2.0
    yaw = (yaw + math.pi / 2.0) % math.pi - math.pi / 2.0
    return cx, cy, length, width, yaw


def fit_box(cluster_points, ground_z: float, margin: float = 0.1) -> OrientedBox:
    """Upright box around a cluster with its bottom on the ground.

    The footprint is the minimum-area rectangle of the xy hull; height runs
    from ``ground_z`` to the highest point plus ``margin``.
    """
    pts = np.asarray(cluster_points, dtype=np.float64).reshape(-1, 3)
    top = float(pts[:, 2].max()) if len(pts) else ground_z
    h = max(top - ground_z + margin, FALLBACK_MIN_SIZE)
    try:
        cx, cy, length, width, yaw = min_area_rect(pts[:, :2])
    except ValueError:
        lo, hi = pts[:, :2].min(axis=0), pts[:, :2].max(axis=0)
        cx, cy = (lo + hi) / 2.0
        length = max(hi[0] - lo[0], FALLBACK_MIN_SIZE)
        width = max(hi[1] - lo[1], FALLBACK_MIN_SIZE)
        yaw = 0.0
    return OrientedBox(float(cx), float(cy), ground_z + h / 2.0,
                       max(width, 1e-6), max(length, 1e-6), h, float(yaw))


def generate_seeds(scene: ScenePointSet, cfg: SeedConfig | None = None,
                   reward_cfg: RewardConfig | None = None) -> list[OrientedBox]:
    """Cluster dynamic points, fit one box per cluster, drop boxes failing the common-sense filter."""
    cfg = cfg or SeedConfig()
    reward_cfg = reward_cfg or RewardConfig()
    labels = classify_points(scene.tau, reward_cfg.tau_dyn, reward_cfg.tau_bg)
    dyn_idx = np.flatnonzero(labels == DYNAMIC)
    if len(dyn_idx) == 0:
        return []
    pts = scene.points[dyn_idx]
    clusters, _ = dbscan(pts, cfg.eps, cfg.min_pts)
    boxes = []
    for members in clusters:
        cp = pts[members]
        ground = scene.ground_height_near(cp[:, :2].mean(axis=0))
        boxes.append(fit_box(cp, ground, cfg.ground_margin))
    if not boxes:
        return []
    ok = score_boxes(boxes, scene, cfg=reward_cfg).passes
    return [b for b, keep in zip(boxes, ok) if keep]
