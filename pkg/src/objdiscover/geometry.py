"""Upright oriented-box geometry.

Boxes use the (x, y, z, w, l, h, yaw) convention: ``l`` runs along the
box's local x axis (heading), ``w`` along local y, ``h`` along z, and
``yaw`` rotates local x into the world xy plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "OrientedBox",
    "boxes_to_array",
    "array_to_boxes",
    "to_box_frame",
    "scale_factor",
    "scale_factors",
    "neighborhood_points",
    "box_corners_bev",
    "bev_iou",
    "nms",
    "wrap_angle",
]


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class OrientedBox:
    x: float
    y: float
    z: float
    w: float
    l: float
    h: float
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.w, self.l, self.h, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box parameter in {vals}")
        if self.w <= 0 or self.l <= 0 or self.h <= 0:
            raise ValueError(f"box dimensions must be positive, got w={self.w}, l={self.l}, h={self.h}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def size(self) -> np.ndarray:
        return np.array([self.w, self.l, self.h])

    @property
    def bottom(self) -> float:
        return self.z - self.h / 2.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w, self.l, self.h, self.yaw], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "OrientedBox":
        return cls(*(float(v) for v in arr[:7]))

    def scaled(self, factor: float) -> "OrientedBox":
        return OrientedBox(self.x, self.y, self.z, self.w * factor, self.l * factor, self.h * factor, self.yaw)


def boxes_to_array(boxes: Sequence[OrientedBox]) -> np.ndarray:
    if len(boxes) == 0:
        return np.zeros((0, 7))
    return np.stack([b.as_array() for b in boxes])


def array_to_boxes(arr: np.ndarray) -> list[OrientedBox]:
    return [OrientedBox.from_array(row) for row in np.atleast_2d(arr)]


def to_box_frame(points, box: OrientedBox) -> np.ndarray:
    """Express points as offsets in the box's local frame.

    Accepts a single point of shape (3,) or an (N, 3) array and returns the
    same shape.
    """
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = p[:, 0] - box.x
    dy = p[:, 1] - box.y
    out = np.empty_like(p)
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[:, 2] = p[:, 2] - box.z
    return out[0] if single else out


def scale_factor(point, box: OrientedBox) -> float:
    """Uniform scale about the box center at which a face first touches ``point``.

    0 at the center, 1 on the surface, >1 outside.
    """
    local = to_box_frame(np.asarray(point, dtype=np.float64), box)
    return float(max(abs(local[0]) / (box.l / 2.0),
                     abs(local[1]) / (box.w / 2.0),
                     abs(local[2]) / (box.h / 2.0)))


def scale_factors(points: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Vectorized scale factors for a (K, 7) box array against (M, 3) points.

    Returns a (K, M) array.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    c = np.cos(boxes[:, 6])[:, None]
    s = np.sin(boxes[:, 6])[:, None]
    dx = points[None, :, 0] - boxes[:, 0:1]
    dy = points[None, :, 1] - boxes[:, 1:2]
    dz = points[None, :, 2] - boxes[:, 2:3]
    lx = np.abs(c * dx + s * dy) / (boxes[:, 4:5] / 2.0)
    ly = np.abs(-s * dx + c * dy) / (boxes[:, 3:4] / 2.0)
    lz = np.abs(dz) / (boxes[:, 5:6] / 2.0)
    return np.maximum(np.maximum(lx, ly), lz)


def neighborhood_points(points: np.ndarray, box: OrientedBox, factor: float = 2.0) -> np.ndarray:
    """Indices of points inside the box scaled by ``factor`` (the O(b) neighborhood)."""
    s = scale_factors(points, box.as_array())[0]
    return np.flatnonzero(s <= factor)


def box_corners_bev(box: OrientedBox) -> list[tuple[float, float]]:
    """Footprint corners in counter-clockwise order."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw = box.l / 2.0, box.w / 2.0
    out = []
    for u, v in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        out.append((box.x + c * u - s * v, box.y + s * u + c * v))
    return out


def _polygon_area(poly) -> float:
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def _clip_convex(subject, clipper):
    # Sutherland-Hodgman; both polygons counter-clockwise.
    output = list(subject)
    n = len(clipper)
    for i in range(n):
        if not output:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = output
        output = []
        m = len(inp)
        for j in range(m):
            px, py = inp[j]
            qx, qy = inp[(j + 1) % m]
            dp = ex * (py - ay) - ey * (px - ax)
            dq = ex * (qy - ay) - ey * (qx - ax)
            if dp >= 0:
                output.append((px, py))
                if dq < 0:
                    t = dp / (dp - dq)
                    output.append((px + t * (qx - px), py + t * (qy - py)))
            elif dq >= 0:
                t = dp / (dp - dq)
                output.append((px + t * (qx - px), py + t * (qy - py)))
    return output


def bev_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Bird's-eye-view IoU of two yawed rectangles (height ignored)."""
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a.l, a.w)
    rb = 0.5 * math.hypot(b.l, b.w)
    if math.hypot(a.x - b.x, a.y - b.y) >= ra + rb:
        return 0.0
    area_a = a.l * a.w
    area_b = b.l * b.w
    inter = _polygon_area(_clip_convex(box_corners_bev(a), box_corners_bev(b)))
    if inter <= 1e-12 * min(area_a, area_b):
        return 0.0
    inter = min(inter, area_a, area_b)
    return inter / (area_a + area_b - inter)


def nms(boxes: Sequence[OrientedBox], rewards: Sequence[float], iou_threshold: float) -> list[int]:
    """Greedy reward-ordered NMS.

    Returns kept indices in descending reward order; equal rewards keep the
    lower index first.
    """
    if len(boxes) != len(rewards):
        raise ValueError(f"got {len(boxes)} boxes but {len(rewards)} rewards")
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    order = sorted(range(len(boxes)), key=lambda i: (-rewards[i], i))
    kept: list[int] = []
    for i in order:
        bi = boxes[i]
        if all(bev_iou(boxes[k], bi) <= iou_threshold for k in kept):
            kept.append(i)
    return kept
