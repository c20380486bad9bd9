"""Synthetic multi-traversal LiDAR-like scenes with known ground truth.

Every traversal re-samples the persistent geometry (ground plane and
axis-aligned structures) on freshly jittered grids, so background point
densities stay consistent across scans. Transient objects appear only in
the current scan; historical scans may contain other objects elsewhere.
Object returns land on the sensor-facing sides of a box shrunk by
``margin`` inside the ground-truth box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import OrientedBox, box_corners_bev, scale_factors
from .persistence import TraversalSet
from .reward import DEFAULT_SHAPE_PRIOR, ShapePriorMixture

__all__ = ["SynthConfig", "GroundTruthScene", "generate_scene", "generate_dataset",
           "GROUND", "STRUCTURE", "OBJECT_BASE"]

GROUND = 0
STRUCTURE = 1
OBJECT_BASE = 2  # origin label of object k is OBJECT_BASE + k


@dataclass
class SynthConfig:
    traversals: int = 6
    objects: tuple[int, int] = (1, 6)
    extent: float = 80.0
    ground_spacing: float = 0.4
    grid_jitter: float = 0.15  # fraction of the grid spacing
    structures: tuple[int, int] = (2, 6)
    structure_spacing: float = 0.4
    noise: float = 0.05
    margin: float = 1.15
    occupancy_resample: bool = True
    rng_seed: int = 0
    sensor_height: float = 1.8
    object_density: float = 40.0  # returns per square meter at close range
    density_range: float = 10.0  # density falls off as 1/r beyond this range
    ground_clearance: float = 0.5
    incidence_power: float = 0.0  # face density scales with cos(incidence) ** power
    size_spread: float = 0.5  # multiplies the per-class size std of drawn objects
    max_object_range: float = 36.0
    history_objects: tuple[int, int] = (0, 2)
    class_weights: dict = field(default_factory=lambda: {"Car": 0.5, "Pedestrian": 0.2, "Truck": 0.1, "Cyclist": 0.2})

    def __post_init__(self):
        if self.traversals < 2:
            raise ValueError("need at least 2 traversals")
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        if self.margin < 1:
            raise ValueError("margin must be >= 1")
        self.objects = tuple(self.objects)
        self.structures = tuple(self.structures)
        self.history_objects = tuple(self.history_objects)


@dataclass
class GroundTruthScene:
    traversals: TraversalSet
    gt_boxes: list[OrientedBox]
    gt_classes: list[str]
    origin: np.ndarray  # per current point: GROUND, STRUCTURE or OBJECT_BASE + k

    @property
    def scene_id(self) -> str:
        return self.traversals.location_id


def _jittered_grid(rng, lo_u, hi_u, lo_v, hi_v, spacing, jitter):
    nu = max(int(round((hi_u - lo_u) / spacing)), 1)
    nv = max(int(round((hi_v - lo_v) / spacing)), 1)
    du, dv = (hi_u - lo_u) / nu, (hi_v - lo_v) / nv
    u = lo_u + (np.arange(nu) + 0.5) * du
    v = lo_v + (np.arange(nv) + 0.5) * dv
    uu, vv = np.meshgrid(u, v, indexing="ij")
    uu = uu.ravel() + rng.uniform(-jitter, jitter, uu.size) * du
    vv = vv.ravel() + rng.uniform(-jitter, jitter, vv.size) * dv
    return uu, vv


def _sample_ground(rng, cfg: SynthConfig) -> np.ndarray:
    half = cfg.extent / 2.0
    x, y = _jittered_grid(rng, -half, half, -half, half, cfg.ground_spacing, cfg.grid_jitter)
    z = rng.normal(0.0, cfg.noise, x.size)
    return np.stack([x, y, z], axis=1)


def _sample_structure(rng, cfg: SynthConfig, prism) -> np.ndarray:
    x0, y0, x1, y1, height = prism
    sp, jit = cfg.structure_spacing, cfg.grid_jitter
    parts = []
    for (ax, ay, bx, by) in ((x0, y0, x1, y0), (x1, y0, x1, y1), (x1, y1, x0, y1), (x0, y1, x0, y0)):
        length = math.hypot(bx - ax, by - ay)
        t, z = _jittered_grid(rng, 0.0, length, 0.0, height, sp, jit)
        f = t / length
        parts.append(np.stack([ax + f * (bx - ax), ay + f * (by - ay), z], axis=1))
    x, y = _jittered_grid(rng, x0, x1, y0, y1, sp, jit)
    parts.append(np.stack([x, y, np.full(x.size, height)], axis=1))
    pts = np.concatenate(parts)
    return pts + rng.normal(0.0, cfg.noise, pts.shape)


def _sample_object(rng, cfg: SynthConfig, box: OrientedBox) -> np.ndarray:
    """Surface returns on the sensor-facing sides of the shrunk object box."""
    inner_l, inner_w, inner_h = box.l / cfg.margin, box.w / cfg.margin, box.h / cfg.margin
    z_lo = max(box.z - inner_h / 2.0, cfg.ground_clearance)
    z_hi = box.z + inner_h / 2.0
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    ux, uy = np.array([c, s]), np.array([-s, c])
    center = np.array([box.x, box.y])
    rng_dist = max(math.hypot(box.x, box.y), 1e-6)
    density = cfg.object_density * min(1.0, cfg.density_range / rng_dist)
    parts = []
    # faces: (outward normal, half-extent along normal, tangent, face length)
    faces = ((ux, inner_l / 2.0, uy, inner_w), (-ux, inner_l / 2.0, uy, inner_w),
             (uy, inner_w / 2.0, ux, inner_l), (-uy, inner_w / 2.0, ux, inner_l))
    for normal, offset, tangent, flen in faces:
        fc = center + normal * offset
        to_sensor = -fc
        cos_inc = float(np.dot(normal, to_sensor) / max(np.linalg.norm(to_sensor), 1e-9))
        if cos_inc <= 0 or z_hi <= z_lo:
            continue
        n = rng.poisson(density * flen * (z_hi - z_lo) * cos_inc ** cfg.incidence_power)
        t = rng.uniform(-flen / 2.0, flen / 2.0, n)
        z = rng.uniform(z_lo, z_hi, n)
        xy = fc[None, :] + t[:, None] * tangent[None, :]
        parts.append(np.column_stack([xy, z]))
    elev = cfg.sensor_height - z_hi
    if elev > 0:
        cos_top = elev / math.hypot(elev, rng_dist)
        n = rng.poisson(density * inner_l * inner_w * cos_top)
        a = rng.uniform(-inner_l / 2.0, inner_l / 2.0, n)
        b = rng.uniform(-inner_w / 2.0, inner_w / 2.0, n)
        xy = center[None, :] + a[:, None] * ux[None, :] + b[:, None] * uy[None, :]
        parts.append(np.column_stack([xy, np.full(n, z_hi)]))
    if not parts:
        return np.zeros((0, 3))
    pts = np.concatenate(parts)
    pts = pts + rng.normal(0.0, cfg.noise, pts.shape)
    # keep every return inside the ground-truth box
    inside = scale_factors(pts, box.as_array())[0] < 1.0
    pts = pts[inside]
    pts[:, 2] = np.maximum(pts[:, 2], cfg.ground_clearance)
    return pts


def _draw_size(rng, prior: ShapePriorMixture, comp: int, spread: float = 1.0) -> np.ndarray:
    mean, std = prior.means[comp], spread * prior.stds[comp]
    while True:
        z = rng.normal(size=3)
        if np.all(np.abs(z) <= 2.0):
            return np.clip(mean + z * std, 0.3, 14.0)


def _footprint_radius(w, l) -> float:
    return 0.5 * math.hypot(w, l)


def _place_objects(rng, cfg: SynthConfig, prior: ShapePriorMixture, count: int, occupied: list):
    names = list(cfg.class_weights)
    weights = np.array([cfg.class_weights[n] for n in names], dtype=np.float64)
    weights /= weights.sum()
    boxes, classes = [], []
    for _ in range(count):
        name = names[int(rng.choice(len(names), p=weights))]
        comp = prior.class_names.index(name)
        w, l, h = _draw_size(rng, prior, comp, cfg.size_spread)
        radius = _footprint_radius(w, l)
        for _attempt in range(100):
            r = rng.uniform(4.0 + radius, cfg.max_object_range)
            phi = rng.uniform(-math.pi, math.pi)
            x, y = r * math.cos(phi), r * math.sin(phi)
            if all(math.hypot(x - ox, y - oy) > radius + orad + 0.5 for ox, oy, orad in occupied):
                yaw = float(rng.uniform(-math.pi, math.pi))
                boxes.append(OrientedBox(x, y, h / 2.0, float(w), float(l), float(h), yaw))
                classes.append(name)
                occupied.append((x, y, radius))
                break
    return boxes, classes


def _place_structures(rng, cfg: SynthConfig, count: int, occupied: list):
    half = cfg.extent / 2.0
    prisms = []
    for _ in range(count):
        sx, sy = rng.uniform(0.5, 8.0, 2)
        height = rng.uniform(1.5, 6.0)
        radius = _footprint_radius(sx, sy)
        for _attempt in range(100):
            cx, cy = rng.uniform(-half + radius, half - radius, 2)
            if math.hypot(cx, cy) < radius + 3.0:
                continue
            if all(math.hypot(cx - ox, cy - oy) > radius + orad + 1.0 for ox, oy, orad in occupied):
                prisms.append((cx - sx / 2, cy - sy / 2, cx + sx / 2, cy + sy / 2, height))
                occupied.append((cx, cy, radius))
                break
    return prisms


def _drop_under(points: np.ndarray, boxes: list[OrientedBox]) -> np.ndarray:
    if not boxes or len(points) == 0:
        return np.ones(len(points), dtype=bool)
    keep = np.ones(len(points), dtype=bool)
    for b in boxes:
        flat = OrientedBox(b.x, b.y, points[:, 2].mean(), b.w, b.l, 1e6, b.yaw)
        keep &= scale_factors(points, flat.as_array())[0] > 1.0
    return keep


def generate_scene(cfg: SynthConfig, scene_index: int,
                   prior: ShapePriorMixture = DEFAULT_SHAPE_PRIOR) -> GroundTruthScene:
    """Generate one deterministic scene for (cfg.rng_seed, scene_index)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.rng_seed), int(scene_index)]))
    occupied: list = []
    n_obj = int(rng.integers(cfg.objects[0], cfg.objects[1] + 1))
    gt_boxes, gt_classes = _place_objects(rng, cfg, prior, n_obj, occupied)
    n_struct = int(rng.integers(cfg.structures[0], cfg.structures[1] + 1))
    prisms = _place_structures(rng, cfg, n_struct, occupied)

    def persistent(r):
        ground = _sample_ground(r, cfg)
        structs = [_sample_structure(r, cfg, p) for p in prisms]
        return ground, structs

    ground, structs = persistent(rng)
    keep = _drop_under(ground, gt_boxes)
    parts = [ground[keep]] + structs
    origin = [np.full(int(keep.sum()), GROUND)] + [np.full(len(s), STRUCTURE) for s in structs]
    for k, b in enumerate(gt_boxes):
        op = _sample_object(rng, cfg, b)
        parts.append(op)
        origin.append(np.full(len(op), OBJECT_BASE + k))
    current = np.concatenate(parts)
    origin = np.concatenate(origin).astype(np.int32)

    history = []
    frozen = None
    for _t in range(cfg.traversals):
        if cfg.occupancy_resample or frozen is None:
            g, s = persistent(rng)
            frozen = np.concatenate([g] + s)
        cloud = frozen
        n_hist = int(rng.integers(cfg.history_objects[0], cfg.history_objects[1] + 1))
        if n_hist:
            hist_boxes, _ = _place_objects(rng, cfg, prior, n_hist, list(occupied))
            extra = [_sample_object(rng, cfg, b) for b in hist_boxes]
            cloud = np.concatenate([cloud[_drop_under(cloud, hist_boxes)]] + extra)
        history.append(cloud)

    ts = TraversalSet(current, history, location_id=f"scene_{scene_index:04d}", ground_z=0.0)
    return GroundTruthScene(ts, gt_boxes, gt_classes, origin)


def generate_dataset(cfg: SynthConfig, n_scenes: int, out_dir, start_index: int = 0) -> list[Path]:
    """Write ``n_scenes`` scenes under ``out_dir``; returns the manifest paths."""
    from .io import save_scene

    out_dir = Path(out_dir)
    paths = []
    for i in range(start_index, start_index + n_scenes):
        scene = generate_scene(cfg, i)
        paths.append(save_scene(scene, out_dir))
    return paths
