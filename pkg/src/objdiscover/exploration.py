"""Local exploration around box proposals."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import OrientedBox, array_to_boxes, boxes_to_array, scale_factors, wrap_angle
from .persistence import DYNAMIC, ScenePointSet
from .reward import DEFAULT_SHAPE_PRIOR, ShapePriorMixture
from .seeding import dbscan

__all__ = [
    "ExplorationConfig",
    "MIN_SAMPLED_SIZE",
    "stream",
    "perturb_box",
    "perturb_array",
    "sample_explore_set",
    "assign_point_labels",
    "spawn_dynamic_proposals",
]

MIN_SAMPLED_SIZE = 0.05


@dataclass
class ExplorationConfig:
    sigma: float = 0.3  # meters for center/size, radians for yaw
    samples_per_scene: int = 200
    rng_seed: int = 0
    spawn_from_dynamic: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.samples_per_scene < 0:
            raise ValueError("samples_per_scene must be non-negative")


def stream(seed: int, scene_id: str = "", iteration: int = 0) -> np.random.Generator:
    """Independent random stream keyed by (seed, scene, iteration).

    Scenes processed in any order or on any worker draw identical numbers.
    """
    key = zlib.crc32(str(scene_id).encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), key, int(iteration)])))


def perturb_array(parents: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Perturb each row of a (K, 7) box array once.

    Center and size get i.i.d. N(0, sigma^2) noise, yaw gets U(-sigma, sigma).
    """
    parents = np.asarray(parents, dtype=np.float64).reshape(-1, 7)
    k = len(parents)
    out = parents.copy()
    out[:, 0:3] = rng.normal(parents[:, 0:3], sigma, size=(k, 3))
    out[:, 3:6] = np.maximum(rng.normal(parents[:, 3:6], sigma, size=(k, 3)), MIN_SAMPLED_SIZE)
    yaw = rng.uniform(parents[:, 6] - sigma, parents[:, 6] + sigma, size=k)
    out[:, 6] = (yaw + math.pi) % (2.0 * math.pi) - math.pi
    return out


def perturb_box(box: OrientedBox, sigma: float, rng: np.random.Generator) -> OrientedBox:
    if sigma == 0:
        return box
    return OrientedBox.from_array(perturb_array(box.as_array()[None], sigma, rng)[0])


def sample_explore_set(parents, cfg: ExplorationConfig, rng: np.random.Generator) -> list[OrientedBox]:
    """Draw ``cfg.samples_per_scene`` parents with replacement and perturb each."""
    arr = parents if isinstance(parents, np.ndarray) else boxes_to_array(parents)
    if len(arr) == 0:
        raise ValueError("cannot explore around an empty proposal set")
    n = cfg.samples_per_scene
    if n == 0:
        return []
    idx = rng.integers(0, len(arr), size=n)
    if cfg.sigma == 0:
        return array_to_boxes(arr[idx])
    return array_to_boxes(perturb_array(arr[idx], cfg.sigma, rng))


def assign_point_labels(tau, predicted_fg, tau_low: float = 0.6) -> np.ndarray:
    """Foreground targets: low persistence or already predicted foreground."""
    tau = np.asarray(tau, dtype=np.float64)
    pred = np.asarray(predicted_fg, dtype=bool)
    if tau.shape != pred.shape:
        raise ValueError(f"length mismatch: {tau.shape} persistence values vs {pred.shape} predictions")
    return (tau < tau_low) | pred


def spawn_dynamic_proposals(scene: ScenePointSet, current_boxes: Sequence[OrientedBox],
                            prior: ShapePriorMixture = DEFAULT_SHAPE_PRIOR,
                            rng: np.random.Generator | None = None,
                            eps: float = 0.5, min_pts: int = 5) -> list[OrientedBox]:
    """One box per cluster of dynamic points not covered by any current box.

    Boxes sit at the cluster's xy centroid with their bottom on the ground,
    take the size of a randomly chosen prior component and a uniform yaw.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    dyn_idx = np.flatnonzero(scene.labels == DYNAMIC)
    if len(dyn_idx) == 0:
        return []
    pts = scene.points[dyn_idx]
    if len(current_boxes):
        covered = np.any(scale_factors(pts, boxes_to_array(current_boxes)) <= 1.0, axis=0)
        pts = pts[~covered]
    if len(pts) == 0:
        return []
    clusters, _ = dbscan(pts, eps, min_pts)
    out = []
    for members in clusters:
        c = pts[members].mean(axis=0)
        comp = int(rng.integers(0, len(prior.components)))
        w, l, h = prior.means[comp]
        yaw = wrap_angle(float(rng.uniform(-math.pi, math.pi)))
        ground = scene.ground_height_near(c[:2])
        out.append(OrientedBox(float(c[0]), float(c[1]), ground + h / 2.0, float(w), float(l), float(h), yaw))
    return out
