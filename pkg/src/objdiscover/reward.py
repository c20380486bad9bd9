"""Heuristic box reward: shape prior, surface alignment, point counts and filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import OrientedBox, boxes_to_array, scale_factors
from .persistence import BACKGROUND, DYNAMIC, ScenePointSet, classify_points

__all__ = [
    "ShapeComponent",
    "ShapePriorMixture",
    "DEFAULT_SHAPE_PRIOR",
    "RewardConfig",
    "RewardBreakdown",
    "gaussian_log_density",
    "r_shape",
    "r_align",
    "r_count",
    "common_sense_ok",
    "reward_total",
    "score_boxes",
    "SceneReward",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def gaussian_log_density(x, mu: float, sigma: float):
    z = (np.asarray(x, dtype=np.float64) - mu) / sigma
    return -0.5 * z * z - math.log(sigma) - _LOG_SQRT_2PI


@dataclass(frozen=True)
class ShapeComponent:
    class_name: str
    mean: tuple[float, float, float]  # (w, l, h)
    std: tuple[float, float, float]


class ShapePriorMixture:
    """Mixture of axis-wise Gaussians over box size (w, l, h).

    Weights are scaled so the mixture evaluates to exactly 1 at every
    component mean, cross-component mass included.
    """

    def __init__(self, components: Sequence[ShapeComponent]):
        if len(components) == 0:
            raise ValueError("shape prior needs at least one component")
        self.components = list(components)
        self.means = np.array([c.mean for c in components], dtype=np.float64)
        self.stds = np.array([c.std for c in components], dtype=np.float64)
        if np.any(self.stds <= 0):
            raise ValueError("shape prior standard deviations must be positive")
        self.scaled_weights = self._equal_peak_weights()

    @property
    def class_names(self) -> list[str]:
        return [c.class_name for c in self.components]

    def _kernels(self, sizes: np.ndarray) -> np.ndarray:
        # peak-normalized component kernels, shape (N, C)
        z = (sizes[:, None, :] - self.means[None]) / self.stds[None]
        return np.exp(-0.5 * np.sum(z * z, axis=-1))

    def _equal_peak_weights(self) -> np.ndarray:
        gram = self._kernels(self.means)
        try:
            w = np.linalg.solve(gram, np.ones(len(self.components)))
        except np.linalg.LinAlgError:
            w = None
        if w is None or np.any(w <= 0):
            # heavily overlapping components: fall back to reciprocal peaks
            w = np.ones(len(self.components))
        return w

    def density(self, sizes) -> np.ndarray:
        """Scaled mixture value for (N, 3) sizes in (w, l, h) order."""
        sizes = np.atleast_2d(np.asarray(sizes, dtype=np.float64))
        return self._kernels(sizes) @ self.scaled_weights

    def component_log_likelihood(self, sizes) -> np.ndarray:
        """Unscaled per-component Gaussian log densities, shape (N, C)."""
        sizes = np.atleast_2d(np.asarray(sizes, dtype=np.float64))
        z = (sizes[:, None, :] - self.means[None]) / self.stds[None]
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(self.stds), axis=-1)[None] - 3 * _LOG_SQRT_2PI


DEFAULT_SHAPE_PRIOR = ShapePriorMixture([
    ShapeComponent("Car", (1.911, 4.745, 1.711), (0.162, 0.559, 0.248)),
    ShapeComponent("Pedestrian", (0.780, 0.797, 1.745), (0.153, 0.182, 0.177)),
    ShapeComponent("Truck", (2.832, 9.403, 3.299), (0.278, 3.145, 0.430)),
    ShapeComponent("Cyclist", (0.613, 1.752, 1.364), (0.256, 0.326, 0.343)),
])


@dataclass
class RewardConfig:
    lambda_shape: float = 1.0
    lambda_align: float = 1.0
    lambda_dyn: float = 0.001
    lambda_bg: float = 0.001
    mu_scale: float = 0.8
    sigma_scale: float = 0.2
    tau_dyn: float = 0.6
    tau_bg: float = 0.9
    min_dyn_points: int = 4
    max_persistent_fraction: float = 0.8
    min_dim: float = 0.2
    max_dim: float = 15.0
    ground_window: tuple[float, float] = (-0.5, 1.0)
    neighborhood_factor: float = 2.0
    # "geometric" (count-normalized) or "product" (raw likelihood product)
    align_aggregation: str = "geometric"
    use_filter: bool = True

    def __post_init__(self):
        for name in ("lambda_shape", "lambda_align", "lambda_dyn", "lambda_bg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.sigma_scale <= 0:
            raise ValueError("sigma_scale must be positive")
        if self.min_dyn_points < 1:
            raise ValueError("min_dyn_points must be >= 1")
        if self.align_aggregation not in ("geometric", "product"):
            raise ValueError(f"unknown align_aggregation {self.align_aggregation!r}")
        self.ground_window = tuple(self.ground_window)


@dataclass
class RewardBreakdown:
    """Per-box reward components for a batch of K boxes."""

    shape: np.ndarray
    align: np.ndarray
    count: np.ndarray
    n_dyn_neighborhood: np.ndarray
    n_bg_neighborhood: np.ndarray
    n_dyn_inside: np.ndarray
    n_bg_inside: np.ndarray
    passes: np.ndarray
    total: np.ndarray = field(default=None)

    def record(self, i: int) -> dict:
        return {
            "shape": float(self.shape[i]),
            "align": float(self.align[i]),
            "count": float(self.count[i]),
            "n_dyn": int(self.n_dyn_neighborhood[i]),
            "n_bg": int(self.n_bg_neighborhood[i]),
            "common_sense": bool(self.passes[i]),
        }


def r_shape(box: OrientedBox, prior: ShapePriorMixture = DEFAULT_SHAPE_PRIOR) -> float:
    return float(prior.density([box.w, box.l, box.h])[0])


def _aggregate_align(log_sum, n, cfg: RewardConfig):
    log_sum = np.asarray(log_sum, dtype=np.float64)
    n = np.asarray(n)
    with np.errstate(over="ignore"):
        if cfg.align_aggregation == "geometric":
            val = np.exp(log_sum / np.maximum(n, 1))
        else:
            val = np.exp(log_sum)
    return np.where(n > 0, val, 0.0)


def r_align(box: OrientedBox, dyn_points, cfg: RewardConfig = None) -> float:
    """Alignment reward of ``box`` given the dynamic points in its neighborhood."""
    cfg = cfg or RewardConfig()
    pts = np.asarray(dyn_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return 0.0
    s = scale_factors(pts, box.as_array())[0]
    log_sum = float(np.sum(gaussian_log_density(s, cfg.mu_scale, cfg.sigma_scale)))
    return float(_aggregate_align(log_sum, len(pts), cfg))


def r_count(n_dyn: int, n_bg: int, cfg: RewardConfig = None) -> float:
    cfg = cfg or RewardConfig()
    return cfg.lambda_dyn * n_dyn - cfg.lambda_bg * n_bg


def score_boxes(boxes, scene: ScenePointSet, prior: ShapePriorMixture = DEFAULT_SHAPE_PRIOR,
                cfg: RewardConfig = None, chunk_elements: int = 4_000_000) -> RewardBreakdown:
    """Score a batch of boxes against one scene.

    ``boxes`` is a list of OrientedBox or a (K, 7) array. Only dynamic and
    background points within the scaled neighborhood of each box contribute.
    """
    cfg = cfg or RewardConfig()
    arr = boxes_to_array(boxes) if not isinstance(boxes, np.ndarray) else boxes.reshape(-1, 7)
    k = len(arr)
    out = {name: np.zeros(k) for name in ("align", "n_dyn_o", "n_bg_o", "n_dyn_in", "n_bg_in")}
    if k == 0:
        empty = np.zeros(0)
        return RewardBreakdown(empty, empty, empty, empty.astype(int), empty.astype(int),
                               empty.astype(int), empty.astype(int), empty.astype(bool), empty)

    factor = cfg.neighborhood_factor
    tree = scene.bev_tree
    radii = 0.5 * factor * np.hypot(arr[:, 3], arr[:, 4]) + 1e-9
    neighbor_lists = tree.query_ball_point(arr[:, :2], r=radii)

    start = 0
    while start < k:
        # grow the chunk while the (boxes x points) matrix stays small
        stop = start + 1
        members = set(neighbor_lists[start])
        while stop < k:
            cand = members.union(neighbor_lists[stop])
            if (stop + 1 - start) * max(len(cand), 1) > chunk_elements:
                break
            members = cand
            stop += 1
        if members:
            local = np.fromiter(sorted(members), dtype=np.int64)
            pts = scene.points[local]
            lab = classify_points(scene.tau[local], cfg.tau_dyn, cfg.tau_bg)
            s = scale_factors(pts, arr[start:stop])
            is_dyn = (lab == DYNAMIC)[None, :]
            is_bg = (lab == BACKGROUND)[None, :]
            in_o = s <= factor
            inside = s < 1.0
            dyn_o = in_o & is_dyn
            logd = gaussian_log_density(s, cfg.mu_scale, cfg.sigma_scale)
            out["align"][start:stop] = np.where(dyn_o, logd, 0.0).sum(axis=1)
            out["n_dyn_o"][start:stop] = dyn_o.sum(axis=1)
            out["n_bg_o"][start:stop] = (in_o & is_bg).sum(axis=1)
            out["n_dyn_in"][start:stop] = (inside & is_dyn).sum(axis=1)
            out["n_bg_in"][start:stop] = (inside & is_bg).sum(axis=1)
        start = stop

    n_dyn_o = out["n_dyn_o"].astype(np.int64)
    n_bg_o = out["n_bg_o"].astype(np.int64)
    n_dyn_in = out["n_dyn_in"].astype(np.int64)
    n_bg_in = out["n_bg_in"].astype(np.int64)

    shape = prior.density(arr[:, 3:6])
    align = _aggregate_align(out["align"], n_dyn_o, cfg)
    count = cfg.lambda_dyn * n_dyn_o - cfg.lambda_bg * n_bg_o
    passes = _common_sense(arr, n_dyn_in, n_bg_in, scene, cfg)
    raw = cfg.lambda_shape * shape + cfg.lambda_align * align + count
    if cfg.use_filter:
        total = np.where(passes, np.maximum(raw, 0.0), 0.0)
    else:
        total = np.maximum(raw, 0.0)
    return RewardBreakdown(shape, align, count, n_dyn_o, n_bg_o, n_dyn_in, n_bg_in, passes, total)


def _common_sense(arr, n_dyn_in, n_bg_in, scene: ScenePointSet, cfg: RewardConfig) -> np.ndarray:
    enough_dyn = n_dyn_in >= cfg.min_dyn_points
    classified = n_dyn_in + n_bg_in
    frac_bg = np.where(classified > 0, n_bg_in / np.maximum(classified, 1), 1.0)
    mostly_dyn = frac_bg <= cfg.max_persistent_fraction
    dims = arr[:, 3:6]
    sized = np.all((dims >= cfg.min_dim) & (dims <= cfg.max_dim), axis=1)
    ground = np.array([scene.ground_height_near(b[:2]) for b in arr]) if scene.ground_z is None \
        else np.full(len(arr), float(scene.ground_z))
    lift = arr[:, 2] - arr[:, 5] / 2.0 - ground
    grounded = (lift >= cfg.ground_window[0]) & (lift <= cfg.ground_window[1])
    return enough_dyn & mostly_dyn & sized & grounded


def common_sense_ok(box: OrientedBox, scene: ScenePointSet, cfg: RewardConfig = None) -> bool:
    """Point-count, persistence, size and ground-contact sanity checks."""
    return bool(score_boxes([box], scene, DEFAULT_SHAPE_PRIOR, cfg).passes[0])


def reward_total(box: OrientedBox, scene: ScenePointSet, prior: ShapePriorMixture = DEFAULT_SHAPE_PRIOR,
                 cfg: RewardConfig = None) -> float:
    return float(score_boxes([box], scene, prior, cfg).total[0])


class SceneReward:
    """Reward function bound to one scene; callable on a batch of boxes."""

    def __init__(self, scene: ScenePointSet, prior: ShapePriorMixture = DEFAULT_SHAPE_PRIOR,
                 cfg: RewardConfig = None):
        self.scene = scene
        self.prior = prior
        self.cfg = cfg or RewardConfig()

    def breakdown(self, boxes) -> RewardBreakdown:
        return score_boxes(boxes, self.scene, self.prior, self.cfg)

    def __call__(self, boxes) -> np.ndarray:
        return self.breakdown(boxes).total
