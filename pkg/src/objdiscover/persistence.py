"""Persistency-prior scoring of LiDAR points across repeated traversals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "TraversalSet",
    "ScenePointSet",
    "DYNAMIC",
    "BACKGROUND",
    "UNCERTAIN",
    "normalized_entropy",
    "pp_score",
    "classify_points",
]

DYNAMIC = 0
BACKGROUND = 1
UNCERTAIN = 2

DEFAULT_RADIUS = 0.3


@dataclass
class TraversalSet:
    """One location's current scan plus T historical scans in a shared frame."""

    current: np.ndarray
    history: list[np.ndarray]
    location_id: str = ""
    ground_z: float | None = 0.0

    def __post_init__(self):
        self.current = np.asarray(self.current, dtype=np.float64).reshape(-1, 3)
        self.history = [np.asarray(h, dtype=np.float64).reshape(-1, 3) for h in self.history]


def normalized_entropy(counts) -> np.ndarray:
    """Row-wise entropy of count vectors, normalized by log(T).

    ``counts`` has shape (N, T). Rows with no counts map to 0.
    """
    counts = np.asarray(counts, dtype=np.float64)
    n_traversals = counts.shape[-1]
    if n_traversals < 2:
        raise ValueError(f"need T >= 2 traversals for entropy scoring, got T={n_traversals}")
    total = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(total > 0, counts / np.where(total > 0, total, 1.0), 0.0)
        terms = np.where(q > 0, -q * np.log(np.where(q > 0, q, 1.0)), 0.0)
    h = terms.sum(axis=-1) / math.log(n_traversals)
    return np.clip(h, 0.0, 1.0)


def pp_score(ts: TraversalSet, radius: float = DEFAULT_RADIUS) -> np.ndarray:
    """Per-point persistence score of the current scan, in [0, 1].

    For every current point the neighbors within ``radius`` are counted in
    each historical traversal; the score is the normalized entropy of those
    counts. Points with no historical neighbors at all score 0.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if len(ts.current) == 0:
        raise ValueError("current scan is empty")
    if len(ts.history) < 2:
        raise ValueError(f"persistence scoring needs T >= 2 historical traversals, got T={len(ts.history)}")
    counts = np.zeros((len(ts.current), len(ts.history)), dtype=np.float64)
    for t, cloud in enumerate(ts.history):
        if len(cloud) == 0:
            continue
        tree = cKDTree(cloud)
        counts[:, t] = tree.query_ball_point(ts.current, r=radius, return_length=True)
    return normalized_entropy(counts)


def classify_points(tau, tau_dyn: float = 0.6, tau_bg: float = 0.9) -> np.ndarray:
    """Label points DYNAMIC (tau < tau_dyn), BACKGROUND (tau >= tau_bg) or UNCERTAIN."""
    tau = np.asarray(tau, dtype=np.float64)
    labels = np.full(tau.shape, UNCERTAIN, dtype=np.int8)
    labels[tau < tau_dyn] = DYNAMIC
    labels[tau >= tau_bg] = BACKGROUND
    return labels


@dataclass
class ScenePointSet:
    """Current-scan points with their persistence scores and classes."""

    points: np.ndarray
    tau: np.ndarray
    ground_z: float | None = 0.0
    scene_id: str = ""
    tau_dyn: float = 0.6
    tau_bg: float = 0.9
    labels: np.ndarray = field(init=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.tau = np.asarray(self.tau, dtype=np.float64).reshape(-1)
        if len(self.points) != len(self.tau):
            raise ValueError(f"{len(self.points)} points but {len(self.tau)} persistence values")
        self.labels = classify_points(self.tau, self.tau_dyn, self.tau_bg)
        self._tree = None

    @property
    def dynamic_mask(self) -> np.ndarray:
        return self.labels == DYNAMIC

    @property
    def background_mask(self) -> np.ndarray:
        return self.labels == BACKGROUND

    @property
    def bev_tree(self) -> cKDTree:
        """Lazily built xy index over all points."""
        if self._tree is None:
            self._tree = cKDTree(self.points[:, :2])
        return self._tree

    def ground_height_near(self, xy: Sequence[float], radius: float = 15.0) -> float:
        """Ground height at ``xy``: scene metadata, else the 5th percentile of nearby z."""
        if self.ground_z is not None:
            return float(self.ground_z)
        idx = self.bev_tree.query_ball_point(np.asarray(xy[:2], dtype=np.float64), r=radius)
        z = self.points[idx, 2] if len(idx) else self.points[:, 2]
        return float(np.percentile(z, 5))

    @classmethod
    def from_traversals(cls, ts: TraversalSet, radius: float = DEFAULT_RADIUS, **kwargs) -> "ScenePointSet":
        return cls(ts.current, pp_score(ts, radius), ground_z=ts.ground_z, scene_id=ts.location_id, **kwargs)
