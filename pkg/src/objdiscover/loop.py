"""Reward-ranked box refinement: propose, explore, score, suppress, keep the best.

Each iteration scores the current proposals together with perturbed copies
of them, suppresses overlaps by reward, keeps the top k% of survivors and
hands them back to the proposal source. With the default
:class:`BoxSetSource` this is a greedy stochastic local search on the total
reward of the box set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .exploration import ExplorationConfig, sample_explore_set, spawn_dynamic_proposals, stream
from .geometry import OrientedBox, boxes_to_array, nms
from .persistence import ScenePointSet
from .reward import DEFAULT_SHAPE_PRIOR, ShapePriorMixture

__all__ = [
    "ProposalSource",
    "BoxSetSource",
    "LoopConfig",
    "DiscoveryState",
    "top_k_budget",
    "discover_step",
    "discover_run",
]

RewardFn = Callable[[Sequence[OrientedBox]], np.ndarray]


class ProposalSource(Protocol):
    def propose(self, scene: ScenePointSet) -> list[OrientedBox]: ...

    def update(self, scene: ScenePointSet, selected: Sequence[OrientedBox]) -> None: ...


class BoxSetSource:
    """Proposal source that memorizes the last selected box set."""

    def __init__(self, seeds: Sequence[OrientedBox] = ()):
        self.boxes = list(seeds)

    def propose(self, scene: ScenePointSet) -> list[OrientedBox]:
        return list(self.boxes)

    def update(self, scene: ScenePointSet, selected: Sequence[OrientedBox]) -> None:
        self.boxes = list(selected)


@dataclass
class LoopConfig:
    top_k_percent: float = 75.0
    nms_iou: float = 0.1
    max_iterations: int = 100
    epsilon: float = 1e-4
    patience: int = 10
    # never accept a kept set whose total reward is below the previous one
    elitist: bool = True
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)

    def __post_init__(self):
        if not 0 < self.top_k_percent <= 100:
            raise ValueError("top_k_percent must be in (0, 100]")
        if not 0 <= self.nms_iou <= 1:
            raise ValueError("nms_iou must be in [0, 1]")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class DiscoveryState:
    boxes: list[OrientedBox] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    iteration: int = 0
    # (iteration, kept count, total reward, mean reward)
    trace: list[tuple[int, int, float, float]] = field(default_factory=list)
    converged: bool = False
    empty: bool = False
    stall: int = 0

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    def best_box(self) -> OrientedBox | None:
        if not self.boxes:
            return None
        return self.boxes[int(np.argmax(self.rewards))]


def top_k_budget(n_survivors: int, top_k_percent: float) -> int:
    if n_survivors == 0:
        return 0
    return max(1, math.ceil(n_survivors * top_k_percent / 100.0 - 1e-9))


def discover_step(state: DiscoveryState, scene: ScenePointSet, source: ProposalSource,
                  reward_fn: RewardFn, cfg: LoopConfig,
                  prior: ShapePriorMixture = DEFAULT_SHAPE_PRIOR) -> DiscoveryState:
    """One propose / explore / score / NMS / filter / update iteration."""
    ecfg = cfg.exploration
    rng = stream(ecfg.rng_seed, scene.scene_id, state.iteration)
    proposals = list(source.propose(scene))
    explore: list[OrientedBox] = []
    if proposals and ecfg.samples_per_scene > 0:
        explore = sample_explore_set(proposals, ecfg, rng)
    if ecfg.spawn_from_dynamic:
        explore += spawn_dynamic_proposals(scene, proposals, prior, rng)
    candidates = proposals + explore

    nxt = DiscoveryState(iteration=state.iteration + 1, trace=list(state.trace), stall=state.stall)
    if not candidates:
        nxt.converged = nxt.empty = True
        nxt.trace.append((nxt.iteration, 0, 0.0, 0.0))
        return nxt

    rewards = np.asarray(reward_fn(candidates), dtype=np.float64)
    kept = nms(candidates, rewards.tolist(), cfg.nms_iou)
    kept = kept[:top_k_budget(len(kept), cfg.top_k_percent)]
    kept = [i for i in kept if rewards[i] > 0]
    new_boxes = [candidates[i] for i in kept]
    new_rewards = [float(rewards[i]) for i in kept]

    if cfg.elitist and state.boxes and sum(new_rewards) < state.total_reward:
        new_boxes, new_rewards = list(state.boxes), list(state.rewards)

    nxt.boxes, nxt.rewards = new_boxes, new_rewards
    total = nxt.total_reward
    mean = total / len(new_rewards) if new_rewards else 0.0
    nxt.trace.append((nxt.iteration, len(new_boxes), total, mean))
    if not new_boxes:
        nxt.converged = nxt.empty = True
    source.update(scene, new_boxes)
    return nxt


def discover_run(scene: ScenePointSet, source: ProposalSource, reward_fn: RewardFn,
                 cfg: LoopConfig | None = None,
                 prior: ShapePriorMixture = DEFAULT_SHAPE_PRIOR) -> DiscoveryState:
    """Iterate :func:`discover_step` until max_iterations or the objective stalls.

    The run stops once the kept-set total reward has improved by less than
    ``cfg.epsilon`` for ``cfg.patience`` consecutive iterations.
    """
    cfg = cfg or LoopConfig()
    state = DiscoveryState()
    prev_total = None
    while state.iteration < cfg.max_iterations:
        state = discover_step(state, scene, source, reward_fn, cfg, prior)
        if state.empty:
            break
        total = state.total_reward
        if prev_total is not None and total - prev_total >= cfg.epsilon:
            state.stall = 0
        else:
            state.stall += 1
        prev_total = total
        if state.stall >= cfg.patience:
            state.converged = True
            break
    return state
