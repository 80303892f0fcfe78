"""Episode-driven navigation environments used by training and evaluation."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .episodes import IMAGE, Episode, target_cells
from .reward import RewardConfig, StepContext, compute_step_reward
from .worldsim import (
    START,
    STOP,
    AgentPose,
    GridWorld,
    KinematicsConfig,
    angle_between,
    observe,
    step_action,
)

DEFAULT_STEP_CAP = 500


@dataclass
class EpisodeResult:
    episode_id: str
    success: bool
    path_length: float
    steps: int
    stop_pose: AgentPose
    stopped: bool
    room: str | None


class NavEnv:
    """Plays one episode at a time; the caller decides which episode comes next."""

    def __init__(self, worlds: Mapping[str, GridWorld], kin: KinematicsConfig | None = None,
                 reward_cfg: RewardConfig | None = None, step_cap: int = DEFAULT_STEP_CAP):
        self.worlds = worlds
        self.kin = kin or KinematicsConfig()
        self.reward_cfg = reward_cfg or RewardConfig()
        self.step_cap = step_cap
        self.episode: Episode | None = None

    def goal_field(self, ep: Episode) -> np.ndarray:
        world = self.worlds[ep.world_id]
        if ep.goal_kind == IMAGE:
            return world.distance_field([world.cell_of(*ep.goal_pose.position)])
        objs = [c for c in ep.goal_concepts if not world.vocab.is_room(c)]
        return world.distance_field(target_cells(world, objs))

    def _dtg(self, pose: AgentPose) -> float:
        r, c = self.world.cell_of(pose.x, pose.y)
        return float(self.field[r, c])

    def _atg(self, pose: AgentPose) -> float:
        if self.episode.goal_kind != IMAGE:
            return 0.0
        return angle_between(pose.heading, self.episode.goal_pose.heading)

    def reset(self, ep: Episode) -> np.ndarray:
        if ep.world_id not in self.worlds:
            raise KeyError(f"episode {ep.id} refers to unknown world {ep.world_id!r}")
        self.episode = ep
        self.world = self.worlds[ep.world_id]
        self.field = self.goal_field(ep)
        self.pose = ep.start
        self.steps = 0
        self.path_length = 0.0
        self.dtg = self._dtg(self.pose)
        self.atg = self._atg(self.pose)
        self.prev_action = START
        return self.observation()

    def observation(self) -> np.ndarray:
        return observe(self.world, self.pose, self.kin)

    @property
    def goal(self) -> np.ndarray:
        return self.episode.goal_embedding.vector

    def step(self, action: int):
        """Apply ``action``; returns (reward, done, result-or-None)."""
        old = self.pose
        self.pose, _ = step_action(self.world, old, int(action), self.kin)
        self.steps += 1
        self.path_length += math.hypot(self.pose.x - old.x, self.pose.y - old.y)
        dtg = self._dtg(self.pose)
        atg = self._atg(self.pose)
        ctx = StepContext.from_transition(self.dtg, dtg, self.atg, atg, int(action), self.reward_cfg)
        reward = compute_step_reward(ctx, self.reward_cfg)
        self.dtg, self.atg = dtg, atg
        self.prev_action = int(action)
        stopped = action == STOP
        if stopped or self.steps >= self.step_cap:
            success = bool(stopped and dtg <= self.kin.success_radius)
            res = EpisodeResult(self.episode.id, success, self.path_length, self.steps, self.pose, stopped,
                                self.world.room_at(self.pose.x, self.pose.y))
            return reward, True, res
        return reward, False, None


def sample_actions(probs: np.ndarray, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """One categorical draw per row, each from its own generator."""
    cdf = np.cumsum(probs.astype(np.float64), axis=-1)
    out = np.empty(len(rngs), dtype=np.int64)
    last = probs.shape[-1] - 1
    for i, rng in enumerate(rngs):
        u = rng.random() * cdf[i, -1]
        out[i] = min(int(np.searchsorted(cdf[i], u, side="right")), last)
    return out
