"""Per-step training reward for goal-view navigation.

    r = r_success + r_angle_success - d(dtg) - d(atg) + r_slack

where the success bonuses fire only on STOP, d(dtg) is the change in geodesic
distance-to-goal and d(atg) is the change in heading error, counted only once
the agent is inside the gate radius. Heading errors are converted to radians
so both shaping terms live on comparable scales.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass

from .worldsim import STOP


@dataclass(frozen=True)
class RewardConfig:
    r_success: float = 5.0
    r_angle_success: float = 5.0
    r_slack: float = -0.01
    success_radius: float = 1.0
    angle_threshold: float = 25.0
    atg_gate_radius: float = 1.0

    def __post_init__(self):
        if self.success_radius <= 0 or self.atg_gate_radius <= 0:
            raise ValueError("radii must be positive")
        if not 0 < self.angle_threshold <= 180:
            raise ValueError("angle_threshold must be in (0, 180]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> RewardConfig:
        return cls(**d)


@dataclass(frozen=True)
class StepContext:
    prev_dtg: float
    new_dtg: float
    prev_atg: float
    new_atg: float
    action: int
    stopped_in_success: bool
    stopped_in_angle_success: bool

    @classmethod
    def from_transition(cls, prev_dtg: float, new_dtg: float, prev_atg: float, new_atg: float,
                        action: int, cfg: RewardConfig) -> StepContext:
        ok = action == STOP and new_dtg <= cfg.success_radius
        return cls(prev_dtg, new_dtg, prev_atg, new_atg, action, ok,
                   ok and new_atg <= cfg.angle_threshold)


def compute_step_reward(ctx: StepContext, cfg: RewardConfig) -> float:
    r = 0.0
    if ctx.action == STOP and ctx.stopped_in_success:
        r += cfg.r_success
        if ctx.stopped_in_angle_success:
            r += cfg.r_angle_success
    r -= ctx.new_dtg - ctx.prev_dtg
    if ctx.new_dtg <= cfg.atg_gate_radius:
        r -= (ctx.new_atg - ctx.prev_atg) * (math.pi / 180.0)
    return r + cfg.r_slack
