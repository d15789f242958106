"""Simulated crane that grasps garbage from a pit and scatters it into an
incinerator hopper.

A grasp closes the bucket for its whole duration and ends up holding an
amount set by the garbage hardness (longer grasps dig deeper into hard
garbage); a scatter releases roughly one unit per step.  Scattering is the
only rewarded move: the reward favors matching the scatter duration to the
held amount while finishing near a target elapsed time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

GRASP_SECONDS_PER_STEP = 10.0
SCATTER_SECONDS_PER_STEP = 5.0
WEIGHT_EPSILON = 0.05
MAX_DURATION = 6


@dataclass(frozen=True)
class GarbageSetting:
    """Grasp outcome table: amount held for durations 1, 2, 3, and 4 or more."""

    label: str
    grasp_amounts: tuple[float, float, float, float]
    noise_std: float = 0.7


SETTING_SOFT = GarbageSetting("setting1", (3.0, 3.0, 3.0, 3.0))
SETTING_HARD = GarbageSetting("setting2", (2.0, 3.0, 5.0, 5.0))

_SETTINGS = {"setting1": SETTING_SOFT, "setting2": SETTING_HARD}


def setting_by_name(name: str) -> GarbageSetting:
    try:
        return _SETTINGS[name]
    except KeyError:
        raise ValueError(
            f"unknown setting {name!r}; expected one of {sorted(_SETTINGS)}"
        ) from None


@dataclass(frozen=True)
class RewardParams:
    """Scatter reward shape: amount term minus mismatch, discounted in time.

    r_amount = min(s, tau) - alpha * |s - tau|
    r_time   = exp(-beta * (elapsed_after - u_min)^2)
    """

    alpha: float = 1.5
    beta: float = 0.004
    u_min: float = 30.0


@dataclass(frozen=True)
class CraneEnvState:
    weight: float = 0.0
    elapsed_seconds: float = 0.0
    scattered_any: bool = False
    terminal: bool = False


def reset(setting: GarbageSetting) -> CraneEnvState:
    """Fresh episode: empty bucket, zero clock."""
    return CraneEnvState()


def _check_duration(duration: int) -> int:
    duration = int(duration)
    if not 1 <= duration <= MAX_DURATION:
        raise ValueError(f"duration must be in [1, {MAX_DURATION}], got {duration}")
    return duration


def apply_grasp(
    state: CraneEnvState,
    duration: int,
    setting: GarbageSetting,
    rng: np.random.Generator,
) -> CraneEnvState:
    """Run a grasp for ``duration`` steps; the held weight is replaced.

    The new weight is the table amount for the duration plus Gaussian noise,
    floored at zero.  Durations beyond the table use its last column.
    """
    duration = _check_duration(duration)
    if state.terminal:
        raise ValueError("cannot grasp in a terminal state")
    amount = setting.grasp_amounts[min(duration, 4) - 1]
    noise = setting.noise_std * rng.standard_normal() if setting.noise_std > 0 else 0.0
    return replace(
        state,
        weight=max(0.0, amount + noise),
        elapsed_seconds=state.elapsed_seconds + GRASP_SECONDS_PER_STEP * duration,
    )


def grasp_reward() -> float:
    """Grasping itself is never rewarded."""
    return 0.0


def apply_scatter(
    state: CraneEnvState, duration: int, params: RewardParams
) -> tuple[CraneEnvState, float]:
    """Run a scatter for ``duration`` steps and return (new state, reward).

    One unit leaves the bucket per step, so min(weight, duration) is
    scattered.  The reward is credited here in full; the episode becomes
    terminal once the remaining weight drops to ``WEIGHT_EPSILON`` or below.
    """
    duration = _check_duration(duration)
    if state.terminal:
        raise ValueError("cannot scatter in a terminal state")
    s = state.weight
    new_weight = max(0.0, s - duration)
    elapsed_after = state.elapsed_seconds + SCATTER_SECONDS_PER_STEP * duration
    r_amount = min(s, float(duration)) - params.alpha * abs(s - duration)
    r_time = math.exp(-params.beta * (elapsed_after - params.u_min) ** 2)
    new_state = CraneEnvState(
        weight=new_weight,
        elapsed_seconds=elapsed_after,
        scattered_any=True,
        terminal=new_weight <= WEIGHT_EPSILON,
    )
    return new_state, r_amount * r_time


@dataclass
class CraneEnv:
    """Single-owner mutable wrapper used by rollouts; one instance per episode."""

    setting: GarbageSetting
    params: RewardParams = RewardParams()
    state: CraneEnvState = CraneEnvState()

    def reset(self) -> None:
        self.state = reset(self.setting)

    @property
    def weight(self) -> float:
        return self.state.weight

    @property
    def terminal(self) -> bool:
        return self.state.terminal

    @property
    def elapsed_seconds(self) -> float:
        return self.state.elapsed_seconds

    def grasp(self, duration: int, rng: np.random.Generator) -> float:
        self.state = apply_grasp(self.state, duration, self.setting, rng)
        return grasp_reward()

    def scatter(self, duration: int) -> float:
        self.state, reward = apply_scatter(self.state, duration, self.params)
        return reward
