"""Action and duration policies over the crane state, plus the
self-triggered rollout that strings them together.

The gate decides when the policies are consulted: a fresh decision happens
on the first step and whenever the previous duration has counted down to
one; in between, the chosen action is held and the recorded duration ticks
down by one per step.  Sampling order at a trigger is fixed (action draw,
then duration draw) so that traces are reproducible from a single stream.
A pinned duration policy and a policy with tau_max == 1 consume no random
numbers at all for the duration, which makes the fixed-duration baseline
trace-compatible with the degenerate self-triggered case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .crane import GRASP_SECONDS_PER_STEP, SCATTER_SECONDS_PER_STEP, CraneEnv
from .gp import SparseGPModel, model_to_dict, predict_batch

ACTION_GRASP = 0
ACTION_SCATTER = 1

DUMP_GRID = np.round(np.arange(0.0, 8.0 + 1e-9, 0.1), 10)


# ---------------------------------------------------------------------------
# state standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateScaler:
    """Affine map applied to raw states before any kernel evaluation."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, float)))
        object.__setattr__(self, "scale", np.atleast_1d(np.asarray(self.scale, float)))

    @classmethod
    def identity(cls, dim: int = 1) -> "StateScaler":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, states: np.ndarray, weights: np.ndarray) -> "StateScaler":
        """Weighted mean/std of the rows of ``states``; zero-weight rows are
        invisible, and a degenerate spread falls back to unit scale."""
        states = np.atleast_2d(np.asarray(states, float))
        weights = np.asarray(weights, float).ravel()
        total = weights.sum()
        mean = (weights @ states) / total
        var = (weights @ (states - mean) ** 2) / total
        scale = np.sqrt(var)
        scale[scale < 1e-8] = 1.0
        return cls(mean, scale)

    def transform(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, float))
        return (states - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


def _scale_one(scaler: StateScaler, state: float) -> np.ndarray:
    return scaler.transform(np.array([[state]]))


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


@dataclass
class ActionPolicy:
    """Bernoulli choice between grasp (0) and scatter (1).

    The GP regresses the scatter probability; its predictive mean is clamped
    into [epsilon_clip, 1 - epsilon_clip] and the predictive uncertainty is
    deliberately ignored when sampling.
    """

    gp: SparseGPModel
    epsilon_clip: float = 0.01
    scaler: StateScaler = field(default_factory=StateScaler.identity)

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon_clip < 0.5:
            raise ValueError("epsilon_clip must lie strictly between 0 and 0.5")


def prob_scatter(policy: ActionPolicy, state: float) -> float:
    mean, _ = predict_batch(policy.gp, _scale_one(policy.scaler, state))
    lo = policy.epsilon_clip
    return float(min(max(mean[0], lo), 1.0 - lo))


def sample_action(policy: ActionPolicy, state: float, rng: np.random.Generator) -> int:
    return ACTION_SCATTER if rng.random() < prob_scatter(policy, state) else ACTION_GRASP


@dataclass
class DurationPolicy:
    """Integer duration in [1, tau_max] from a rounded, clamped Gaussian.

    The sampling variance is the GP predictive variance plus the model's
    noise variance, so the noise doubles as the exploration schedule.  With
    ``pinned`` set (fixed-duration baseline) or ``tau_max == 1`` the outcome
    is forced and no random draw happens.
    """

    gp: SparseGPModel
    tau_max: int = 6
    scaler: StateScaler = field(default_factory=StateScaler.identity)
    pinned: int | None = None

    def __post_init__(self) -> None:
        if self.tau_max < 1:
            raise ValueError("tau_max must be at least 1")
        if self.pinned is not None and not 1 <= self.pinned <= self.tau_max:
            raise ValueError("pinned duration must lie in [1, tau_max]")


def duration_moments(policy: DurationPolicy, state: float) -> tuple[float, float]:
    """Mean and standard deviation of the pre-rounding duration draw."""
    if policy.pinned is not None:
        return float(policy.pinned), 0.0
    mean, var = predict_batch(policy.gp, _scale_one(policy.scaler, state))
    return float(mean[0]), math.sqrt(float(var[0]) + policy.gp.noise_variance)


def round_duration(x: float) -> int:
    """Round half away from zero; draws are continuous so ties don't matter."""
    return int(math.floor(x + 0.5))


def sample_duration(policy: DurationPolicy, state: float, rng: np.random.Generator) -> int:
    if policy.pinned is not None:
        return policy.pinned
    if policy.tau_max == 1:
        return 1
    mean, std = duration_moments(policy, state)
    draw = mean + std * rng.standard_normal()
    return min(max(round_duration(draw), 1), policy.tau_max)


# ---------------------------------------------------------------------------
# gating
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GatingState:
    held_action: int
    remaining: int
    triggered_this_step: bool


def gate_step(gate: GatingState) -> GatingState:
    """Advance the gate by one primitive step.

    A remaining count of one means the strategy finishes now, so the next
    step is a fresh trigger; otherwise the countdown decrements with the
    action held.  Calling this with remaining already at zero is a contract
    violation (a new trigger should have replaced the gate first).
    """
    if gate.remaining < 1:
        raise ValueError("gate_step called with no remaining steps; trigger first")
    if gate.remaining == 1:
        return GatingState(gate.held_action, 0, True)
    return GatingState(gate.held_action, gate.remaining - 1, False)


# ---------------------------------------------------------------------------
# rollout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RolloutLimits:
    max_triggers: int = 30

    def __post_init__(self) -> None:
        if self.max_triggers < 1:
            raise ValueError("max_triggers must be at least 1")


@dataclass(frozen=True)
class EpisodeStep:
    state: float
    action: int
    duration: int
    gate: int
    reward: float
    elapsed_seconds: float


@dataclass(frozen=True)
class ExtendedEpisode:
    steps: tuple[EpisodeStep, ...]
    ret: float
    elapsed_seconds: float
    truncated: bool

    def trigger_steps(self) -> list[EpisodeStep]:
        return [s for s in self.steps if s.gate == 1]


def rollout(
    action_policy: ActionPolicy,
    duration_policy: DurationPolicy,
    env: CraneEnv,
    rng: np.random.Generator,
    limits: RolloutLimits = RolloutLimits(),
) -> ExtendedEpisode:
    """Sample one episode; ``env`` must be freshly reset.

    Every primitive step is recorded.  The first step is always a trigger;
    the environment effect of a strategy is applied when it is triggered and
    its reward is credited on that step, while the following hold steps
    carry zero reward and count the duration down.  The final strategy's
    hold steps are recorded even when it empties the bucket.
    """
    steps: list[EpisodeStep] = []
    triggers = 0
    truncated = False
    pending = True
    gate = GatingState(ACTION_GRASP, 0, True)
    seconds_per_step = GRASP_SECONDS_PER_STEP
    elapsed_before = 0.0
    segment_step = 0

    while True:
        if pending:
            if env.terminal:
                break
            if triggers >= limits.max_triggers:
                truncated = True
                break
            state = env.weight
            elapsed_before = env.elapsed_seconds
            action = sample_action(action_policy, state, rng)
            duration = sample_duration(duration_policy, state, rng)
            triggers += 1
            if action == ACTION_GRASP:
                reward = env.grasp(duration, rng)
                seconds_per_step = GRASP_SECONDS_PER_STEP
            else:
                reward = env.scatter(duration)
                seconds_per_step = SCATTER_SECONDS_PER_STEP
            segment_step = 1
            steps.append(
                EpisodeStep(
                    state, action, duration, 1, reward,
                    elapsed_before + seconds_per_step * segment_step,
                )
            )
            gate = GatingState(action, duration, True)
        else:
            segment_step += 1
            steps.append(
                EpisodeStep(
                    env.weight, gate.held_action, gate.remaining, 0, 0.0,
                    elapsed_before + seconds_per_step * segment_step,
                )
            )
        gate = gate_step(gate)
        pending = gate.triggered_this_step

    return ExtendedEpisode(
        steps=tuple(steps),
        ret=float(sum(s.reward for s in steps)),
        elapsed_seconds=env.elapsed_seconds,
        truncated=truncated,
    )


# ---------------------------------------------------------------------------
# dumps
# ---------------------------------------------------------------------------


def policy_dump(
    action_policy: ActionPolicy, duration_policy: DurationPolicy, iteration: int
) -> dict:
    """JSON-ready snapshot: both models plus a dense evaluation grid.

    The grid covers states 0 to 8 in steps of 0.1 and reports the clamped
    scatter probability and the duration draw's mean/std (std includes the
    exploration noise), which is everything a plotting front end needs.
    """
    grid = DUMP_GRID
    a_mean, _ = predict_batch(action_policy.gp, action_policy.scaler.transform(grid[:, None]))
    lo = action_policy.epsilon_clip
    action_prob = np.clip(a_mean, lo, 1.0 - lo)
    if duration_policy.pinned is not None:
        d_mean = np.full(grid.size, float(duration_policy.pinned))
        d_std = np.zeros(grid.size)
        d_model = None
    else:
        mean, var = predict_batch(
            duration_policy.gp, duration_policy.scaler.transform(grid[:, None])
        )
        d_mean = mean
        d_std = np.sqrt(var + duration_policy.gp.noise_variance)
        d_model = model_to_dict(duration_policy.gp)
    return {
        "kind": "policy_dump",
        "iteration": int(iteration),
        "action": {
            "model": model_to_dict(action_policy.gp),
            "epsilon_clip": action_policy.epsilon_clip,
            "scaler": action_policy.scaler.to_dict(),
        },
        "duration": {
            "model": d_model,
            "tau_max": duration_policy.tau_max,
            "pinned": duration_policy.pinned,
            "scaler": duration_policy.scaler.to_dict(),
        },
        "grid": {
            "state": grid.tolist(),
            "action_prob": action_prob.tolist(),
            "duration_mean": d_mean.tolist(),
            "duration_std": d_std.tolist(),
        },
    }
