"""Episodic policy improvement: roll out, weight episodes by return,
refit both policies on the pooled trigger steps.

Each iteration runs a batch of episodes, records their returns, then
performs one improvement step on a replay pool of recent batches.  Episode
weights come from exponentiated advantages with the temperature chosen by
bisection so the effective sample size lands on a configured fraction of
the pool.  Both policy models are refit from scratch on the weighted
trigger states (re-standardized, pseudo inputs re-selected, kernel
re-optimized with the previous kernel as the starting point), while the
observation noise follows a fixed annealing schedule rather than the
marginal-likelihood search: it doubles as the exploration magnitude, so
shrinking it is what gradually turns exploration off.

A pinned duration (the fixed-duration baseline) and a duration cap of one
both skip duration-model fitting entirely.  Together with the sampling
short-circuits this makes those two variants produce identical traces
from identical seeds through the whole training loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .crane import MAX_DURATION, CraneEnv, GarbageSetting, RewardParams
from .gp import (
    KernelParams,
    SparseGPModel,
    WeightedDataset,
    fit_weighted,
    optimize_hyperparameters,
    select_pseudo_inputs,
)
from .policy import (
    ActionPolicy,
    DurationPolicy,
    ExtendedEpisode,
    RolloutLimits,
    StateScaler,
    rollout,
)

_EPISODE_TAG = 0
_IMPROVE_TAG = 1


def derive_seed(*path: int) -> int:
    """Collision-resistant integer seed from a root seed plus an index path."""
    return int(np.random.SeedSequence(list(path)).generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LearnerConfig:
    iterations: int = 100
    episodes_per_iteration: int = 10
    replay_window: int = 5
    num_pseudo_inputs: int = 5
    target_ess_fraction: float = 0.5
    sigma_f_init: float = 0.25
    sigma_g_init: float = 2.0
    exploration_decay: float = 0.97
    sigma_floor: float = 0.1
    epsilon_clip: float = 0.01
    tau_max: int = MAX_DURATION
    pinned_duration: int | None = None
    max_triggers: int = 30
    hyperopt_budget: int = 40
    action_prior_mean: float = 0.5
    duration_prior_mean: float = 0.0
    heuristic_init: bool = False

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.episodes_per_iteration < 2:
            raise ValueError("episodes_per_iteration must be at least 2")
        if self.replay_window < 1:
            raise ValueError("replay_window must be positive")
        if self.num_pseudo_inputs < 1:
            raise ValueError("num_pseudo_inputs must be positive")
        if not 0.0 < self.target_ess_fraction <= 1.0:
            raise ValueError("target_ess_fraction must lie in (0, 1]")
        if min(self.sigma_f_init, self.sigma_g_init, self.sigma_floor) <= 0.0:
            raise ValueError("exploration magnitudes must be positive")
        if not 0.0 < self.exploration_decay <= 1.0:
            raise ValueError("exploration_decay must lie in (0, 1]")
        if self.tau_max < 1:
            raise ValueError("tau_max must be at least 1")
        if self.pinned_duration is not None and not 1 <= self.pinned_duration <= self.tau_max:
            raise ValueError("pinned_duration must lie in [1, tau_max]")


@dataclass(frozen=True)
class TriggerSample:
    """One training example: a state where the policies were consulted."""

    state: float
    action: int
    duration: int
    episode_weight: float


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    mean_return: float
    std_return: float
    mean_episode_seconds: float


@dataclass(frozen=True)
class TrainResult:
    action_policy: ActionPolicy
    duration_policy: DurationPolicy
    stats: tuple[IterationStats, ...]


# ---------------------------------------------------------------------------
# episode weighting
# ---------------------------------------------------------------------------


def compute_weights(returns: Sequence[float], target_ess_fraction: float = 0.5) -> np.ndarray:
    """Exponentiated-advantage episode weights, normalized to sum one.

    The temperature is found by bisection so the effective sample size
    1 / sum(w^2) comes within one percent of ``target_ess_fraction`` times
    the number of episodes.  Equal returns give uniform weights; when the
    target is outside the achievable range the nearer endpoint is used.
    Weights depend on returns only through their differences.
    """
    r = np.asarray(returns, dtype=float).ravel()
    n = r.size
    if n == 0:
        raise ValueError("returns must be non-empty")
    if not np.all(np.isfinite(r)):
        raise ValueError("returns must be finite")
    if not 0.0 < target_ess_fraction <= 1.0:
        raise ValueError("target_ess_fraction must lie in (0, 1]")
    if n == 1 or float(np.ptp(r)) == 0.0:
        return np.full(n, 1.0 / n)

    shifted = r - r.max()
    target = max(1.0, target_ess_fraction * n)

    def weights_at(log_eta: float) -> np.ndarray:
        w = np.exp(shifted / math.exp(log_eta))
        return w / w.sum()

    def ess(w: np.ndarray) -> float:
        return 1.0 / float(w @ w)

    lo, hi = -20.0, 20.0
    w_hi = weights_at(hi)
    if ess(w_hi) <= target:
        return w_hi
    w_lo = weights_at(lo)
    if ess(w_lo) >= target:
        return w_lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        w = weights_at(mid)
        e = ess(w)
        if abs(e - target) <= 0.01 * target:
            return w
        if e < target:
            lo = mid
        else:
            hi = mid
    return weights_at(0.5 * (lo + hi))


# ---------------------------------------------------------------------------
# improvement step
# ---------------------------------------------------------------------------


HEURISTIC_INIT_WEIGHT = 25.0


def initial_policies(config: LearnerConfig) -> tuple[ActionPolicy, DurationPolicy]:
    """Prior-mean policies; optionally biased to grasp on an empty bucket.

    With ``heuristic_init`` the action model is conditioned on a single
    heavily weighted pseudo-observation (state 0, action 0), which pulls
    the scatter probability at zero weight down to its clamp while leaving
    far-away states near the prior.
    """
    kern = KernelParams(lengthscales=np.array([1.0]), signal_variance=1.0)
    anchor = np.array([[0.0]])
    action_gp = SparseGPModel.prior(
        anchor, config.action_prior_mean, config.sigma_f_init**2, kern
    )
    if config.heuristic_init:
        grasp_at_zero = WeightedDataset(
            anchor, np.array([0.0]), np.array([HEURISTIC_INIT_WEIGHT])
        )
        action_gp = fit_weighted(grasp_at_zero, action_gp)
    duration_gp = SparseGPModel.prior(
        anchor, config.duration_prior_mean, config.sigma_g_init**2, kern
    )
    return (
        ActionPolicy(action_gp, config.epsilon_clip, StateScaler.identity()),
        DurationPolicy(duration_gp, config.tau_max, StateScaler.identity(), config.pinned_duration),
    )


def extract_trigger_samples(
    episodes: Sequence[ExtendedEpisode], episode_weights: Sequence[float]
) -> list[TriggerSample]:
    """Flatten the pool: one sample per gate-1 step, tagged with its
    episode's weight.  Hold steps never become training data."""
    samples = []
    for ep, ep_weight in zip(episodes, episode_weights):
        for step in ep.trigger_steps():
            samples.append(
                TriggerSample(step.state, step.action, step.duration, float(ep_weight))
            )
    return samples


def improve_policies(
    episodes: Sequence[ExtendedEpisode],
    config: LearnerConfig,
    action_policy: ActionPolicy,
    duration_policy: DurationPolicy,
    sigma_f: float,
    sigma_g: float,
    seed: int,
    episode_weights: np.ndarray | None = None,
) -> tuple[ActionPolicy, DurationPolicy]:
    """One reward-weighted refit of both policies from pooled episodes.

    Trigger steps inherit their episode's weight, rescaled to mean one per
    episode so a uniformly weighted pool reduces to plain regression at the
    configured noise.  The incoming policies supply warm-start kernels; the
    duration policy is returned untouched when it never draws (pinned, or
    capped at one step).  ``episode_weights`` overrides the return-based
    weighting when given, which keeps zero-weight episodes exactly
    invisible to every stage (standardization, pseudo-input selection,
    fitting, and the kernel search all see them with weight zero).
    """
    if len(episodes) == 0:
        raise ValueError("at least one episode is required")
    if episode_weights is None:
        episode_weights = compute_weights(
            [ep.ret for ep in episodes], config.target_ess_fraction
        )
    else:
        episode_weights = np.asarray(episode_weights, dtype=float).ravel()
        if episode_weights.size != len(episodes):
            raise ValueError("one weight per episode is required")
        if np.any(episode_weights < 0.0) or episode_weights.sum() <= 0.0:
            raise ValueError("weights must be non-negative with positive sum")

    samples = extract_trigger_samples(episodes, episode_weights)
    states = np.asarray([s.state for s in samples], dtype=float)[:, None]
    actions = [float(s.action) for s in samples]
    durations = [float(s.duration) for s in samples]
    weights = [s.episode_weight for s in samples]
    # Rescale so episodes carrying weight have mean weight one; uniform
    # weighting then reduces to plain regression at the configured noise,
    # and the rescaling is unchanged by adding zero-weight episodes.
    positive = int(np.count_nonzero(episode_weights > 0.0))
    weights = np.asarray(weights, dtype=float) * (positive / episode_weights.sum())

    scaler = StateScaler.fit(states, weights)
    scaled = scaler.transform(states)
    pseudo = select_pseudo_inputs(
        scaled, weights, min(config.num_pseudo_inputs, len(scaled)), derive_seed(seed, 0)
    )

    def refit(kernel: KernelParams, prior_mean: float, noise: float, targets, sub: int):
        template = SparseGPModel.prior(pseudo, prior_mean, noise, kernel)
        data = WeightedDataset(scaled, np.asarray(targets), weights)
        fitted = fit_weighted(data, template)
        return optimize_hyperparameters(
            data,
            fitted,
            config.hyperopt_budget,
            seed=derive_seed(seed, sub),
            optimize_noise=False,
        )

    action_gp = refit(
        action_policy.gp.kernel, config.action_prior_mean, sigma_f**2, actions, 1
    )
    new_action = ActionPolicy(action_gp, config.epsilon_clip, scaler)

    if config.pinned_duration is not None or config.tau_max == 1:
        return new_action, duration_policy

    duration_gp = refit(
        duration_policy.gp.kernel, config.duration_prior_mean, sigma_g**2, durations, 2
    )
    return new_action, DurationPolicy(duration_gp, config.tau_max, scaler, None)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

IterationCallback = Callable[[int, ActionPolicy, DurationPolicy, IterationStats], None]
EpisodeCallback = Callable[[int, int, ExtendedEpisode], None]


def train(
    setting: GarbageSetting,
    config: LearnerConfig = LearnerConfig(),
    seed: int = 0,
    reward_params: RewardParams = RewardParams(),
    on_iteration: IterationCallback | None = None,
    on_episode: EpisodeCallback | None = None,
) -> TrainResult:
    """Run the full training loop for one seed.

    Every random draw is derived from ``seed`` with counter-based streams
    (one per episode, one per improvement step), so reruns are exactly
    reproducible and episode k of iteration t is unaffected by how many
    draws earlier episodes consumed.  ``on_iteration`` sees each batch's
    statistics together with the policies that produced the batch, before
    any improvement; the prior policies therefore appear at iteration zero.
    ``on_episode`` sees every sampled episode as it lands.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    action_policy, duration_policy = initial_policies(config)
    sigma_f = config.sigma_f_init
    sigma_g = config.sigma_g_init
    limits = RolloutLimits(config.max_triggers)
    replay: list[list[ExtendedEpisode]] = []
    stats: list[IterationStats] = []

    for iteration in range(config.iterations):
        batch = []
        for episode_index in range(config.episodes_per_iteration):
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, iteration, _EPISODE_TAG, episode_index])
            )
            episode = rollout(
                action_policy, duration_policy, CraneEnv(setting, reward_params), rng, limits
            )
            batch.append(episode)
            if on_episode is not None:
                on_episode(iteration, episode_index, episode)
        returns = np.array([ep.ret for ep in batch])
        seconds = np.array([ep.elapsed_seconds for ep in batch])
        record = IterationStats(
            iteration, float(returns.mean()), float(returns.std()), float(seconds.mean())
        )
        stats.append(record)
        if on_iteration is not None:
            on_iteration(iteration, action_policy, duration_policy, record)

        replay.append(batch)
        if len(replay) > config.replay_window:
            replay.pop(0)
        pooled = [ep for group in replay for ep in group]

        sigma_f = max(config.sigma_floor, sigma_f * config.exploration_decay)
        sigma_g = max(config.sigma_floor, sigma_g * config.exploration_decay)
        action_policy, duration_policy = improve_policies(
            pooled,
            config,
            action_policy,
            duration_policy,
            sigma_f,
            sigma_g,
            derive_seed(seed, iteration, _IMPROVE_TAG),
        )

    return TrainResult(action_policy, duration_policy, tuple(stats))


def train_gpps_fixed(
    setting: GarbageSetting,
    config: LearnerConfig,
    fixed_duration: int,
    seed: int = 0,
    reward_params: RewardParams = RewardParams(),
    on_iteration: IterationCallback | None = None,
) -> TrainResult:
    """Baseline: the same loop with every strategy held exactly
    ``fixed_duration`` steps, so only the action policy is learned."""
    pinned = replace(config, pinned_duration=fixed_duration)
    return train(setting, pinned, seed, reward_params, on_iteration)


def final_performance(stats: Sequence[IterationStats], window: int = 10) -> float:
    """Mean of the last ``window`` per-iteration mean returns."""
    if len(stats) == 0:
        raise ValueError("stats must be non-empty")
    tail = stats[-window:]
    return float(np.mean([s.mean_return for s in tail]))
