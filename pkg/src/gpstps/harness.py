"""Experiment runner: seeded sweeps of training methods over one garbage
setting, with CSV/JSON artifacts and a paired comparison of final returns.

A sweep is described by a flat JSON configuration in which every constant
of the simulation and the learner appears explicitly.  Each (method, seed)
pair trains independently and writes its own directory, so runs fan out to
a worker pool without write contention; the aggregate summary, the report,
and all per-run files are byte-stable across reruns and worker counts.

Output layout, relative to the configured output directory::

    config.json                     resolved configuration echo
    summary.csv                     one aggregate row per method
    report.json                     finals, pairwise tests, best method
    <method>/seedNNN/curve.csv      one row per training iteration
    <method>/seedNNN/policy_iterNNN.json   periodic policy snapshots
    <method>/seedNNN/policy_final.json     snapshot after the last update
    <method>/seedNNN/episodes.csv   per-step trace (only with trace on)
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
import os
import re
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import t as student_t

from .crane import GarbageSetting, RewardParams, setting_by_name
from .learner import (
    IterationStats,
    LearnerConfig,
    final_performance,
    train,
)
from .policy import policy_dump

WORKERS_ENV_VAR = "GPSTPS_WORKERS"

CURVE_HEADER = ["iteration", "mean_return", "std_return", "mean_episode_seconds"]
SUMMARY_HEADER = ["method", "num_seeds", "mean_final", "std_final", "mean_wall_seconds"]
TRACE_HEADER = [
    "iteration",
    "episode",
    "step",
    "state",
    "action",
    "duration",
    "gate",
    "reward",
    "elapsed_seconds",
]

_GPPS_PATTERN = re.compile(r"gpps_fixed_([1-9]\d*)")


def parse_method(name: str) -> int | None:
    """Return the pinned duration for a fixed-duration method, None for the
    self-triggered learner; anything else is rejected by name."""
    if name == "gpstps":
        return None
    match = _GPPS_PATTERN.fullmatch(name)
    if match:
        return int(match.group(1))
    raise ValueError(f"unknown method '{name}' (expected 'gpstps' or 'gpps_fixed_<k>')")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    setting: str
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    output_dir: str
    learner: LearnerConfig
    noise_std: float = 0.7
    alpha: float = 1.5
    beta: float = 0.004
    u_min: float = 30.0
    dump_every: int = 10
    final_window: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        setting_by_name(self.setting)
        if not self.methods:
            raise ValueError("methods must not be empty")
        for name in self.methods:
            pinned = parse_method(name)
            if pinned is not None and pinned > self.learner.tau_max:
                raise ValueError(f"method '{name}' exceeds tau_max={self.learner.tau_max}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must be distinct")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        if not self.output_dir:
            raise ValueError("output_dir must be non-empty")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be non-negative")
        if self.dump_every < 1:
            raise ValueError("dump_every must be positive")
        if self.final_window < 1:
            raise ValueError("final_window must be positive")

    def garbage_setting(self) -> GarbageSetting:
        return replace(setting_by_name(self.setting), noise_std=self.noise_std)

    def reward_params(self) -> RewardParams:
        return RewardParams(alpha=self.alpha, beta=self.beta, u_min=self.u_min)


_LEARNER_KEYS = tuple(f.name for f in fields(LearnerConfig) if f.name != "pinned_duration")
_TOP_KEYS = ("setting", "methods", "seeds", "output_dir", "noise_std", "alpha", "beta",
             "u_min", "dump_every", "final_window")


def default_config(setting: str = "setting1", output_dir: str | None = None) -> ExperimentConfig:
    return ExperimentConfig(
        setting=setting,
        methods=("gpstps",) + tuple(f"gpps_fixed_{k}" for k in range(1, 7)),
        seeds=tuple(range(10)),
        output_dir=output_dir if output_dir is not None else f"runs/{setting}",
        learner=LearnerConfig(),
    )


def config_to_dict(config: ExperimentConfig) -> dict:
    doc = {
        "setting": config.setting,
        "methods": list(config.methods),
        "seeds": list(config.seeds),
        "output_dir": config.output_dir,
        "noise_std": config.noise_std,
        "alpha": config.alpha,
        "beta": config.beta,
        "u_min": config.u_min,
        "dump_every": config.dump_every,
        "final_window": config.final_window,
    }
    for key in _LEARNER_KEYS:
        doc[key] = getattr(config.learner, key)
    return doc


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build a configuration from a flat mapping; unknown keys are rejected
    by name and missing keys take their defaults."""
    known = set(_TOP_KEYS) | set(_LEARNER_KEYS)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
    base = config_to_dict(default_config())
    merged = {**base, **doc}
    learner = LearnerConfig(**{key: merged[key] for key in _LEARNER_KEYS})
    return ExperimentConfig(
        setting=merged["setting"],
        methods=tuple(merged["methods"]),
        seeds=tuple(merged["seeds"]),
        output_dir=merged["output_dir"],
        learner=learner,
        noise_std=merged["noise_std"],
        alpha=merged["alpha"],
        beta=merged["beta"],
        u_min=merged["u_min"],
        dump_every=merged["dump_every"],
        final_window=merged["final_window"],
    )


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    _write_json(path, config_to_dict(config))


def _write_json(path: str | Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# per-run artifacts
# ---------------------------------------------------------------------------


def write_curve(path: str | Path, stats: Sequence[IterationStats]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for st in stats:
            writer.writerow(
                [st.iteration, st.mean_return, st.std_return, st.mean_episode_seconds]
            )


def read_curve(path: str | Path) -> list[IterationStats]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CURVE_HEADER:
            raise ValueError(f"unexpected curve header in {path}: {reader.fieldnames}")
        for row in reader:
            out.append(
                IterationStats(
                    iteration=int(row["iteration"]),
                    mean_return=float(row["mean_return"]),
                    std_return=float(row["std_return"]),
                    mean_episode_seconds=float(row["mean_episode_seconds"]),
                )
            )
    return out


def write_summary(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for row in rows:
            writer.writerow([row[key] for key in SUMMARY_HEADER])


def read_summary(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_HEADER:
            raise ValueError(f"unexpected summary header in {path}: {reader.fieldnames}")
        for row in reader:
            out.append(
                {
                    "method": row["method"],
                    "num_seeds": int(row["num_seeds"]),
                    "mean_final": float(row["mean_final"]),
                    "std_final": float(row["std_final"]),
                    "mean_wall_seconds": float(row["mean_wall_seconds"]),
                }
            )
    return out


def read_episode_trace(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_HEADER:
            raise ValueError(f"unexpected trace header in {path}: {reader.fieldnames}")
        for row in reader:
            out.append(
                {
                    "iteration": int(row["iteration"]),
                    "episode": int(row["episode"]),
                    "step": int(row["step"]),
                    "state": float(row["state"]),
                    "action": int(row["action"]),
                    "duration": int(row["duration"]),
                    "gate": int(row["gate"]),
                    "reward": float(row["reward"]),
                    "elapsed_seconds": float(row["elapsed_seconds"]),
                }
            )
    return out


def load_report(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def run_dir(config: ExperimentConfig, method: str, seed: int) -> Path:
    return Path(config.output_dir) / method / f"seed{seed:03d}"


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired t statistic and p-value with n-1 degrees of freedom.

    Zero variance of the differences is degenerate: identical means give
    (0, 1), a constant nonzero difference gives (signed infinity, 0).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("paired samples must be equal-length 1-d with at least 2 entries")
    diff = a - b
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t_stat = mean / (sd / math.sqrt(diff.size))
    p = 2.0 * float(student_t.sf(abs(t_stat), diff.size - 1))
    return t_stat, p


# ---------------------------------------------------------------------------
# the sweep
# ---------------------------------------------------------------------------


def _run_job(job: tuple[ExperimentConfig, str, int, bool]) -> dict:
    config, method, seed, trace = job
    started = time.perf_counter()
    try:
        learner_config = replace(config.learner, pinned_duration=parse_method(method))
        directory = run_dir(config, method, seed)
        directory.mkdir(parents=True, exist_ok=True)

        def dump_snapshot(iteration, action_policy, duration_policy, _stats):
            if iteration % config.dump_every == 0:
                doc = policy_dump(action_policy, duration_policy, iteration)
                _write_json(directory / f"policy_iter{iteration:03d}.json", doc)

        trace_file = None
        trace_writer = None
        on_episode = None
        if trace:
            trace_file = open(directory / "episodes.csv", "w", encoding="utf-8", newline="")
            trace_writer = csv.writer(trace_file)
            trace_writer.writerow(TRACE_HEADER)

            def on_episode(iteration, episode, ep):
                for step_index, st in enumerate(ep.steps):
                    trace_writer.writerow(
                        [iteration, episode, step_index, st.state, st.action,
                         st.duration, st.gate, st.reward, st.elapsed_seconds]
                    )

        try:
            result = train(
                config.garbage_setting(),
                learner_config,
                seed=seed,
                reward_params=config.reward_params(),
                on_iteration=dump_snapshot,
                on_episode=on_episode,
            )
        finally:
            if trace_file is not None:
                trace_file.close()

        write_curve(directory / "curve.csv", result.stats)
        final_doc = policy_dump(
            result.action_policy, result.duration_policy, learner_config.iterations
        )
        _write_json(directory / "policy_final.json", final_doc)
        final = final_performance(result.stats, config.final_window)
    except Exception as exc:
        raise RuntimeError(f"run failed: method={method} seed={seed}") from exc
    return {
        "method": method,
        "seed": seed,
        "final_return": float(final),
        "wall_seconds": time.perf_counter() - started,
    }


def _worker_count(workers: int | None, num_jobs: int) -> int:
    if workers is None:
        raw = os.environ.get(WORKERS_ENV_VAR, "").strip()
        workers = int(raw) if raw else 1
    if workers < 1:
        raise ValueError("worker count must be positive")
    return min(workers, num_jobs)


def build_report(config: ExperimentConfig, rows: Sequence[dict]) -> dict:
    by_method: dict[str, list[float]] = {m: [] for m in config.methods}
    walls: dict[str, list[float]] = {m: [] for m in config.methods}
    for row in rows:
        by_method[row["method"]].append(row["final_return"])
        walls[row["method"]].append(row["wall_seconds"])
    methods_doc = {}
    for method in config.methods:
        finals = by_method[method]
        methods_doc[method] = {
            "finals": finals,
            "mean_final": float(np.mean(finals)),
            "std_final": float(np.std(finals)),
            "mean_wall_seconds": float(np.mean(walls[method])),
        }
    comparisons = []
    for i, first in enumerate(config.methods):
        for second in config.methods[i + 1 :]:
            if len(config.seeds) < 2:
                break
            t_stat, p = paired_t_test(by_method[first], by_method[second])
            comparisons.append(
                {
                    "a": first,
                    "b": second,
                    "mean_diff": float(np.mean(by_method[first]) - np.mean(by_method[second])),
                    "t": t_stat,
                    "p": p,
                }
            )
    best = max(config.methods, key=lambda m: methods_doc[m]["mean_final"])
    return {
        "setting": config.setting,
        "seeds": list(config.seeds),
        "final_window": config.final_window,
        "methods": methods_doc,
        "comparisons": comparisons,
        "best_method": best,
        "config": config_to_dict(config),
    }


def recompute_report(output_dir: str | Path) -> dict:
    """Rebuild the comparison report from the files in an output directory,
    reading every run's curve back instead of trusting report.json."""
    out = Path(output_dir)
    config = load_config(out / "config.json")
    walls: dict[str, float] = {}
    summary_path = out / "summary.csv"
    if summary_path.exists():
        for row in read_summary(summary_path):
            walls[row["method"]] = row["mean_wall_seconds"]
    rows = []
    for method in config.methods:
        for seed in config.seeds:
            stats = read_curve(out / method / f"seed{seed:03d}" / "curve.csv")
            rows.append(
                {
                    "method": method,
                    "seed": seed,
                    "final_return": final_performance(stats, config.final_window),
                    "wall_seconds": walls.get(method, 0.0),
                }
            )
    return build_report(config, rows)


def run_experiment(
    config: ExperimentConfig, workers: int | None = None, trace: bool = False
) -> dict:
    """Train every (method, seed) pair, write all artifacts, and return the
    comparison report.  A failure in any single run aborts the sweep with
    that run named in the error."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.json")

    jobs = [(config, method, seed, trace) for method in config.methods for seed in config.seeds]
    count = _worker_count(workers, len(jobs))
    if count == 1:
        rows = [_run_job(job) for job in jobs]
    else:
        with multiprocessing.Pool(processes=count) as pool:
            rows = pool.map(_run_job, jobs)

    summary_rows = []
    report = build_report(config, rows)
    for method in config.methods:
        doc = report["methods"][method]
        summary_rows.append(
            {
                "method": method,
                "num_seeds": len(config.seeds),
                "mean_final": doc["mean_final"],
                "std_final": doc["std_final"],
                "mean_wall_seconds": doc["mean_wall_seconds"],
            }
        )
    write_summary(out / "summary.csv", summary_rows)
    _write_json(out / "report.json", report)
    return report
