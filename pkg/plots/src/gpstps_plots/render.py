"""The two figures: learning-curve bands and policy curves.

Both functions are pure readers: they take file paths, draw, save, and
return the Figure. Data lines are always drawn before reference lines so
`axes.lines[0]` is the curve itself. With fixed matplotlib settings a rerun
writes identical image bytes.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .inputs import CurveSeries, load_policy_dump, read_curve

DPI = 120


@dataclass(frozen=True)
class PlotSpec:
    """A plotting job: input files, one output image, optional labels."""

    inputs: tuple[Path, ...]
    output: Path
    labels: tuple[str, ...] = field(default_factory=tuple)

    def validate(self) -> None:
        if not self.inputs:
            raise ValueError("plot spec has no inputs")
        for path in self.inputs:
            if not Path(path).exists():
                raise ValueError(f"{path}: input does not exist")


def _load_aligned(curves: Mapping[str, Sequence[str | Path]]) -> dict[str, list[CurveSeries]]:
    if not curves:
        raise ValueError("no methods to plot")
    series: dict[str, list[CurveSeries]] = {}
    reference: CurveSeries | None = None
    for method, paths in curves.items():
        if not paths:
            raise ValueError(f"method '{method}' has no curve files")
        loaded = [read_curve(p) for p in paths]
        for one in loaded:
            if reference is None:
                reference = one
            elif not np.array_equal(one.iterations, reference.iterations):
                raise ValueError(
                    f"iteration mismatch: {one.path} has {len(one.iterations)} rows "
                    f"({one.iterations[0]}..{one.iterations[-1]}), "
                    f"{reference.path} has {len(reference.iterations)}"
                )
        series[method] = loaded
    return series


def plot_learning_curves(curves: Mapping[str, Sequence[str | Path]], out: str | Path):
    """One mean line plus a std band per method, all seeds pooled per method."""
    series = _load_aligned(curves)
    fig, ax = plt.subplots(figsize=(8.0, 5.0), dpi=DPI)
    for method, loaded in series.items():
        stack = np.vstack([s.mean_return for s in loaded])
        mean = stack.mean(axis=0)
        std = stack.std(axis=0)
        iters = loaded[0].iterations
        (line,) = ax.plot(iters, mean, label=method, linewidth=1.6)
        ax.fill_between(iters, mean - std, mean + std, color=line.get_color(), alpha=0.18)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean return")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(out)
    return fig


def plot_policy(dump: str | Path, out: str | Path):
    """Action probability and duration mean±std over the dumped state grid."""
    doc = load_policy_dump(dump)
    grid = doc["grid"]
    state = np.asarray(grid["state"], dtype=float)
    prob = np.asarray(grid["action_prob"], dtype=float)
    dmean = np.asarray(grid["duration_mean"], dtype=float)
    dstd = np.asarray(grid["duration_std"], dtype=float)
    tau_max = doc["duration"]["tau_max"]

    fig, (ax_a, ax_d) = plt.subplots(
        2, 1, figsize=(7.0, 6.5), dpi=DPI, sharex=True
    )
    ax_a.plot(state, prob, color="tab:blue", linewidth=1.8)
    ax_a.axhline(0.5, color="gray", linewidth=0.8, linestyle="--")
    ax_a.set_ylim(-0.03, 1.03)
    ax_a.set_ylabel("P(scatter)")
    ax_a.grid(alpha=0.3)

    ax_d.plot(state, dmean, color="tab:red", linewidth=1.8)
    ax_d.fill_between(state, dmean - dstd, dmean + dstd, color="tab:red", alpha=0.18)
    for level in range(1, tau_max + 1):
        ax_d.axhline(level, color="gray", linewidth=0.6, linestyle=":")
    ax_d.set_ylabel("duration (steps)")
    ax_d.set_xlabel("observed weight")
    ax_d.grid(alpha=0.3)

    pinned = doc["duration"].get("pinned")
    title = f"policy at iteration {doc.get('iteration', '?')}"
    if pinned is not None:
        title += f" (duration pinned to {pinned})"
    ax_a.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(out)
    return fig
