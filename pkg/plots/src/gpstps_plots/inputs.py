"""Readers for the sweep output files.

Everything here works from the documented file formats alone: curve.csv
(`iteration, mean_return, std_return, mean_episode_seconds`) and the policy
snapshot JSON with its evaluation grid. Parsing problems surface as
ValueError naming the offending file.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CURVE_HEADER = ["iteration", "mean_return", "std_return", "mean_episode_seconds"]

_SEED_DIR = re.compile(r"seed\d{3,}$")
_GRID_KEYS = ("state", "action_prob", "duration_mean", "duration_std")


@dataclass(frozen=True)
class CurveSeries:
    """One run's learning curve: per-iteration mean return."""

    path: Path
    iterations: np.ndarray
    mean_return: np.ndarray


def read_curve(path: str | Path) -> CurveSeries:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CURVE_HEADER:
        raise ValueError(f"{path}: not a curve file (header {rows[0] if rows else 'missing'})")
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: no data rows")
    try:
        iterations = np.array([int(r[0]) for r in body])
        mean_return = np.array([float(r[1]) for r in body])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from exc
    return CurveSeries(path=path, iterations=iterations, mean_return=mean_return)


def _method_sort_key(name: str) -> tuple:
    # gpstps leads; fixed-duration baselines follow in numeric order
    trailing = re.search(r"(\d+)$", name)
    return (name != "gpstps", name if trailing is None else name[: trailing.start()],
            int(trailing.group(1)) if trailing else -1)


def discover_runs(root: str | Path) -> dict[str, list[Path]]:
    """Map method name -> per-seed curve.csv paths under a sweep directory."""
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"{root}: not a directory")
    found: dict[str, list[Path]] = {}
    for method_dir in sorted(root.iterdir()):
        if not method_dir.is_dir():
            continue
        curves = sorted(
            child / "curve.csv"
            for child in method_dir.iterdir()
            if child.is_dir() and _SEED_DIR.match(child.name) and (child / "curve.csv").exists()
        )
        if curves:
            found[method_dir.name] = curves
    if not found:
        raise ValueError(f"{root}: no <method>/seedNNN/curve.csv runs found")
    return dict(sorted(found.items(), key=lambda kv: _method_sort_key(kv[0])))


def load_policy_dump(path: str | Path) -> dict:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    for key in ("action", "duration", "grid"):
        if key not in doc:
            raise ValueError(f"{path}: policy dump missing key '{key}'")
    grid = doc["grid"]
    for key in _GRID_KEYS:
        if key not in grid:
            raise ValueError(f"{path}: grid missing key '{key}'")
    lengths = {key: len(grid[key]) for key in _GRID_KEYS}
    if len(set(lengths.values())) != 1 or lengths["state"] == 0:
        raise ValueError(f"{path}: grid arrays empty or mismatched ({lengths})")
    tau_max = doc["duration"].get("tau_max")
    if not isinstance(tau_max, int) or tau_max < 1:
        raise ValueError(f"{path}: duration.tau_max missing or invalid")
    return doc
