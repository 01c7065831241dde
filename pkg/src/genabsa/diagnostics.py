"""Training-dynamics diagnostics: per-layer normalized weight updates and loss curves."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ShapeMismatch, TooFewSnapshots

EPS = 1e-12
UPDATE_DEFINITION = (
    "per layer: cumulative sum over steps i>=1 of ||w_i - w_{i-1}||_2 / max(||w_0||_2, 1e-12)"
)
ALIGNMENT_RULE = "nearest recorded step at or below the requested step (first record if none)"


@dataclass(frozen=True)
class LayerUpdateSeries:
    layer: str
    values: tuple[float, ...]


def mean_normalized_update(snapshots: Sequence[Mapping[str, np.ndarray]]) -> dict[str, LayerUpdateSeries]:
    """Cumulative normalized update of every layer, one value per step after the first snapshot.

    Snapshot 0 is the pre-training state. For step ``i`` the layer moved by
    ``||w_i - w_{i-1}|| / ||w_0||`` and the series accumulates those moves.
    Ratios of L2 norms are used instead of elementwise ratios, which blow up on
    weights initialised at (or near) zero.
    """
    if len(snapshots) < 2:
        raise TooFewSnapshots(f"need at least 2 snapshots, got {len(snapshots)}")
    keys = list(snapshots[0])
    flat = []
    for n, snap in enumerate(snapshots):
        if set(snap) != set(keys):
            raise ShapeMismatch(f"snapshot {n} has layers {sorted(snap)}, expected {sorted(keys)}")
        flat.append({k: np.asarray(snap[k], dtype=np.float64).ravel() for k in keys})
        for k in keys:
            if flat[n][k].shape != flat[0][k].shape:
                raise ShapeMismatch(f"layer {k!r}: shape {flat[n][k].shape} in snapshot {n}, {flat[0][k].shape} in snapshot 0")

    out = {}
    for k in keys:
        base = max(float(np.linalg.norm(flat[0][k])), EPS)
        steps = [float(np.linalg.norm(flat[i][k] - flat[i - 1][k])) / base for i in range(1, len(flat))]
        out[k] = LayerUpdateSeries(k, tuple(np.cumsum(steps).tolist()))
    return out


def series_mean_std(runs: Sequence[Mapping[str, LayerUpdateSeries]]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-layer mean and population std across seeds (for banded plots)."""
    if not runs:
        raise TooFewSnapshots("no runs to aggregate")
    out = {}
    for k in runs[0]:
        arr = np.array([r[k].values for r in runs], dtype=np.float64)
        out[k] = (arr.mean(axis=0), arr.std(axis=0))
    return out


def write_update_csv(series: Mapping[str, LayerUpdateSeries], path: str | Path, steps: Sequence[int] | None = None) -> None:
    layers = list(series)
    n = len(next(iter(series.values())).values) if series else 0
    steps = list(steps) if steps is not None else list(range(1, n + 1))
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["step", *layers])
        for i, step in enumerate(steps):
            w.writerow([step, *(series[l].values[i] for l in layers)])


def convergence_table(trace, eval_points: Sequence[int] | None = None) -> list[dict]:
    """Loss-trace rows at the requested steps.

    Each requested step maps to the nearest recorded step at or below it
    (the first record when the request precedes every record). With no
    requested steps the full trace is returned.
    """
    records = list(trace)
    if not records:
        raise ValueError("empty loss trace")
    rows = []
    if not eval_points:
        for r in records:
            rows.append({"requested_step": r.step, **r.as_row()})
        return rows
    steps = [r.step for r in records]
    for want in eval_points:
        idx = int(np.searchsorted(steps, want, side="right")) - 1
        r = records[max(idx, 0)]
        rows.append({"requested_step": want, **r.as_row()})
    return rows


class UpdateTracker:
    """Streaming version of :func:`mean_normalized_update`.

    Accepts ``(step, snapshot)`` tuples through :meth:`append`, so it can be
    handed to a backend in place of a snapshot list. Only the first and the
    previous snapshot are kept in memory.
    """

    def __init__(self) -> None:
        self.steps: list[int] = []
        self._base: dict[str, float] = {}
        self._prev: dict[str, np.ndarray] | None = None
        self._values: dict[str, list[float]] = {}

    def append(self, item: tuple[int, Mapping[str, np.ndarray]]) -> None:
        step, snap = item
        cur = {k: np.asarray(v, dtype=np.float64).ravel() for k, v in snap.items()}
        if self._prev is None:
            self._base = {k: max(float(np.linalg.norm(v)), EPS) for k, v in cur.items()}
            self._values = {k: [] for k in cur}
        else:
            if set(cur) != set(self._prev):
                raise ShapeMismatch(f"snapshot at step {step} has layers {sorted(cur)}, expected {sorted(self._prev)}")
            for k, v in cur.items():
                if v.shape != self._prev[k].shape:
                    raise ShapeMismatch(f"layer {k!r}: shape {v.shape} at step {step}, {self._prev[k].shape} before")
                moved = float(np.linalg.norm(v - self._prev[k])) / self._base[k]
                series = self._values[k]
                series.append((series[-1] if series else 0.0) + moved)
            self.steps.append(step)
        self._prev = cur

    def series(self) -> dict[str, LayerUpdateSeries]:
        if not self.steps:
            raise TooFewSnapshots("need at least 2 snapshots")
        return {k: LayerUpdateSeries(k, tuple(v)) for k, v in self._values.items()}
