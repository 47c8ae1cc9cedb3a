"""Products derived from a solved field: trajectories, velocities, travel times, audits."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable

import numpy as np

from .conditions import eval_condition
from .errors import EmptyTrajectory, PositionNotReached
from .solver import SolutionField, evaluate_grid, write_matrix_csv

TAU_COMPAT = 0.5  # m


@dataclass(frozen=True, eq=False)
class Trajectory:
    label: float
    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, float)
        x = np.asarray(self.x, float)
        if t.shape != x.shape or t.ndim != 1:
            raise ValueError("t and x must be 1-d arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)

    def is_monotone(self, tol: float = 1e-6) -> bool:
        return bool(np.all(np.diff(self.x) >= -tol))

    def position_at(self, t):
        return np.interp(t, self.t, self.x, left=np.nan, right=np.nan)

    def crossing_time(self, x: float, leaving: bool = False) -> float:
        """Time the trajectory first reaches ``x`` (or first moves past it with ``leaving``).

        A vehicle that waits exactly at ``x`` therefore arrives at the start of
        the wait and leaves at its end.
        """
        hit = self.x > x if leaving else self.x >= x
        idx = np.flatnonzero(hit)
        if len(idx) == 0 or idx[0] == 0:
            raise PositionNotReached(f"label {self.label} never crosses x={x} inside the sampled window")
        i = idx[0]
        x0, x1 = self.x[i - 1], self.x[i]
        t0, t1 = self.t[i - 1], self.t[i]
        return float(t0 + (x - x0) / (x1 - x0) * (t1 - t0))


@dataclass(frozen=True, eq=False)
class VelocityField:
    t: np.ndarray
    n: np.ndarray
    v: np.ndarray  # clamped to [0, v_max]; NaN where X is unknown
    raw: np.ndarray  # before clamping
    v_max: float

    @property
    def overshoot(self) -> float:
        """Largest distance of a raw value outside ``[0, v_max]``."""
        raw = self.raw[np.isfinite(self.raw)]
        if raw.size == 0:
            return 0.0
        return float(max(0.0, -raw.min(), raw.max() - self.v_max))

    def metadata(self) -> dict:
        finite = np.isfinite(self.raw)
        return {
            "stencil": "central differences in t (one-sided at edges)",
            "clamped_to": [0.0, self.v_max],
            "clamped_cells": int(np.sum(finite & ((self.raw < 0) | (self.raw > self.v_max)))),
            "max_overshoot": self.overshoot,
            "missing_cells": int(np.sum(~finite)),
        }


def extract_trajectory(field: SolutionField, n: float, t_samples) -> Trajectory:
    """``X(., n)`` along ``t_samples``; unreached samples are dropped."""
    t_samples = np.asarray(t_samples, float)
    x = field.values(t_samples, np.full_like(t_samples, float(n)))
    keep = np.isfinite(x)
    if not keep.any():
        raise EmptyTrajectory(f"label {n} is not reached by any condition")
    return Trajectory(label=float(n), t=t_samples[keep], x=x[keep])


def velocity_field(
    field: SolutionField,
    nt: int = 0,
    nn: int = 0,
    t=None,
    n=None,
    workers: int = 1,
) -> VelocityField:
    """Differentiate ``X`` in time on a grid (uniform over the domain unless axes are given)."""
    grid = evaluate_grid(field, nt, nn, workers=workers, t=t, n=n)
    if len(grid.t) < 3:
        raise ValueError("need at least 3 time samples")
    X = np.where(np.isfinite(grid.values), grid.values, np.nan)
    raw = np.gradient(X, grid.t, axis=0, edge_order=1)
    v = np.clip(raw, 0.0, field.diagram.v_max)
    return VelocityField(t=grid.t, n=grid.n, v=v, raw=raw, v_max=field.diagram.v_max)


def travel_time(field: SolutionField, n: float, x_from: float, x_to: float, dt: float = 1.0, t_samples=None) -> float:
    """Time label ``n`` takes to go from ``x_from`` to ``x_to``."""
    if not x_from < x_to:
        raise ValueError("x_from must be smaller than x_to")
    if t_samples is None:
        t_samples = np.arange(0.0, field.T + 0.5 * dt, dt)
        t_samples = t_samples[t_samples <= field.T]
    traj = extract_trajectory(field, n, t_samples)
    return trajectory_travel_time(traj, x_from, x_to)


def trajectory_travel_time(traj: Trajectory, x_from: float, x_to: float) -> float:
    return traj.crossing_time(x_to) - traj.crossing_time(x_from, leaving=True)


def compatibility_audit(field: SolutionField, samples_per_piece: int = 25, tau_compat: float = TAU_COMPAT) -> dict:
    """Compare every condition with the fused solution on its own support.

    The gap ``C - X`` is nonnegative for an episolution; a condition is
    flagged as incompatible where the gap exceeds ``tau_compat``.
    """
    lam = np.linspace(0.0, 1.0, samples_per_piece)
    report: Dict[str, object] = {"tau_compat": tau_compat, "conditions": []}
    worst = 0.0
    min_gap = np.inf
    for i, c in enumerate(field.conditions):
        ts, ns = [], []
        for ta, na, _, tb, nb, _ in c.segments():
            ts.append(ta + lam * (tb - ta))
            ns.append(na + lam * (nb - na))
        t = np.concatenate(ts)
        n = np.concatenate(ns)
        C = eval_condition(c, t, n, field.tau_dom)
        X = field.values(t, n)
        gap = C - X
        flagged = gap > tau_compat
        entry = {
            "index": i,
            "type": type(c).__name__,
            "max_gap": float(gap.max()),
            "min_gap": float(gap.min()),
            "flagged_points": int(flagged.sum()),
            "incompatible": bool(flagged.any()),
            "examples": [[float(a), float(b), float(g)] for a, b, g in zip(t[flagged][:5], n[flagged][:5], gap[flagged][:5])],
        }
        report["conditions"].append(entry)
        worst = max(worst, entry["max_gap"])
        min_gap = min(min_gap, entry["min_gap"])
    report["max_gap"] = worst
    report["min_gap"] = float(min_gap)
    report["incompatible_conditions"] = [e["index"] for e in report["conditions"] if e["incompatible"]]
    report["compatible"] = not report["incompatible_conditions"]
    return report


def write_trajectories_csv(trajectories: Iterable[Trajectory], path) -> None:
    """Rows ``n, t, x`` sorted by label then time."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "t", "x"])
        for tr in sorted(trajectories, key=lambda tr: tr.label):
            for t, x in zip(tr.t, tr.x):
                w.writerow([repr(tr.label), repr(float(t)), repr(float(x))])


def write_velocity_csv(vf: VelocityField, path) -> None:
    write_matrix_csv(vf.t, vf.n, vf.v, path)


def write_audit_json(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
