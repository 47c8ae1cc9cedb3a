"""Piecewise-affine value conditions in Lagrangian coordinates ``(t, n)``.

Four families are supported:

* :class:`InitialCondition` -- positions of a range of labels at one time ``t0``;
* :class:`UpstreamCondition` -- trajectory of the first label ``N1``;
* :class:`DownstreamCondition` -- trajectory of the last label ``N2``;
* :class:`InternalCondition` -- an affine datum along a segment
  ``n = n_min + r (t - t_min)``; a probe trajectory is an
  :class:`InternalChain` of such segments with ``r = 0``.

A condition evaluates to a position on its support and to ``+inf`` elsewhere.
Offsets are derived from an explicit anchor position by a continuity
recursion, so adjacent pieces agree at shared breakpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Tuple, Union

import numpy as np

from .errors import (
    InvalidCondition,
    NegativeSpacing,
    NegativeSpeed,
    NonMonotoneLabels,
    NonMonotoneTimes,
)

TAU_DOM = 1e-6  # veh; label tolerance for support membership
TIME_TOL = 1e-9  # s
SLOPE_CLAMP_EPS = 0.01  # m/s; GPS jitter below this is clamped to zero speed

Segment = Tuple[float, float, float, float, float, float]  # (t_a, n_a, x_a, t_b, n_b, x_b)


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


def _check_increasing(values: np.ndarray, exc, what: str):
    if values.ndim != 1 or len(values) < 2:
        raise exc(f"need at least two {what}")
    if np.any(np.diff(values) <= 0):
        raise exc(f"{what} must be strictly increasing")
    if not np.all(np.isfinite(values)):
        raise exc(f"{what} must be finite")


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """Positions ``-s_j n + d_j`` for ``n`` in ``[n_j, n_{j+1}]`` at time ``t0``."""

    t0: float
    anchor_x: float
    labels: np.ndarray
    spacings: np.ndarray
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        labels = _frozen_array(self.labels)
        spacings = _frozen_array(self.spacings)
        _check_increasing(labels, NonMonotoneLabels, "labels")
        if len(spacings) != len(labels) - 1:
            raise InvalidCondition("need exactly one spacing per label interval")
        if np.any(spacings < 0):
            raise NegativeSpacing("spacings must be nonnegative")
        d = np.empty_like(spacings)
        d[0] = self.anchor_x + spacings[0] * labels[0]
        for j in range(1, len(spacings)):
            d[j] = d[j - 1] + (spacings[j] - spacings[j - 1]) * labels[j]
        d.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacings", spacings)
        object.__setattr__(self, "offsets", d)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "anchor_x", float(self.anchor_x))

    @property
    def n_pieces(self) -> int:
        return len(self.spacings)

    def value(self, n):
        """Position of label ``n`` at ``t0`` (affine extension outside the range)."""
        n = np.asarray(n, dtype=float)
        j = np.clip(np.searchsorted(self.labels, n, side="right") - 1, 0, self.n_pieces - 1)
        return -self.spacings[j] * n + self.offsets[j]

    def segments(self) -> List[Segment]:
        out = []
        for j in range(self.n_pieces):
            na, nb = self.labels[j], self.labels[j + 1]
            s, d = self.spacings[j], self.offsets[j]
            out.append((self.t0, na, -s * na + d, self.t0, nb, -s * nb + d))
        return out


@dataclass(frozen=True, eq=False)
class _BoundaryCondition:
    label: float
    anchor_x: float
    times: np.ndarray
    speeds: np.ndarray
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        times = _frozen_array(self.times)
        speeds = _frozen_array(self.speeds)
        _check_increasing(times, NonMonotoneTimes, "times")
        if len(speeds) != len(times) - 1:
            raise InvalidCondition("need exactly one speed per time interval")
        if np.any(speeds < 0):
            raise NegativeSpeed("speeds must be nonnegative")
        b = np.empty_like(speeds)
        b[0] = self.anchor_x - speeds[0] * times[0]
        for j in range(1, len(speeds)):
            b[j] = b[j - 1] + (speeds[j - 1] - speeds[j]) * times[j]
        b.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "offsets", b)
        object.__setattr__(self, "label", float(self.label))
        object.__setattr__(self, "anchor_x", float(self.anchor_x))

    @property
    def n_pieces(self) -> int:
        return len(self.speeds)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        j = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.n_pieces - 1)
        return self.speeds[j] * t + self.offsets[j]

    def segments(self) -> List[Segment]:
        out = []
        for j in range(self.n_pieces):
            ta, tb = self.times[j], self.times[j + 1]
            v, b = self.speeds[j], self.offsets[j]
            out.append((ta, self.label, v * ta + b, tb, self.label, v * tb + b))
        return out


class UpstreamCondition(_BoundaryCondition):
    """Trajectory ``v^j t + b^j`` of the first vehicle, label ``N1``."""


class DownstreamCondition(_BoundaryCondition):
    """Trajectory ``v_j t + b_j`` of the last vehicle, label ``N2``."""


@dataclass(frozen=True)
class InternalCondition:
    """Datum ``beta + alpha (t - t_min)`` on ``n = n_min + r (t - t_min)``."""

    beta: float
    alpha: float
    t_min: float
    t_max: float
    n_min: float
    r: float = 0.0

    def __post_init__(self):
        for name in ("beta", "alpha", "t_min", "t_max", "n_min", "r"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.t_min < self.t_max:
            raise NonMonotoneTimes(f"t_min={self.t_min} must be < t_max={self.t_max}")
        if self.alpha < 0:
            raise NegativeSpeed(f"alpha={self.alpha} must be nonnegative")
        if self.r < 0:
            raise InvalidCondition(f"label rate r={self.r} must be nonnegative")

    @property
    def n_max(self) -> float:
        return self.n_min + self.r * (self.t_max - self.t_min)

    @property
    def x_end(self) -> float:
        return self.beta + self.alpha * (self.t_max - self.t_min)

    def segments(self) -> List[Segment]:
        return [(self.t_min, self.n_min, self.beta, self.t_max, self.n_max, self.x_end)]


@dataclass(frozen=True)
class InternalChain:
    """Ordered internal segments joined end to end (label and value)."""

    segments_: Tuple[InternalCondition, ...]

    def __post_init__(self):
        segs = tuple(self.segments_)
        if not segs:
            raise InvalidCondition("a chain needs at least one segment")
        for a, b in zip(segs, segs[1:]):
            scale = max(1.0, abs(a.x_end), abs(a.n_max))
            if (
                abs(a.t_max - b.t_min) > TIME_TOL * max(1.0, abs(a.t_max))
                or abs(a.n_max - b.n_min) > 1e-9 * scale
                or abs(a.x_end - b.beta) > 1e-9 * scale
            ):
                raise InvalidCondition("chain segments are not continuous end to end")
        object.__setattr__(self, "segments_", segs)

    def __iter__(self):
        return iter(self.segments_)

    def __len__(self):
        return len(self.segments_)

    def __getitem__(self, i):
        return self.segments_[i]

    @property
    def t_min(self) -> float:
        return self.segments_[0].t_min

    @property
    def t_max(self) -> float:
        return self.segments_[-1].t_max

    def segments(self) -> List[Segment]:
        return [s for seg in self.segments_ for s in seg.segments()]


ValueCondition = Union[InitialCondition, UpstreamCondition, DownstreamCondition, InternalCondition, InternalChain]


def build_initial(t0, anchor_x, labels, spacings) -> InitialCondition:
    return InitialCondition(t0=t0, anchor_x=anchor_x, labels=labels, spacings=spacings)


def build_upstream(N1, anchor_x, times, speeds) -> UpstreamCondition:
    return UpstreamCondition(label=N1, anchor_x=anchor_x, times=times, speeds=speeds)


def build_downstream(N2, anchor_x, times, speeds) -> DownstreamCondition:
    return DownstreamCondition(label=N2, anchor_x=anchor_x, times=times, speeds=speeds)


def chain_from_samples(n, samples, rates=None, eps=SLOPE_CLAMP_EPS) -> InternalChain:
    """Turn sampled ``(t, x)`` points into an internal chain.

    With ``rates`` omitted every segment keeps label ``n`` (``r = 0``), which is
    the probe-vehicle case.  Otherwise ``rates`` gives one label rate per
    segment and the label advances accordingly.  Slopes in ``(-eps, 0)`` are
    clamped to zero; steeper negative slopes raise :class:`NegativeSpeed`.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise InvalidCondition("need at least two (t, x) samples")
    t, x = pts[:, 0], pts[:, 1]
    _check_increasing(t, NonMonotoneTimes, "sample times")
    if rates is None:
        rates = np.zeros(len(t) - 1)
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (len(t) - 1,):
        raise InvalidCondition("need one label rate per segment")

    segs = []
    label = float(n)
    beta = x[0]
    for i in range(len(t) - 1):
        dt = t[i + 1] - t[i]
        alpha = (x[i + 1] - beta) / dt
        if alpha < 0:
            if alpha < -eps:
                raise NegativeSpeed(f"segment {i} has slope {alpha:.4g} m/s")
            alpha = 0.0
        seg = InternalCondition(beta=beta, alpha=alpha, t_min=t[i], t_max=t[i + 1], n_min=label, r=rates[i])
        segs.append(seg)
        # carry the realised end point so the chain stays exactly continuous
        label = seg.n_max
        beta = seg.x_end
    return InternalChain(tuple(segs))


def _on_interval(v, lo, hi, tol):
    return (v >= lo - tol) & (v <= hi + tol)


def eval_condition(c: ValueCondition, t, n, tau_dom: float = TAU_DOM):
    """Value of ``c`` at ``(t, n)``; ``+inf`` off the support.  Broadcasts."""
    t = np.asarray(t, dtype=float)
    n = np.asarray(n, dtype=float)
    t, n = np.broadcast_arrays(t, n)
    if isinstance(c, InitialCondition):
        on = (np.abs(t - c.t0) <= TIME_TOL * max(1.0, abs(c.t0))) & _on_interval(
            n, c.labels[0], c.labels[-1], tau_dom
        )
        out = np.where(on, c.value(n), np.inf)
    elif isinstance(c, _BoundaryCondition):
        on = (np.abs(n - c.label) <= tau_dom) & _on_interval(t, c.times[0], c.times[-1], TIME_TOL * max(1.0, abs(c.times[-1])))
        out = np.where(on, c.value(t), np.inf)
    elif isinstance(c, InternalCondition):
        on = _on_interval(t, c.t_min, c.t_max, TIME_TOL * max(1.0, abs(c.t_max))) & (
            np.abs(n - (c.n_min + c.r * (t - c.t_min))) <= tau_dom
        )
        out = np.where(on, c.beta + c.alpha * (t - c.t_min), np.inf)
    elif isinstance(c, InternalChain):
        out = np.full(t.shape, np.inf)
        for seg in c:
            out = np.minimum(out, eval_condition(seg, t, n, tau_dom))
    else:
        raise TypeError(f"not a value condition: {type(c).__name__}")
    return float(out) if out.ndim == 0 else out


def condition_segments(c: ValueCondition) -> List[Segment]:
    return c.segments()


# -- JSON manifest -----------------------------------------------------------


def condition_to_dict(c: ValueCondition) -> dict:
    if isinstance(c, InitialCondition):
        return {
            "type": "initial",
            "t0": c.t0,
            "anchor_x": c.anchor_x,
            "labels": c.labels.tolist(),
            "spacings": c.spacings.tolist(),
        }
    if isinstance(c, _BoundaryCondition):
        return {
            "type": "upstream" if isinstance(c, UpstreamCondition) else "downstream",
            "label": c.label,
            "anchor_x": c.anchor_x,
            "times": c.times.tolist(),
            "speeds": c.speeds.tolist(),
        }
    if isinstance(c, InternalCondition):
        return {
            "type": "internal",
            "beta": c.beta,
            "alpha": c.alpha,
            "t_min": c.t_min,
            "t_max": c.t_max,
            "n_min": c.n_min,
            "n_max": c.n_max,
            "r": c.r,
        }
    if isinstance(c, InternalChain):
        return {"type": "chain", "segments": [condition_to_dict(s) for s in c]}
    raise TypeError(f"not a value condition: {type(c).__name__}")


def condition_from_dict(data: dict) -> ValueCondition:
    kind = data.get("type")
    if kind == "initial":
        return build_initial(data["t0"], data["anchor_x"], data["labels"], data["spacings"])
    if kind == "upstream":
        return build_upstream(data["label"], data["anchor_x"], data["times"], data["speeds"])
    if kind == "downstream":
        return build_downstream(data["label"], data["anchor_x"], data["times"], data["speeds"])
    if kind == "internal":
        seg = InternalCondition(
            beta=data["beta"],
            alpha=data["alpha"],
            t_min=data["t_min"],
            t_max=data["t_max"],
            n_min=data["n_min"],
            r=data.get("r", 0.0),
        )
        if "n_max" in data and abs(seg.n_max - data["n_max"]) > 1e-6 * max(1.0, abs(seg.n_max)):
            raise InvalidCondition("n_max inconsistent with n_min + r (t_max - t_min)")
        return seg
    if kind == "chain":
        return InternalChain(tuple(condition_from_dict(s) for s in data["segments"]))
    raise InvalidCondition(f"unknown condition type {kind!r}")


def dump_manifest(conditions: Iterable[ValueCondition], path, **extra) -> None:
    doc = dict(extra)
    doc["conditions"] = [condition_to_dict(c) for c in conditions]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_manifest(path) -> Tuple[List[ValueCondition], dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    conditions = [condition_from_dict(c) for c in doc.pop("conditions")]
    return conditions, doc
