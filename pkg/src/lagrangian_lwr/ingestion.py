"""Probe and detector files, scenario configuration, probe labeling.

File formats::

    probes.csv    vehicle_id,time_s,position_m,speed_mps   (speed optional)
    detector.csv  time_s,cumulative_count

UTF-8, LF line endings, ``.`` as decimal separator.  A probe file may carry
``position_mi`` instead of ``position_m``; miles are converted with
1 mile = 1609.344 m relative to the configured origin postmile.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import yaml

from .conditions import SLOPE_CLAMP_EPS, TAU_DOM, InternalChain, chain_from_samples
from .errors import ConfigError, NoCrossing, NonMonotoneTimes, PreconditionViolated
from .fundamental_diagram import TriangularDiagram
from .reconstruction import TAU_COMPAT
from .transform import DEFAULT_DELTA, detector_condition

METERS_PER_MILE = 1609.344
PROBE_HEADER = ["vehicle_id", "time_s", "position_m", "speed_mps"]
DETECTOR_HEADER = ["time_s", "cumulative_count"]


@dataclass(frozen=True, eq=False)
class ProbeRecord:
    """One probe vehicle's samples, sorted by time."""

    vehicle_id: str
    time: np.ndarray
    position: np.ndarray
    speed: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.time, float)
        x = np.asarray(self.position, float)
        if t.ndim != 1 or t.shape != x.shape or len(t) == 0:
            raise PreconditionViolated(f"probe {self.vehicle_id}: time and position must be equal-length 1-d arrays")
        if np.any(np.diff(t) <= 0):
            raise NonMonotoneTimes(f"probe {self.vehicle_id}: times must be strictly increasing")
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "position", x)
        if self.speed is not None:
            v = np.asarray(self.speed, float)
            if v.shape != t.shape:
                raise PreconditionViolated(f"probe {self.vehicle_id}: speed length mismatch")
            object.__setattr__(self, "speed", v)

    def __len__(self):
        return len(self.time)

    def is_monotone(self, eps: float = SLOPE_CLAMP_EPS) -> bool:
        """Positions nondecreasing up to ``eps`` m/s of backward drift."""
        return bool(np.all(np.diff(self.position) >= -eps * np.diff(self.time)))

    def subset(self, idx) -> "ProbeRecord":
        idx = np.asarray(idx)
        sp = None if self.speed is None else self.speed[idx]
        return ProbeRecord(self.vehicle_id, self.time[idx], self.position[idx], sp)

    def window(self, x_min: float, x_max: float) -> "ProbeRecord":
        """Samples with ``x_min <= x <= x_max``."""
        keep = np.flatnonzero((self.position >= x_min) & (self.position <= x_max))
        if len(keep) == 0:
            raise PreconditionViolated(f"probe {self.vehicle_id} has no samples in [{x_min}, {x_max}]")
        return self.subset(keep)


@dataclass(frozen=True, eq=False)
class DetectorRecord:
    """Cumulative counts at a fixed position."""

    time: np.ndarray
    cumulative_count: np.ndarray
    position: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.time, float)
        c = np.asarray(self.cumulative_count, float)
        if t.ndim != 1 or t.shape != c.shape or len(t) < 2:
            raise PreconditionViolated("detector needs at least two (time, count) rows")
        if np.any(np.diff(t) <= 0):
            raise NonMonotoneTimes("detector times must be strictly increasing")
        if np.any(np.diff(c) < 0):
            raise PreconditionViolated("cumulative counts must be nondecreasing")
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "cumulative_count", c)
        object.__setattr__(self, "position", float(self.position))

    def count_at(self, t):
        return np.interp(t, self.time, self.cumulative_count)

    def to_chain(self) -> InternalChain:
        return detector_condition(self.time, self.cumulative_count, self.position)


# -- configuration -------------------------------------------------------------

_DEFAULTS = {
    "domain": {"T": None, "N1": 0.0, "N2": None},
    "diagram": {"v_max": 31.5, "rho_max": 0.5, "rho_star": 1.0 / 18.15},
    "grid": {"nt": 121, "nn": 201, "workers": 1},
    "probes": {
        "sampling_interval": 30.0,
        "raw_period": 4.0,
        "units": "meters",
        "origin_postmile": 0.0,
        "clamp_eps": SLOPE_CLAMP_EPS,
    },
    "detector": {"position": 0.0},
    "road": {"x_from": 0.0, "x_to": None},
    "tolerances": {"tau_dom": TAU_DOM, "tau_compat": TAU_COMPAT, "delta": DEFAULT_DELTA},
    "holdout": [],
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a run needs besides the data files.

    YAML layout (all keys optional except ``domain.T`` and ``domain.N2``)::

        domain:     {T: 3600, N1: 0, N2: 5000}
        diagram:    {v_max: 31.5, rho_max: 0.5, rho_star: 0.0551}   # or k instead of v_max
        grid:       {nt: 121, nn: 201, workers: 1}
        probes:     {sampling_interval: 30, raw_period: 4, units: meters,
                     origin_postmile: 0.0, clamp_eps: 0.01}
        detector:   {position: 0.0}
        road:       {x_from: 0.0, x_to: 5553.0}
        tolerances: {tau_dom: 1.0e-6, tau_compat: 0.5, delta: 1.0e-4}
        holdout:    [vehicle ids excluded from the conditions]
    """

    T: float
    N1: float
    N2: float
    diagram: TriangularDiagram
    nt: int = 121
    nn: int = 201
    workers: int = 1
    sampling_interval: float = 30.0
    raw_period: float = 4.0
    units: str = "meters"
    origin_postmile: float = 0.0
    clamp_eps: float = SLOPE_CLAMP_EPS
    detector_position: float = 0.0
    x_from: float = 0.0
    x_to: Optional[float] = None
    tau_dom: float = TAU_DOM
    tau_compat: float = TAU_COMPAT
    delta: float = DEFAULT_DELTA
    holdout: tuple = ()

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError(f"domain.T must be positive, got {self.T}")
        if not (self.N2 > self.N1 >= 0):
            raise ConfigError(f"need N2 > N1 >= 0, got N1={self.N1}, N2={self.N2}")
        if self.sampling_interval < self.raw_period:
            raise ConfigError("probes.sampling_interval must be at least probes.raw_period")
        if self.units not in ("meters", "miles"):
            raise ConfigError(f"probes.units must be 'meters' or 'miles', got {self.units!r}")
        if self.nt < 3 or self.nn < 2:
            raise ConfigError("grid needs nt >= 3 and nn >= 2")

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        raw = raw or {}
        unknown = set(raw) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown configuration sections: {sorted(unknown)}")
        sec = {}
        for name, default in _DEFAULTS.items():
            if isinstance(default, dict):
                given = raw.get(name) or {}
                extra = set(given) - set(default) - ({"k"} if name == "diagram" else set())
                if extra:
                    raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")
                sec[name] = {**default, **given}
            else:
                sec[name] = raw.get(name, default)
        dom = sec["domain"]
        if dom["T"] is None or dom["N2"] is None:
            raise ConfigError("domain.T and domain.N2 are required")
        dg = dict(sec["diagram"])
        if "k" in (raw.get("diagram") or {}) and "v_max" not in (raw.get("diagram") or {}):
            dg["v_max"] = None
        try:
            diagram = TriangularDiagram(rho_max=dg["rho_max"], rho_star=dg["rho_star"], v_max=dg.get("v_max"), k=dg.get("k"))
        except Exception as exc:
            raise ConfigError(f"invalid diagram: {exc}") from exc
        pr, tol, grid, road = sec["probes"], sec["tolerances"], sec["grid"], sec["road"]
        return cls(
            T=float(dom["T"]),
            N1=float(dom["N1"]),
            N2=float(dom["N2"]),
            diagram=diagram,
            nt=int(grid["nt"]),
            nn=int(grid["nn"]),
            workers=int(grid["workers"]),
            sampling_interval=float(pr["sampling_interval"]),
            raw_period=float(pr["raw_period"]),
            units=str(pr["units"]),
            origin_postmile=float(pr["origin_postmile"]),
            clamp_eps=float(pr["clamp_eps"]),
            detector_position=float(sec["detector"]["position"]),
            x_from=float(road["x_from"]),
            x_to=None if road["x_to"] is None else float(road["x_to"]),
            tau_dom=float(tol["tau_dom"]),
            tau_compat=float(tol["tau_compat"]),
            delta=float(tol["delta"]),
            holdout=tuple(str(h) for h in sec["holdout"] or ()),
        )

    def to_dict(self) -> dict:
        return {
            "domain": {"T": self.T, "N1": self.N1, "N2": self.N2},
            "diagram": {"v_max": self.diagram.v_max, "rho_max": self.diagram.rho_max, "rho_star": self.diagram.rho_star},
            "grid": {"nt": self.nt, "nn": self.nn, "workers": self.workers},
            "probes": {
                "sampling_interval": self.sampling_interval,
                "raw_period": self.raw_period,
                "units": self.units,
                "origin_postmile": self.origin_postmile,
                "clamp_eps": self.clamp_eps,
            },
            "detector": {"position": self.detector_position},
            "road": {"x_from": self.x_from, "x_to": self.x_to},
            "tolerances": {"tau_dom": self.tau_dom, "tau_compat": self.tau_compat, "delta": self.delta},
            "holdout": list(self.holdout),
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def load_config(path) -> ScenarioConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return ScenarioConfig.from_dict(raw)


def save_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")


# -- files ---------------------------------------------------------------------


def read_probes(path, units: str = "meters", origin_postmile: float = 0.0) -> List[ProbeRecord]:
    """Probes sorted by vehicle id; rows of each vehicle sorted by time."""
    rows: Dict[str, list] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "position_mi" in cols:
            pos_col, units = "position_mi", "miles"
        elif "position_m" in cols:
            pos_col = "position_m"
        else:
            raise ConfigError(f"{path}: probe header needs position_m or position_mi, got {cols}")
        for need in ("vehicle_id", "time_s"):
            if need not in cols:
                raise ConfigError(f"{path}: probe header is missing {need}")
        has_speed = "speed_mps" in cols
        for row in reader:
            sp = row.get("speed_mps") if has_speed else None
            rows[row["vehicle_id"]].append(
                (float(row["time_s"]), float(row[pos_col]), float(sp) if sp not in (None, "") else np.nan)
            )
    out = []
    for vid in sorted(rows):
        arr = np.array(sorted(rows[vid]), float)
        x = arr[:, 1]
        if units == "miles":
            x = (x - origin_postmile) * METERS_PER_MILE
        speed = arr[:, 2] if has_speed and np.all(np.isfinite(arr[:, 2])) else None
        out.append(ProbeRecord(vid, arr[:, 0], x, speed))
    return out


def write_probes(probes: Iterable[ProbeRecord], path) -> None:
    probes = sorted(probes, key=lambda p: p.vehicle_id)
    with_speed = all(p.speed is not None for p in probes) and bool(probes)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROBE_HEADER if with_speed else PROBE_HEADER[:3])
        for p in probes:
            for i in range(len(p)):
                row = [p.vehicle_id, repr(float(p.time[i])), repr(float(p.position[i]))]
                if with_speed:
                    row.append(repr(float(p.speed[i])))
                w.writerow(row)


def read_detector(path, position: float = 0.0) -> DetectorRecord:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DETECTOR_HEADER:
            raise ConfigError(f"{path}: detector header must be {','.join(DETECTOR_HEADER)}, got {header}")
        data = np.array([[float(a), float(b)] for a, b in reader], float)
    if data.ndim != 2 or len(data) < 2:
        raise PreconditionViolated(f"{path}: need at least two detector rows")
    order = np.argsort(data[:, 0], kind="stable")
    return DetectorRecord(data[order, 0], data[order, 1], position)


def write_detector(det: DetectorRecord, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTOR_HEADER)
        for t, c in zip(det.time, det.cumulative_count):
            w.writerow([repr(float(t)), repr(float(c))])


# -- processing ----------------------------------------------------------------


def crossing_time(probe: ProbeRecord, position: float) -> float:
    """First time the probe reaches ``position`` (linear between samples)."""
    x = probe.position
    hit = np.flatnonzero(x >= position)
    if len(hit) == 0 or (hit[0] == 0 and x[0] > position):
        raise NoCrossing(f"probe {probe.vehicle_id} does not pass x={position}")
    i = hit[0]
    if i == 0:
        return float(probe.time[0])
    x0, x1 = x[i - 1], x[i]
    t0, t1 = probe.time[i - 1], probe.time[i]
    return float(t0 + (position - x0) / (x1 - x0) * (t1 - t0))


def label_probes(probes: Sequence[ProbeRecord], detector: DetectorRecord, detector_position: Optional[float] = None) -> Dict[str, float]:
    """Label = detector count interpolated at each probe's crossing time."""
    pos = detector.position if detector_position is None else float(detector_position)
    out = {}
    for p in probes:
        tc = crossing_time(p, pos)
        if tc < detector.time[0] or tc > detector.time[-1]:
            raise NoCrossing(f"probe {p.vehicle_id} crosses at t={tc:.3f}, outside the detector record")
        out[p.vehicle_id] = float(detector.count_at(tc))
    return dict(sorted(out.items()))


def downsample(probe: ProbeRecord, interval: float) -> ProbeRecord:
    """First sample, the sample nearest each ``t0 + m * interval``, and the last sample."""
    if not interval > 0:
        raise PreconditionViolated("interval must be positive")
    t = probe.time
    targets = np.arange(t[0], t[-1] + 1e-9 * max(1.0, abs(t[-1])), interval)
    pos = np.clip(np.searchsorted(t, targets), 1, len(t) - 1)
    left = pos - 1
    nearest = np.where(targets - t[left] <= t[pos] - targets, left, pos)
    keep = np.unique(np.concatenate([[0], nearest, [len(t) - 1]]))
    return probe.subset(keep)


def probe_chain(probe: ProbeRecord, label: float, eps: float = SLOPE_CLAMP_EPS) -> InternalChain:
    return chain_from_samples(label, np.column_stack([probe.time, probe.position]), eps=eps)


def build_conditions(
    cfg: ScenarioConfig,
    probes: Sequence[ProbeRecord],
    detector: DetectorRecord,
    labels: Optional[Dict[str, float]] = None,
):
    """Detector chain plus one chain per non-held-out probe.

    Probe samples are restricted to the road ``[x_from, x_to]`` and then
    downsampled to ``cfg.sampling_interval``.  Returns
    ``(conditions, labels, used_ids)``.
    """
    if labels is None:
        labels = label_probes(probes, detector)
    hold = set(cfg.holdout)
    x_to = np.inf if cfg.x_to is None else cfg.x_to
    conds = [detector.to_chain()]
    used = []
    for p in sorted(probes, key=lambda p: p.vehicle_id):
        if p.vehicle_id in hold:
            continue
        onroad = p.window(cfg.x_from, x_to)
        if len(onroad) < 2:
            continue
        ds = downsample(onroad, cfg.sampling_interval)
        conds.append(probe_chain(ds, labels[p.vehicle_id], eps=cfg.clamp_eps))
        used.append(p.vehicle_id)
    return conds, labels, used
