"""Synthetic scenarios with known ground truth.

Every scenario is built the same way: a free-flowing platoon is laid out at
``t = 0`` upstream of a detector at ``x = 0`` so that it reaches the detector
with a prescribed demand profile, the first vehicle drives at ``v_max``, and a
few slow vehicles (internal conditions) create congestion on the road
``[0, L]``.  The solved field is the ground truth.  Probes are sampled from
it every 3 to 4 s and the detector reports cumulative counts every 30 s.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .conditions import InitialCondition, InternalChain, InternalCondition, UpstreamCondition, dump_manifest
from .errors import PositionNotReached, UnknownScenario
from .fundamental_diagram import TriangularDiagram, mobile_century_diagram
from .ingestion import (
    DetectorRecord,
    ProbeRecord,
    ScenarioConfig,
    build_conditions,
    save_config,
    write_detector,
    write_probes,
)
from .reconstruction import extract_trajectory, trajectory_travel_time
from .solver import SolutionField

SCENARIOS = ("free-flow", "standing-queue", "moving-congestion-band")

# (label, distance from the detector where the vehicle starts slowing, [(speed m/s, distance m), ...])
_SLOW_VEHICLES = {
    "free-flow": [],
    "standing-queue": [(300.0, 1500.0, [(0.0, 120.0)])],  # speed 0: second entry is a duration in s
    "moving-congestion-band": [
        (900.0, 1200.0, [(10.0, 1800.0), (20.0, 1200.0)]),
        (2500.0, 1500.0, [(8.0, 1600.0), (18.0, 1400.0)]),
        (4100.0, 1000.0, [(11.0, 2000.0), (22.0, 1500.0)]),
    ],
}


@dataclass(frozen=True)
class SyntheticSpec:
    scenario: str
    seed: int = 0
    T: float = 3600.0
    N2: float = 5000.0
    road_length: float = 5553.0
    n_probes: int = 97
    penetration: Optional[float] = None  # overrides n_probes when set
    train_fraction: float = 0.45
    sampling_interval: float = 30.0
    raw_period: Tuple[float, float] = (3.0, 4.0)
    detector_interval: float = 30.0
    margin: float = 300.0  # probes are recorded from -margin to road_length + margin
    demand: Tuple[float, float, float] = (1.42, 0.13, 2400.0)  # mean, amplitude, period of the arrival rate

    @classmethod
    def default(cls, scenario: str, **overrides) -> "SyntheticSpec":
        if scenario not in SCENARIOS:
            raise UnknownScenario(scenario)
        base = {
            "free-flow": dict(T=600.0, N2=500.0, road_length=2000.0, n_probes=12, demand=(1.0, 0.0, 600.0)),
            "standing-queue": dict(T=900.0, N2=800.0, road_length=3000.0, n_probes=20, demand=(1.0, 0.1, 900.0)),
            "moving-congestion-band": {},
        }[scenario]
        return replace(cls(scenario=scenario, **base), **overrides)

    @property
    def probe_count(self) -> int:
        if self.penetration is not None:
            return max(2, int(round(self.penetration * self.N2)))
        return self.n_probes


@dataclass(eq=False)
class SyntheticDataset:
    spec: SyntheticSpec
    diagram: TriangularDiagram
    conditions: list
    field: SolutionField
    probes: List[ProbeRecord]
    detector: DetectorRecord
    true_labels: Dict[str, float]
    training_ids: List[str]
    holdout_ids: List[str]
    config: ScenarioConfig
    slow_vehicle_queues: List[dict]


def _arrival_profile(spec: SyntheticSpec, d: TriangularDiagram):
    """Free-flow initial platoon: arrival rate piecewise constant on detector bins."""
    mean, amp, period = spec.demand
    edges = np.arange(0.0, 2 * spec.T + spec.detector_interval, spec.detector_interval)
    mid = 0.5 * (edges[:-1] + edges[1:])
    q = np.clip(mean + amp * np.sin(2 * np.pi * mid / period), 0.05, 0.98 * d.capacity)
    counts = np.concatenate([[0.0], np.cumsum(q * np.diff(edges))])
    stop = int(np.searchsorted(counts, spec.N2))
    if stop >= len(counts):
        raise ValueError("demand too low to fit N2 vehicles")
    labels = counts[: stop + 1].copy()
    labels[-1] = spec.N2
    spacings = d.v_max / q[:stop]
    return InitialCondition(t0=0.0, anchor_x=0.0, labels=labels, spacings=spacings)


def _slow_vehicle(d: TriangularDiagram, base: SolutionField, label: float, x_start: float, phases, T: float) -> InternalChain:
    """Chain for a vehicle that leaves free flow at ``x_start`` and runs the given phases, then ``v_max``."""
    # time at which the label reaches x_start in the base (free) field
    lo, hi = 0.0, T
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if base.values(mid, label) < x_start:
            lo = mid
        else:
            hi = mid
    t, x = hi, float(base.values(hi, label))
    pts = [(t, x)]
    for speed, amount in phases:
        if speed == 0.0:
            t += amount
        else:
            t += amount / speed
            x += amount
        if t >= T:
            break
        pts.append((t, x))
    if t < T:
        pts.append((T, x + d.v_max * (T - t)))
    else:
        t_prev, x_prev = pts[-1]
        pts.append((T, x_prev + speed * (T - t_prev)))
    segs = []
    for (ta, xa), (tb, xb) in zip(pts, pts[1:]):
        segs.append(InternalCondition(beta=xa, alpha=(xb - xa) / (tb - ta), t_min=ta, t_max=tb, n_min=label, r=0.0))
    return InternalChain(tuple(segs))


def _label_at(field: SolutionField, t, x: float, lo: float, hi: float, iters: int = 60):
    """Largest label with ``X(t, n) >= x`` by bisection (``X`` decreases in ``n``)."""
    t = np.atleast_1d(np.asarray(t, float))
    a = np.full_like(t, lo)
    b = np.full_like(t, hi)
    for _ in range(iters):
        m = 0.5 * (a + b)
        ahead = field.values(t, m) >= x
        a = np.where(ahead, m, a)
        b = np.where(ahead, b, m)
    return a


def generate_synthetic(spec) -> SyntheticDataset:
    """Build conditions, ground truth, probe and detector records for a named scenario."""
    if isinstance(spec, str):
        spec = SyntheticSpec.default(spec)
    if spec.scenario not in SCENARIOS:
        raise UnknownScenario(spec.scenario)
    rng = np.random.default_rng(spec.seed)
    d = mobile_century_diagram()
    T, N2, L = spec.T, spec.N2, spec.road_length

    initial = _arrival_profile(spec, d)
    leader = UpstreamCondition(label=0.0, anchor_x=0.0, times=[0.0, T], speeds=[d.v_max])
    base = SolutionField(d, [initial, leader], T, 0.0, N2)
    slow = []
    queues = []
    for frac_label, x_start, phases in _SLOW_VEHICLES[spec.scenario]:
        label = frac_label * N2 / 5000.0 if spec.scenario == "moving-congestion-band" else frac_label
        chain = _slow_vehicle(d, base, label, x_start, phases, T)
        slow.append(chain)
        stopped = [(s.t_min, s.t_max, s.beta) for s in chain if s.alpha == 0.0]
        queues.append({"label": label, "x_start": x_start, "stops": stopped})
    conditions = [initial, leader] + slow
    truth = SolutionField(d, conditions, T, 0.0, N2)

    # detector at x = 0
    det_t = np.arange(0.0, T + 0.5 * spec.detector_interval, spec.detector_interval)
    det_t = det_t[det_t <= T]
    counts = _label_at(truth, det_t, 0.0, 0.0, N2)
    counts[0] = 0.0
    counts = np.maximum.accumulate(counts)
    detector = DetectorRecord(det_t, counts, 0.0)

    # probes: labels that finish the road (plus margin) inside the horizon
    n_last = float(_label_at(truth, [T], L + spec.margin, 0.0, N2)[0])
    n_first = min(20.0, 0.05 * n_last)
    count = spec.probe_count
    true_labels_sorted = np.sort(rng.uniform(n_first, n_last, size=count))
    ids = [f"v{i:03d}" for i in rng.permutation(count)]
    probes = []
    true_labels = {}
    for vid, n in zip(ids, true_labels_sorted):
        lo_p, hi_p = spec.raw_period
        start = rng.uniform(0.0, hi_p)
        steps = rng.uniform(lo_p, hi_p, size=int(T / lo_p) + 2)
        t = start + np.concatenate([[0.0], np.cumsum(steps)])
        t = t[t <= T]
        x = truth.values(t, np.full_like(t, n))
        keep = np.isfinite(x) & (x >= -spec.margin) & (x <= L + spec.margin)
        probes.append(ProbeRecord(vid, t[keep], x[keep], None))
        true_labels[vid] = float(n)
    probes.sort(key=lambda p: p.vehicle_id)

    order = sorted(ids)
    perm = rng.permutation(len(order))
    n_train = int(round(spec.train_fraction * count))
    training = sorted(order[i] for i in perm[:n_train])
    holdout = sorted(order[i] for i in perm[n_train:])

    cfg = ScenarioConfig(
        T=T,
        N1=0.0,
        N2=N2,
        diagram=d,
        nt=int(T / 30.0) + 1,
        nn=201,
        sampling_interval=spec.sampling_interval,
        raw_period=spec.raw_period[1],
        detector_position=0.0,
        x_from=0.0,
        x_to=L,
        holdout=tuple(holdout),
    )
    return SyntheticDataset(
        spec=spec,
        diagram=d,
        conditions=conditions,
        field=truth,
        probes=probes,
        detector=detector,
        true_labels=dict(sorted(true_labels.items())),
        training_ids=training,
        holdout_ids=holdout,
        config=cfg,
        slow_vehicle_queues=queues,
    )


def write_dataset(ds: SyntheticDataset, outdir) -> dict:
    """Write probes, detector, config and ground truth; returns the file map."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "probes": out / "probes.csv",
        "detector": out / "detector.csv",
        "config": out / "config.yaml",
        "truth_conditions": out / "truth_conditions.json",
        "truth_labels": out / "truth_labels.json",
    }
    write_probes(ds.probes, files["probes"])
    write_detector(ds.detector, files["detector"])
    save_config(ds.config, files["config"])
    spec = asdict(ds.spec)
    dump_manifest(
        ds.conditions,
        files["truth_conditions"],
        diagram=ds.diagram.to_dict(),
        domain={"T": ds.field.T, "N1": ds.field.N1, "N2": ds.field.N2},
        spec=spec,
    )
    files["truth_labels"].write_text(
        json.dumps(
            {"labels": ds.true_labels, "training": ds.training_ids, "holdout": ds.holdout_ids},
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return {k: str(v) for k, v in files.items()}


def estimate_from_dataset(ds: SyntheticDataset):
    """Estimator field from the detector and the training probes only."""
    cfg = ds.config
    conds, labels, used = build_conditions(cfg, ds.probes, ds.detector)
    est = SolutionField(cfg.diagram, conds, cfg.T, cfg.N1, cfg.N2, cfg.tau_dom)
    return est, labels, used


def holdout_report(
    ds: SyntheticDataset,
    estimate: SolutionField,
    labels: Dict[str, float],
    rms_tol: float = 50.0,
    tt_rel_tol: float = 0.10,
    dt: float = 1.0,
) -> dict:
    """Per held-out vehicle: position RMS on the road and travel-time error over ``[0, L]``."""
    L = ds.config.x_to
    t_grid = np.arange(0.0, ds.spec.T + 0.5 * dt, dt)
    t_grid = t_grid[t_grid <= ds.spec.T]
    rows = []
    probes = {p.vehicle_id: p for p in ds.probes}
    for vid in ds.holdout_ids:
        p = probes[vid]
        on = (p.position >= 0.0) & (p.position <= L)
        x_est = estimate.values(p.time[on], np.full(on.sum(), labels[vid]))
        err = x_est - p.position[on]
        rms = float(np.sqrt(np.mean(err**2))) if np.all(np.isfinite(err)) else float("inf")
        truth_traj = extract_trajectory(ds.field, ds.true_labels[vid], t_grid)
        tt_true = trajectory_travel_time(truth_traj, 0.0, L)
        try:
            tt_est = trajectory_travel_time(extract_trajectory(estimate, labels[vid], t_grid), 0.0, L)
        except PositionNotReached:
            tt_est = float("inf")
        rel = abs(tt_est - tt_true) / tt_true
        rows.append(
            {
                "vehicle_id": vid,
                "label_true": ds.true_labels[vid],
                "label_est": labels[vid],
                "rms_m": rms,
                "travel_time_true_s": tt_true,
                "travel_time_est_s": tt_est,
                "travel_time_abs_err_s": abs(tt_est - tt_true),
                "travel_time_rel_err": rel,
                "pass": bool(rms <= rms_tol and rel <= tt_rel_tol),
            }
        )
    passed = sum(r["pass"] for r in rows)
    rel = np.array([r["travel_time_rel_err"] for r in rows])
    rms = np.array([r["rms_m"] for r in rows])
    return {
        "vehicles": rows,
        "n_holdout": len(rows),
        "n_pass": passed,
        "pass_fraction": passed / max(1, len(rows)),
        "rms_tol_m": rms_tol,
        "travel_time_rel_tol": tt_rel_tol,
        "rms_quantiles_m": {q: float(np.quantile(rms, float(q))) for q in ("0.5", "0.9", "1.0")} if len(rows) else {},
        "travel_time_rel_err_quantiles": {q: float(np.quantile(rel, float(q))) for q in ("0.5", "0.9", "1.0")} if len(rows) else {},
    }
