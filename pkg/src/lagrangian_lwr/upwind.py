"""Finite-difference reference solver for the spacing conservation law.

Differentiating ``X_t = psi(-X_n)`` in ``n`` gives ``s_t + (psi(s))_n = 0``
for the spacing ``s = -X_n``.  Since ``psi`` is nondecreasing, information
only travels toward larger labels and Godunov's scheme is plain upwinding::

    s_i <- s_i - (dt / dn) * (psi(s_i) - psi(s_{i-1}))

Cell 0 is a ghost cell fed by the leader's speed, cell ``M + 1`` copies the
last interior cell.  Positions are recovered by summing spacings from the
leader's trajectory.  The solver is deliberately unrelated to the closed-form
formulas so that the two can be compared.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .conditions import InitialCondition, UpstreamCondition
from .errors import CFLViolation, PreconditionViolated, SpacingBelowJam
from .fundamental_diagram import TriangularDiagram, congested_inverse

CFL_TOL = 1e-12


def _flux(d: TriangularDiagram, s):
    # psi without the jam check; the check lives in UpwindState
    return np.minimum(d.k * s, d.v_max)


@dataclass(frozen=True, eq=False)
class UpwindState:
    """Cell-averaged spacings ``s[i]`` on ``[N1 + i dn, N1 + (i + 1) dn]`` at time ``t``."""

    dn: float
    dt: float
    s: np.ndarray
    diagram: TriangularDiagram
    t: float = 0.0
    N1: float = 0.0
    check_jam: bool = True

    def __post_init__(self):
        s = np.asarray(self.s, float)
        object.__setattr__(self, "s", s)
        if self.dn <= 0 or self.dt <= 0:
            raise PreconditionViolated("dn and dt must be positive")
        if self.dt > self.dn / self.diagram.k * (1 + CFL_TOL):
            raise CFLViolation(f"dt={self.dt} exceeds dn/k={self.dn / self.diagram.k}")
        if self.check_jam and np.any(s < self.diagram.s_min * (1 - 1e-12)):
            raise SpacingBelowJam(f"cell spacing {s.min():.6g} below s_min={self.diagram.s_min}")

    @property
    def labels(self) -> np.ndarray:
        """Cell edges ``N1, N1 + dn, ..., N1 + M dn``."""
        return self.N1 + self.dn * np.arange(len(self.s) + 1)

    def total_spacing(self) -> float:
        return float(np.sum(self.s) * self.dn)


def step(state: UpwindState, lead_speed: float, dt: Optional[float] = None) -> UpwindState:
    """Advance one step; ``lead_speed`` is the leader's mean speed over the step.

    The ghost spacing is the congested inverse of ``lead_speed`` so that the
    inflow flux equals the leader's speed exactly.  ``dt`` may shorten the
    step (for landing on a final time), never lengthen it past CFL.
    """
    dt = state.dt if dt is None else float(dt)
    if dt > state.dn / state.diagram.k * (1 + CFL_TOL):
        raise CFLViolation(f"dt={dt} exceeds dn/k={state.dn / state.diagram.k}")
    d = state.diagram
    ghost = float(congested_inverse(d, min(float(lead_speed), d.v_max)))
    f = _flux(d, state.s)
    f_in = np.empty_like(f)
    f_in[0] = _flux(d, ghost)
    f_in[1:] = f[:-1]
    s_new = state.s - (dt / state.dn) * (f - f_in)
    return replace(state, s=s_new, t=state.t + dt)


def initial_cell_spacings(c: InitialCondition, N1: float, dn: float, M: int) -> np.ndarray:
    """Exact cell averages of the initial spacing profile."""
    edges = N1 + dn * np.arange(M + 1)
    if edges[0] < c.labels[0] - 1e-9 or edges[-1] > c.labels[-1] + 1e-9:
        raise PreconditionViolated("initial condition must cover every cell")
    x = c.value(edges)
    return -(np.diff(x)) / dn


@dataclass(frozen=True, eq=False)
class UpwindHistory:
    """``s[m, i]`` at ``t[m]``, plus the leader's position ``anchor[m]``."""

    t: np.ndarray
    s: np.ndarray
    anchor: np.ndarray
    dn: float
    N1: float

    @property
    def labels(self) -> np.ndarray:
        return self.N1 + self.dn * np.arange(self.s.shape[1] + 1)


def simulate(
    diagram: TriangularDiagram,
    initial: InitialCondition,
    upstream: UpstreamCondition,
    T: float,
    N1: float,
    N2: float,
    dn: float,
    cfl: float = 0.5,
    check_jam: bool = True,
) -> UpwindHistory:
    """Run the scheme for an initial + upstream scenario from ``initial.t0`` to ``T``.

    ``(N2 - N1) / dn`` must be an integer.  The last step is shortened to
    land on ``T`` exactly.
    """
    if not 0 < cfl <= 1:
        raise CFLViolation(f"CFL number {cfl} outside (0, 1]")
    M = int(round((N2 - N1) / dn))
    if M < 1 or abs(M * dn - (N2 - N1)) > 1e-9 * max(1.0, N2 - N1):
        raise PreconditionViolated("(N2 - N1) / dn must be a positive integer")
    if abs(upstream.label - N1) > 1e-9:
        raise PreconditionViolated("upstream condition must sit at N1")
    t0 = initial.t0
    if upstream.times[0] > t0 + 1e-9 or upstream.times[-1] < T - 1e-9:
        raise PreconditionViolated("upstream condition must cover [t0, T]")
    dt = cfl * dn / diagram.k
    n_steps = int(np.ceil((T - t0) / dt - 1e-9))
    times = np.minimum(t0 + dt * np.arange(n_steps + 1), T)

    state = UpwindState(dn=dn, dt=dt, s=initial_cell_spacings(initial, N1, dn, M), diagram=diagram, t=t0, N1=N1, check_jam=check_jam)
    lead = upstream.value(times)
    hist = np.empty((len(times), M))
    hist[0] = state.s
    for m in range(n_steps):
        h = times[m + 1] - times[m]
        state = step(state, (lead[m + 1] - lead[m]) / h, dt=h)
        hist[m + 1] = state.s
    if check_jam and np.any(hist < diagram.s_min * (1 - 1e-9)):
        raise SpacingBelowJam("scheme produced spacings below s_min")
    return UpwindHistory(t=times, s=hist, anchor=lead, dn=dn, N1=N1)


def integrate_positions(history: UpwindHistory) -> np.ndarray:
    """``X[m, i] = anchor[m] - sum_{j < i} s[m, j] dn`` at the cell edges."""
    csum = np.cumsum(history.s, axis=1) * history.dn
    return history.anchor[:, None] - np.concatenate([np.zeros((len(history.t), 1)), csum], axis=1)


def riemann_condition(N1: float, N2: float, n_jump: float, s_left: float, s_right: float, x_leader: float = 0.0) -> InitialCondition:
    """Two-state initial profile with a jump at ``n_jump``."""
    return InitialCondition(t0=0.0, anchor_x=x_leader, labels=[N1, n_jump, N2], spacings=[s_left, s_right])


def steady_leader(N1: float, T: float, speed: float, x0: float = 0.0) -> UpstreamCondition:
    return UpstreamCondition(label=N1, anchor_x=x0, times=[0.0, T], speeds=[speed])


def l1_distance(a: np.ndarray, b: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """Mean absolute difference over the (masked) grid."""
    diff = np.abs(np.asarray(a) - np.asarray(b))
    if mask is not None:
        diff = diff[mask]
    return float(np.mean(diff))


def empirical_orders(steps, errors) -> np.ndarray:
    """``log(e_k / e_{k+1}) / log(h_k / h_{k+1})`` for consecutive refinements."""
    h = np.asarray(steps, float)
    e = np.asarray(errors, float)
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])


def shock_band_mask(
    X_exact: np.ndarray,
    t: np.ndarray,
    dn: float,
    k: float,
    spread: float = 4.0,
    jump_frac: float = 0.05,
) -> np.ndarray:
    """True at edges outside the numerical-diffusion band of every discontinuity.

    A discontinuity is a cell-to-cell change of the exact spacing larger than
    ``jump_frac`` times the spacing range of that time slice.  Upwinding
    spreads it diffusively, so the band half-width grows like
    ``spread * sqrt(k (t - t0) / dn)`` cells (plus two).
    """
    s = -np.diff(X_exact, axis=1) / dn
    rng = np.nanmax(s, axis=1, keepdims=True) - np.nanmin(s, axis=1, keepdims=True)
    jump = np.abs(np.diff(s, axis=1)) > jump_frac * np.maximum(rng, 1e-12)
    edge = np.arange(X_exact.shape[1])
    width = 2 + np.ceil(spread * np.sqrt(k * np.maximum(t - t[0], 0.0) / dn)).astype(int)
    keep = np.ones(X_exact.shape, bool)
    for m in range(len(t)):
        # jump between cells j and j + 1 sits at edge j + 1
        for j in np.flatnonzero(jump[m]) + 1:
            keep[m, np.abs(edge - j) <= width[m]] = False
    return keep


# -- cross-validation against the closed form -----------------------------------


def reference_scenarios(d: TriangularDiagram, T: float = 60.0, N2: float = 200.0) -> dict:
    """Initial + upstream scenarios used to cross-check the two solvers.

    Leader speeds stay at or above ``k * s_min`` so that no spacing falls
    below the jam spacing.
    """
    s_lo = 2.0 * d.s_min
    jam_speed = d.k * s_lo
    mid = N2 * 0.3
    labels = np.linspace(0.0, N2, 9)
    wavy = d.s_star + 8.0 * np.sin(np.linspace(0.0, 3.0, 8)) + 4.0
    return {
        "riemann-contact": (riemann_condition(0.0, N2, mid, d.s_star, 1.5 * d.s_min), steady_leader(0.0, T, d.v_max)),
        "riemann-shock": (riemann_condition(0.0, N2, mid, s_lo, 40.0), steady_leader(0.0, T, jam_speed)),
        "riemann-expansion": (riemann_condition(0.0, N2, mid, 40.0, s_lo), steady_leader(0.0, T, d.v_max)),
        "leader-slowdown": (
            InitialCondition(0.0, 0.0, [0.0, N2], [25.0]),
            UpstreamCondition(0.0, 0.0, [0.0, T / 4, T / 2, T], [d.v_max, 12.0, d.v_max]),
        ),
        "multi-step": (
            InitialCondition(0.0, 0.0, labels, wavy),
            UpstreamCondition(0.0, 0.0, [0.0, T / 3, T], [20.0, 8.0]),
        ),
    }


def oracle_diff(
    d: TriangularDiagram,
    initial: InitialCondition,
    upstream: UpstreamCondition,
    T: float,
    N1: float,
    N2: float,
    dns=(2.0, 1.0, 0.5, 0.25),
    cfl: float = 0.5,
    spread: float = 4.0,
) -> dict:
    """Refinement study of the scheme against the closed-form field."""
    from .solver import SolutionField

    field = SolutionField(d, [initial, upstream], T, N1, N2)
    rows = []
    for dn in dns:
        hist = simulate(d, initial, upstream, T, N1, N2, dn, cfl=cfl)
        X = integrate_positions(hist)
        tt, nn = np.meshgrid(hist.t, hist.labels, indexing="ij")
        Xe = field.values(tt, nn)
        keep = shock_band_mask(Xe, hist.t, dn, d.k, spread=spread)
        err = np.abs(X - Xe)
        rows.append(
            {
                "dn": dn,
                "dt": float(hist.t[1] - hist.t[0]),
                "l1": float(np.mean(err)),
                "max_outside_bands": float(err[keep].max()) if keep.any() else 0.0,
                "fraction_outside_bands": float(keep.mean()),
                "pointwise_tolerance": 2.0 * dn * d.s_star,
            }
        )
    l1 = [r["l1"] for r in rows]
    orders = empirical_orders(dns, l1) if len(dns) > 1 else np.array([])
    return {"cfl": cfl, "levels": rows, "orders": [float(o) for o in orders], "min_order": float(orders.min()) if len(orders) else None}
