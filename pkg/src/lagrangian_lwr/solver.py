"""Lax-Hopf evaluation of the Lagrangian episolution ``X(t, n)``.

Every piecewise-affine condition has a closed-form solution made of a few
affine *branches*, each valid on a polygonal region of the ``(t, n)`` plane.
A piece's solution is the minimum of its valid branches and the solution for
a whole set of conditions is the minimum over all pieces (inf-morphism).

The variational formula being evaluated is::

    X(t, n) = inf over u in [0, k], T >= 0 of  C(t - T, n - T u) + T psi_star(u)

Characteristics travel toward larger labels, hence ``n - T u``.
:func:`lax_hopf_oracle` minimises this expression by brute force and is kept
independent of the branch formulas so the two can be compared.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .conditions import (
    TAU_DOM,
    DownstreamCondition,
    InitialCondition,
    InternalChain,
    InternalCondition,
    UpstreamCondition,
    ValueCondition,
    eval_condition,
)
from .errors import GridTooCoarse, InvalidCondition, PointOutsideDomain
from .fundamental_diagram import TriangularDiagram, eval_psi_star

CONE_TOL = 1e-9  # slack on closed inequalities, scaled by (1 + |n|) or (1 + |t|)
_CHUNK = 2_000_000  # max pieces x points evaluated at once

INITIAL_BRANCHES = ("initial.shift", "initial.fan_left", "initial.fan_right", "initial.free")
UPSTREAM_BRANCHES = ("upstream.fan_end", "upstream.wave", "upstream.fan_start")
DOWNSTREAM_BRANCHES = ("downstream.free", "downstream.support", "downstream.fan_start")
INTERNAL_BRANCHES = ("internal.wave", "internal.fan_segment", "internal.fan_end", "internal.fan_start")
BRANCH_NAMES = INITIAL_BRANCHES + UPSTREAM_BRANCHES + DOWNSTREAM_BRANCHES + INTERNAL_BRANCHES


def _between(v, lo, hi, tol):
    return (v >= lo - tol) & (v <= hi + tol)


def _pick(mask, value):
    return np.where(mask, value, np.inf)


# -- per-piece closed forms ----------------------------------------------------
#
# The *_branches functions broadcast piece parameters against points and
# return one array per branch, +inf where the branch does not apply.


def _initial_branches(d: TriangularDiagram, t0, na, nb, s, dj, t, n):
    k, ss = d.k, d.s_star
    vk = ss * k
    T = t - t0
    ok = T >= -CONE_TOL * (1.0 + np.abs(t))
    T = np.maximum(T, 0.0)
    kT = k * T
    tol = CONE_TOL * (1.0 + np.abs(n))
    congested = s <= ss

    shift = _pick(ok & congested & _between(n, na + kT, nb + kT, tol), -s * n + dj + T * k * s)
    fan_left = _pick(
        ok & congested & _between(n - na, 0.0, kT, tol),
        -s * na + dj + T * vk - ss * (n - na),
    )
    fan_right = _pick(
        ok & ~congested & _between(n - nb, 0.0, kT, tol),
        -s * nb + dj + T * vk - ss * (n - nb),
    )
    free = _pick(ok & ~congested & _between(n, na, nb, tol), -s * n + dj + vk * T)
    return shift, fan_left, fan_right, free


def _upstream_branches(d: TriangularDiagram, N1, ta, tb, v, b, t, n):
    k, ss = d.k, d.s_star
    m = n - N1
    tol = CONE_TOL * (1.0 + np.abs(n))
    fan_end = _pick(_between(m, 0.0, k * (t - tb), tol), v * tb + b + ss * (k * (t - tb) - m))
    wave = _pick(
        _between(m, np.maximum(0.0, k * (t - tb)), k * (t - ta), tol),
        v * t + b - m * v / k,
    )
    # only binding when v > v_max, i.e. an incompatible trajectory
    fan_start = _pick(_between(m, 0.0, k * (t - ta), tol), v * ta + b + ss * (k * (t - ta) - m))
    return fan_end, wave, fan_start


def _downstream_branches(d: TriangularDiagram, N2, ta, tb, v, b, t, n, tau_dom):
    vk = d.s_star * d.k
    on = np.abs(n - N2) <= tau_dom
    tol = CONE_TOL * (1.0 + np.abs(t))
    free = _pick(on & (t >= tb - tol), v * tb + b + (t - tb) * vk)
    support = _pick(on & _between(t, ta, tb, tol), v * t + b)
    fan_start = _pick(on & (t >= ta - tol), v * ta + b + (t - ta) * vk)
    return free, support, fan_start


def _internal_branches(d: TriangularDiagram, beta, alpha, tmin, tmax, nmin, r, t, n, tau_dom):
    k, ss = d.k, d.s_star
    vk = ss * k
    nmax = nmin + r * (tmax - tmin)
    dn = n - nmin
    tol_n = CONE_TOL * (1.0 + np.abs(n))
    tol_t = CONE_TOL * (1.0 + np.abs(t))

    # wave: the characteristic with u = k that lands on the segment
    denom = k - r
    degenerate = np.abs(denom) <= 1e-12 * k
    safe = np.where(degenerate, 1.0, denom)
    tau_w = (n - nmin - k * t + r * tmin) / np.where(degenerate, -1.0, -safe)
    wave_ok = ~degenerate & _between(tau_w, tmin, tmax, tol_t) & (tau_w <= t + tol_t)
    wave = _pick(wave_ok, beta + alpha * (tau_w - tmin))
    # r == k: the wave region shrinks onto the support line itself
    on_line = degenerate & _between(t, tmin, tmax, tol_t) & (np.abs(n - (nmin + r * (t - tmin))) <= tau_dom)
    wave = np.where(on_line, beta + alpha * (t - tmin), wave)

    # fan from the segment interior (u = 0); empty when r == 0
    pos_r = r > 0
    r_safe = np.where(pos_r, r, 1.0)
    lag = dn / r_safe
    seg_ok = pos_r & (dn >= -tol_n) & (n <= nmax + tol_n) & (lag <= t - tmin + tol_t)
    fan_segment = _pick(seg_ok, beta + lag * alpha + vk * (t - tmin - lag))

    fan_end = _pick(
        _between(n - nmax, 0.0, k * (t - tmax), tol_n),
        beta + alpha * (tmax - tmin) + (t - tmax) * vk - ss * (n - nmax),
    )
    # only binding when alpha + s_star * r > v_max
    fan_start = _pick(_between(dn, 0.0, k * (t - tmin), tol_n), beta + vk * (t - tmin) - ss * dn)
    return wave, fan_segment, fan_end, fan_start


def _reduce(branches):
    stack = np.stack(np.broadcast_arrays(*branches))
    idx = np.argmin(stack, axis=0)
    val = np.take_along_axis(stack, idx[None], axis=0)[0]
    return val, idx


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def solve_initial_piece(d: TriangularDiagram, c: InitialCondition, j: int, t, n):
    """Solution generated by the ``j``-th affine piece of an initial condition."""
    val, _ = _reduce(
        _initial_branches(
            d, c.t0, c.labels[j], c.labels[j + 1], c.spacings[j], c.offsets[j],
            np.asarray(t, float), np.asarray(n, float),
        )
    )
    return _scalar(val)


def solve_upstream_piece(d: TriangularDiagram, c: UpstreamCondition, j: int, t, n):
    val, _ = _reduce(
        _upstream_branches(
            d, c.label, c.times[j], c.times[j + 1], c.speeds[j], c.offsets[j],
            np.asarray(t, float), np.asarray(n, float),
        )
    )
    return _scalar(val)


def solve_downstream_piece(d: TriangularDiagram, c: DownstreamCondition, j: int, t, n, tau_dom=TAU_DOM):
    val, _ = _reduce(
        _downstream_branches(
            d, c.label, c.times[j], c.times[j + 1], c.speeds[j], c.offsets[j],
            np.asarray(t, float), np.asarray(n, float), tau_dom,
        )
    )
    return _scalar(val)


def solve_internal_piece(d: TriangularDiagram, c: InternalCondition, t, n, tau_dom=TAU_DOM):
    val, _ = _reduce(
        _internal_branches(
            d, c.beta, c.alpha, c.t_min, c.t_max, c.n_min, c.r,
            np.asarray(t, float), np.asarray(n, float), tau_dom,
        )
    )
    return _scalar(val)


# -- compiled field ------------------------------------------------------------


@dataclass
class _PieceTable:
    """Parameters of all pieces of one kind, one row per piece."""

    kind: str
    params: np.ndarray  # (P, n_params)
    cond: np.ndarray  # (P,) condition index
    piece: np.ndarray  # (P,) piece index inside its condition
    branch_offset: int


def _compile(conditions: Sequence[ValueCondition]) -> List[_PieceTable]:
    rows: Dict[str, list] = {"initial": [], "upstream": [], "downstream": [], "internal": []}
    for ci, c in enumerate(conditions):
        if isinstance(c, InitialCondition):
            for j in range(c.n_pieces):
                rows["initial"].append((ci, j, (c.t0, c.labels[j], c.labels[j + 1], c.spacings[j], c.offsets[j])))
        elif isinstance(c, (UpstreamCondition, DownstreamCondition)):
            kind = "upstream" if isinstance(c, UpstreamCondition) else "downstream"
            for j in range(c.n_pieces):
                rows[kind].append((ci, j, (c.label, c.times[j], c.times[j + 1], c.speeds[j], c.offsets[j])))
        elif isinstance(c, InternalCondition):
            rows["internal"].append((ci, 0, (c.beta, c.alpha, c.t_min, c.t_max, c.n_min, c.r)))
        elif isinstance(c, InternalChain):
            for j, s in enumerate(c):
                rows["internal"].append((ci, j, (s.beta, s.alpha, s.t_min, s.t_max, s.n_min, s.r)))
        else:
            raise InvalidCondition(f"not a value condition: {type(c).__name__}")
    offsets = {
        "initial": 0,
        "upstream": len(INITIAL_BRANCHES),
        "downstream": len(INITIAL_BRANCHES) + len(UPSTREAM_BRANCHES),
        "internal": len(INITIAL_BRANCHES) + len(UPSTREAM_BRANCHES) + len(DOWNSTREAM_BRANCHES),
    }
    tables = []
    for kind, items in rows.items():
        if not items:
            continue
        tables.append(
            _PieceTable(
                kind=kind,
                params=np.array([p for _, _, p in items], dtype=float),
                cond=np.array([ci for ci, _, _ in items], dtype=int),
                piece=np.array([j for _, j, _ in items], dtype=int),
                branch_offset=offsets[kind],
            )
        )
    return tables


def _branches_for(table: _PieceTable, d: TriangularDiagram, t, n, tau_dom):
    p = [table.params[:, i][:, None] for i in range(table.params.shape[1])]
    if table.kind == "initial":
        return _initial_branches(d, *p, t, n)
    if table.kind == "upstream":
        return _upstream_branches(d, *p, t, n)
    if table.kind == "downstream":
        return _downstream_branches(d, *p, t, n, tau_dom)
    return _internal_branches(d, *p, t, n, tau_dom)


@dataclass(frozen=True)
class Evaluation:
    value: float
    attaining_condition: Optional[int]
    branch: Optional[str]
    piece: Optional[int] = None


@dataclass(eq=False)
class SolutionField:
    """Episolution generated by a list of conditions on ``[0, T] x [N1, N2]``."""

    diagram: TriangularDiagram
    conditions: Sequence[ValueCondition]
    T: float
    N1: float
    N2: float
    tau_dom: float = TAU_DOM
    _tables: List[_PieceTable] = field(init=False, repr=False)

    def __post_init__(self):
        self.conditions = tuple(self.conditions)
        if not self.conditions:
            raise InvalidCondition("a solution field needs at least one condition")
        if not (self.T > 0 and self.N2 > self.N1):
            raise InvalidCondition("domain must satisfy T > 0 and N2 > N1")
        for i, c in enumerate(self.conditions):
            for ta, na, _, tb, nb, _ in c.segments():
                if (
                    min(ta, tb) < -1e-9
                    or max(ta, tb) > self.T * (1 + 1e-12) + 1e-9
                    or min(na, nb) < self.N1 - self.tau_dom
                    or max(na, nb) > self.N2 + self.tau_dom
                ):
                    raise InvalidCondition(f"support of condition {i} leaves the domain")
        self._tables = _compile(self.conditions)

    def in_domain(self, t, n):
        t = np.asarray(t, float)
        n = np.asarray(n, float)
        tt = 1e-9 * (1.0 + self.T)
        return (t >= -tt) & (t <= self.T + tt) & (n >= self.N1 - self.tau_dom) & (n <= self.N2 + self.tau_dom)

    def evaluate(self, t, n):
        """Vectorised fuse: returns ``(value, condition_index, branch_index, piece_index)``.

        Indices are ``-1`` where the value is ``+inf``.
        """
        t, n = np.broadcast_arrays(np.asarray(t, float), np.asarray(n, float))
        shape = t.shape
        t = t.ravel()
        n = n.ravel()
        best = np.full(t.shape, np.inf)
        best_cond = np.full(t.shape, -1, dtype=int)
        best_branch = np.full(t.shape, -1, dtype=int)
        best_piece = np.full(t.shape, -1, dtype=int)
        for table in self._tables:
            P = len(table.cond)
            step = max(1, _CHUNK // max(P, 1))
            for lo in range(0, len(t), step):
                sl = slice(lo, lo + step)
                vals, bidx = _reduce(_branches_for(table, self.diagram, t[None, sl], n[None, sl], self.tau_dom))
                pi = np.argmin(vals, axis=0)
                cols = np.arange(vals.shape[1])
                v = vals[pi, cols]
                c = table.cond[pi]
                cur = best[sl]
                better = (v < cur) | ((v == cur) & np.isfinite(v) & (c < best_cond[sl]))
                best[sl] = np.where(better, v, cur)
                best_cond[sl] = np.where(better, c, best_cond[sl])
                best_branch[sl] = np.where(better, bidx[pi, cols] + table.branch_offset, best_branch[sl])
                best_piece[sl] = np.where(better, table.piece[pi], best_piece[sl])
        return best.reshape(shape), best_cond.reshape(shape), best_branch.reshape(shape), best_piece.reshape(shape)

    def values(self, t, n):
        return self.evaluate(t, n)[0]

    def single(self, i: int) -> "SolutionField":
        """Field generated by condition ``i`` alone, on the same domain."""
        return SolutionField(self.diagram, [self.conditions[i]], self.T, self.N1, self.N2, self.tau_dom)

    def max_condition_spacing(self) -> float:
        """Largest spacing the solution can exhibit: fan spacing ``s_star`` or a datum's own spacing."""
        s = self.diagram.s_star
        k = self.diagram.k
        for c in self.conditions:
            if isinstance(c, InitialCondition):
                s = max(s, float(np.max(c.spacings)))
            elif isinstance(c, (UpstreamCondition, DownstreamCondition)):
                s = max(s, float(np.max(c.speeds)) / k)
            else:
                segs = [c] if isinstance(c, InternalCondition) else list(c)
                for g in segs:
                    if abs(k - g.r) > 1e-12 * k:
                        s = max(s, g.alpha / abs(k - g.r))
        return s


def fuse(field: SolutionField, t: float, n: float) -> Evaluation:
    """Pointwise minimum over all conditions with provenance."""
    if not bool(field.in_domain(t, n)):
        raise PointOutsideDomain(f"({t}, {n}) lies outside [0, {field.T}] x [{field.N1}, {field.N2}]")
    v, c, b, p = field.evaluate(t, n)
    v = float(v)
    if not np.isfinite(v):
        return Evaluation(np.inf, None, None, None)
    return Evaluation(v, int(c), BRANCH_NAMES[int(b)], int(p))


# -- brute-force oracle --------------------------------------------------------


def _landing_candidates(seg, t, n, u_grid, T_grid):
    """(u, T) pairs whose characteristic foot lands exactly on an affine support piece."""
    ta, na, _, tb, nb, _ = seg
    dtau, dnu = tb - ta, nb - na
    us, Ts = [], []
    # fixed u: intersect the ray (t - T, n - T u) with the support line
    den = u_grid * dtau - dnu
    ok = np.abs(den) > 1e-300
    lam = np.where(ok, (na - n + (t - ta) * u_grid) / np.where(ok, den, 1.0), np.nan)
    good = ok & (lam >= -1e-12) & (lam <= 1 + 1e-12)
    lam = np.clip(lam[good], 0.0, 1.0)
    us.append(u_grid[good])
    Ts.append(t - ta - lam * dtau)
    # fixed T: intersect the time slice t - T with the support
    if dtau != 0.0:
        lam = (t - T_grid - ta) / dtau
        good = (lam >= -1e-12) & (lam <= 1 + 1e-12) & (T_grid > 0)
        lam = np.clip(lam[good], 0.0, 1.0)
        Tg = T_grid[good]
        us.append((n - (na + lam * dnu)) / Tg)
        Ts.append(Tg)
    # support end points
    for tau, nu in ((ta, na), (tb, nb)):
        T = t - tau
        if T > 0:
            us.append(np.array([(n - nu) / T]))
            Ts.append(np.array([T]))
    return np.concatenate(us), np.concatenate(Ts)


def lax_hopf_oracle(
    field: SolutionField,
    t: float,
    n: float,
    grid: Tuple[int, int] = (64, 64),
    exact_landing: bool = True,
) -> float:
    """Brute-force infimum of ``C(t - T, n - T u) + T psi_star(u)``.

    The ``(u, T)`` search runs over a uniform ``N_u x N_T`` grid on
    ``[0, k] x [0, t]``.  Supports are measure-zero curves, so with
    ``exact_landing`` the search also includes every pair that maps
    ``(t, n)`` exactly onto a support piece for a grid value of ``u`` or ``T``,
    and onto each support end point.
    """
    N_u, N_T = grid
    if N_u < 2 or N_T < 2:
        raise ValueError("grid needs at least 2 points per axis")
    d = field.diagram
    k = d.k
    u_grid = np.linspace(0.0, k, N_u)
    T_grid = np.linspace(0.0, max(t, 0.0), N_T)
    UU, TT = np.meshgrid(u_grid, T_grid, indexing="ij")
    UU, TT = UU.ravel(), TT.ravel()
    u_tol = 1e-12 * k

    best = np.inf
    for c in field.conditions:
        us, Ts = [UU], [TT]
        if exact_landing:
            for seg in c.segments():
                u, T = _landing_candidates(seg, t, n, u_grid, T_grid)
                us.append(u)
                Ts.append(T)
        u = np.concatenate(us)
        T = np.concatenate(Ts)
        keep = (u >= -u_tol) & (u <= k + u_tol) & (T >= 0.0)
        u = np.clip(u[keep], 0.0, k)
        T = T[keep]
        if u.size == 0:
            continue
        vals = eval_condition(c, t - T, n - T * u, field.tau_dom) + T * eval_psi_star(d, u)
        best = min(best, float(np.min(vals)))

    if not exact_landing and not np.isfinite(best):
        if np.isfinite(field.values(t, n)):
            raise GridTooCoarse(f"no grid characteristic from ({t}, {n}) reaches a support")
    return best


# -- grid evaluation -----------------------------------------------------------


@dataclass
class GridEvaluation:
    t: np.ndarray
    n: np.ndarray
    values: np.ndarray  # (nt, nn), +inf where unreached
    condition: np.ndarray  # (nt, nn), -1 where unreached
    branch: np.ndarray
    piece: np.ndarray

    def __getitem__(self, ij) -> Evaluation:
        i, j = ij
        v = float(self.values[i, j])
        if not np.isfinite(v):
            return Evaluation(np.inf, None, None, None)
        return Evaluation(v, int(self.condition[i, j]), BRANCH_NAMES[int(self.branch[i, j])], int(self.piece[i, j]))

    @property
    def shape(self):
        return self.values.shape


def evaluate_grid(
    field: SolutionField,
    nt: int,
    nn: int,
    workers: int = 1,
    t: Optional[np.ndarray] = None,
    n: Optional[np.ndarray] = None,
) -> GridEvaluation:
    """Fuse on a uniform ``nt x nn`` grid (or explicit axes), split by rows across workers.

    Every node is computed independently, so results do not depend on
    ``workers``.
    """
    if t is None:
        if nt < 2:
            raise ValueError("nt must be >= 2")
        t = np.linspace(0.0, field.T, nt)
    if n is None:
        if nn < 2:
            raise ValueError("nn must be >= 2")
        n = np.linspace(field.N1, field.N2, nn)
    t = np.asarray(t, float)
    n = np.asarray(n, float)
    out = [np.empty((len(t), len(n)), dtype=float)] + [np.empty((len(t), len(n)), dtype=int) for _ in range(3)]

    def run(rows):
        TT, NN = np.meshgrid(t[rows], n, indexing="ij")
        for arr, res in zip(out, field.evaluate(TT, NN)):
            arr[rows] = res

    parts = [p for p in np.array_split(np.arange(len(t)), max(1, workers)) if len(p)]
    if workers <= 1:
        for p in parts:
            run(p)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, parts))
    return GridEvaluation(t, n, *out)


def write_matrix_csv(t, n, values, path) -> None:
    """Header ``t, n_1, ..., n_m``; one row per time; empty cell for non-finite values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [repr(float(x)) for x in n])
        for ti, row in zip(t, values):
            w.writerow([repr(float(ti))] + [repr(float(v)) if np.isfinite(v) else "" for v in row])


def write_grid_csv(grid: GridEvaluation, path) -> None:
    write_matrix_csv(grid.t, grid.n, grid.values, path)


def read_grid_csv(path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    n = np.array([float(x) for x in rows[0][1:]])
    t = np.array([float(r[0]) for r in rows[1:]])
    vals = np.array([[float(x) if x != "" else np.inf for x in r[1:]] for r in rows[1:]])
    return t, n, vals


def grid_summary(grid: GridEvaluation) -> dict:
    finite = np.isfinite(grid.values)
    hist = np.bincount(grid.condition[finite], minlength=0) if finite.any() else np.array([], int)
    return {
        "shape": list(grid.shape),
        "finite_fraction": float(finite.mean()),
        "min": float(grid.values[finite].min()) if finite.any() else None,
        "max": float(grid.values[finite].max()) if finite.any() else None,
        "attaining_condition_histogram": {str(i): int(c) for i, c in enumerate(hist) if c},
    }


def write_grid_summary(grid: GridEvaluation, path) -> None:
    Path(path).write_text(json.dumps(grid_summary(grid), indent=2) + "\n", encoding="utf-8")
