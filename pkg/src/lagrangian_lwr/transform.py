"""Conversion between Eulerian ``N(t, x)`` and Lagrangian ``X(t, n)`` data.

For each fixed time the Moskowitz function ``N(t, .)`` is strictly decreasing
in ``x`` and ``X(t, .)`` is its inverse.  Sampled slices are inverted by
piecewise-linear interpolation.  Measurement curves are converted by swapping
the roles of position and label: an Eulerian datum ``n(tau)`` observed at
``(t(tau), x(tau))`` becomes the Lagrangian datum ``x(tau)`` at
``(t(tau), n(tau))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conditions import InternalChain, InternalCondition
from .errors import NotStrictlyMonotone, PreconditionViolated, ValueOutOfRange

DEFAULT_DELTA = 1e-4  # veh/m, uniform positivity margin on density


@dataclass(frozen=True, eq=False)
class SampledMoskowitz:
    """``N[i, j]`` = cumulative count at ``(t[i], x[j])``; NaN where unknown."""

    t: np.ndarray
    x: np.ndarray
    N: np.ndarray
    delta: float = DEFAULT_DELTA

    def density(self) -> np.ndarray:
        """``rho = -dN/dx`` per x-interval, shape ``(nt, nx - 1)``."""
        return -np.diff(self.N, axis=1) / np.diff(self.x)[None, :]


@dataclass(frozen=True, eq=False)
class LagrangianField:
    """``X[i, j]`` = position of label ``n[j]`` at time ``t[i]``; NaN where unknown."""

    t: np.ndarray
    n: np.ndarray
    X: np.ndarray


@dataclass(frozen=True, eq=False)
class EulerianCurveCondition:
    """Count ``n(tau)`` observed along the space-time curve ``(t(tau), x(tau))``."""

    t: np.ndarray
    x: np.ndarray
    n: np.ndarray


@dataclass(frozen=True, eq=False)
class LagrangianCurveCondition:
    """Position ``x(tau)`` prescribed along the curve ``(t(tau), n(tau))``."""

    t: np.ndarray
    n: np.ndarray
    x: np.ndarray

    def to_chain(self, slope_eps: float = 1e-9) -> InternalChain:
        """Piecewise-affine internal chain through consecutive samples."""
        t, n, x = (np.asarray(a, float) for a in (self.t, self.n, self.x))
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise PreconditionViolated("curve times must be strictly increasing to chain")
        r = np.diff(n) / dt
        alpha = np.diff(x) / dt
        if np.any(r < -slope_eps) or np.any(alpha < -slope_eps):
            raise PreconditionViolated("labels and positions must be nondecreasing along the curve")
        segs = []
        label, beta = n[0], x[0]
        for i in range(len(dt)):
            seg = InternalCondition(
                beta=beta,
                alpha=max(alpha[i], 0.0),
                t_min=t[i],
                t_max=t[i + 1],
                n_min=label,
                r=max(r[i], 0.0),
            )
            segs.append(seg)
            label, beta = seg.n_max, seg.x_end
        return InternalChain(tuple(segs))


def _check_curve(*arrays):
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1 or lengths.pop() < 2:
        raise PreconditionViolated("curve arrays must share a length of at least 2")
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise PreconditionViolated("curve samples must be finite (continuous curve and values)")


def invert_slice(x, N, n, delta: float = DEFAULT_DELTA):
    """Position where the decreasing sampled slice ``N(x)`` takes value ``n``."""
    x = np.asarray(x, float)
    N = np.asarray(N, float)
    slopes = -np.diff(N) / np.diff(x)
    if np.any(np.diff(x) <= 0):
        raise NotStrictlyMonotone("x samples must be strictly increasing")
    if np.any(slopes < delta * (1 - 1e-12)):
        raise NotStrictlyMonotone(f"slice density drops below delta={delta}")
    n = np.asarray(n, float)
    lo, hi = N[-1], N[0]
    tol = 1e-9 * max(1.0, abs(lo), abs(hi))
    if np.any((n < lo - tol) | (n > hi + tol)):
        raise ValueOutOfRange(f"count outside slice range [{lo}, {hi}]")
    out = np.interp(n, N[::-1], x[::-1])
    return float(out) if out.ndim == 0 else out


def _invert_decreasing(xs, ys, query, min_slope, name):
    """Invert ``ys(xs)`` (strictly decreasing) at ``query``; NaN outside the range."""
    good = np.isfinite(ys)
    xs, ys = xs[good], ys[good]
    if len(xs) < 2:
        return np.full(len(query), np.nan)
    slopes = -np.diff(ys) / np.diff(xs)
    if np.any(slopes < min_slope * (1 - 1e-12)):
        raise NotStrictlyMonotone(f"{name} slice is not strictly decreasing with margin {min_slope}")
    out = np.interp(query, ys[::-1], xs[::-1], left=np.nan, right=np.nan)
    tol = 1e-9 * max(1.0, np.abs(ys).max())
    # keep exact end values despite rounding at the range boundary
    out = np.where(np.abs(query - ys[-1]) <= tol, xs[-1], out)
    out = np.where(np.abs(query - ys[0]) <= tol, xs[0], out)
    return out


def lagrangian_to_eulerian_field(t, n, X, x_grid, min_spacing: float = 1e-9, delta: float = DEFAULT_DELTA) -> SampledMoskowitz:
    """Invert each time slice of ``X(t, .)`` onto ``x_grid``.

    Non-finite entries of ``X`` are ignored; positions outside a slice's range
    get NaN.  Raises :class:`NotStrictlyMonotone` if a slice has spacing below
    ``min_spacing``.
    """
    t = np.asarray(t, float)
    n = np.asarray(n, float)
    X = np.asarray(X, float)
    x_grid = np.asarray(x_grid, float)
    N = np.vstack([_invert_decreasing(n, X[i], x_grid, min_spacing, "X") for i in range(len(t))])
    return SampledMoskowitz(t=t, x=x_grid, N=N, delta=delta)


def eulerian_to_lagrangian_field(m: SampledMoskowitz, n_grid) -> LagrangianField:
    """Invert each time slice of ``N(t, .)`` onto ``n_grid``; densities must stay >= delta."""
    n_grid = np.asarray(n_grid, float)
    X = np.vstack([_invert_decreasing(m.x, m.N[i], n_grid, m.delta, "N") for i in range(len(m.t))])
    return LagrangianField(t=m.t, n=n_grid, X=X)


def eulerian_to_lagrangian_condition(c) -> LagrangianCurveCondition:
    """Dual Lagrangian datum of an Eulerian curve condition.

    Lagrangian inputs are returned unchanged.
    """
    if isinstance(c, LagrangianCurveCondition):
        return c
    if not isinstance(c, EulerianCurveCondition):
        raise PreconditionViolated(f"expected a curve condition, got {type(c).__name__}")
    t, x, n = (np.asarray(a, float) for a in (c.t, c.x, c.n))
    _check_curve(t, x, n)
    return LagrangianCurveCondition(t=t.copy(), n=n.copy(), x=x.copy())


def detector_curve(times, counts, position: float) -> EulerianCurveCondition:
    """Fixed-location counter: the curve ``x = position`` with cumulative counts."""
    times = np.asarray(times, float)
    counts = np.asarray(counts, float)
    return EulerianCurveCondition(t=times, x=np.full_like(times, float(position)), n=counts)


def detector_condition(times, counts, position: float) -> InternalChain:
    """Internal chain (``alpha = 0``, ``beta = position``, ``r`` = count rate) for a loop detector."""
    return eulerian_to_lagrangian_condition(detector_curve(times, counts, position)).to_chain()


def slope_bracket(n, X) -> tuple:
    """Smallest and largest ``|dX/dn|`` over a sampled slice (finite entries only)."""
    n = np.asarray(n, float)
    X = np.asarray(X, float)
    good = np.isfinite(X)
    s = -np.diff(X[good]) / np.diff(n[good])
    return float(s.min()), float(s.max())


def write_moskowitz_csv(m: SampledMoskowitz, path) -> None:
    """Grid CSV with positions in the header instead of labels; NaN written as empty."""
    from .solver import write_matrix_csv

    write_matrix_csv(m.t, m.x, m.N, path)
