"""Triangular spacing-velocity relation and its concave transform.

In Lagrangian coordinates the fundamental diagram is expressed as a speed
``psi(s)`` of the spacing ``s = 1/rho``::

    psi(s) = k * s      for s_min <= s <= s_star
           = v_max      for s >= s_star

with ``k = v_max / s_star`` so that ``psi`` is continuous.  Its concave
transform over ``u`` in ``[0, k]`` is ``psi_star(u) = s_star * (k - u)``.

All quantities are SI: seconds, meters, vehicles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    ConjugateOutOfDomain,
    DensityOutOfRange,
    InconsistentDiagram,
    SpacingBelowJam,
)

# relative mismatch tolerated between k * s_star and v_max when both are given
CONSISTENCY_RTOL = 1e-6


@dataclass(frozen=True)
class TriangularDiagram:
    """Calibration of the triangular diagram.

    Give ``rho_max``, ``rho_star`` and exactly one of ``v_max`` / ``k``; the
    other is derived.  Passing both is accepted only if they agree.
    """

    rho_max: float
    rho_star: float
    v_max: Optional[float] = None
    k: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.rho_star < self.rho_max):
            raise InconsistentDiagram(
                f"need 0 < rho_star < rho_max, got rho_star={self.rho_star}, rho_max={self.rho_max}"
            )
        s_star = 1.0 / self.rho_star
        if self.v_max is None and self.k is None:
            raise InconsistentDiagram("one of v_max or k is required")
        if self.k is None:
            object.__setattr__(self, "k", float(self.v_max) / s_star)
        elif self.v_max is None:
            object.__setattr__(self, "v_max", float(self.k) * s_star)
        elif abs(self.k * s_star - self.v_max) > CONSISTENCY_RTOL * abs(self.v_max):
            raise InconsistentDiagram(
                f"k * s_star = {self.k * s_star:.6g} differs from v_max = {self.v_max:.6g}; "
                "psi would be discontinuous at s_star"
            )
        if self.v_max <= 0 or self.k <= 0:
            raise InconsistentDiagram("v_max and k must be positive")
        object.__setattr__(self, "v_max", float(self.v_max))
        object.__setattr__(self, "k", float(self.k))
        object.__setattr__(self, "rho_max", float(self.rho_max))
        object.__setattr__(self, "rho_star", float(self.rho_star))

    @property
    def s_min(self) -> float:
        return 1.0 / self.rho_max

    @property
    def s_star(self) -> float:
        return 1.0 / self.rho_star

    @property
    def capacity(self) -> float:
        """Maximum flow M = v_max * rho_star (veh/s)."""
        return self.v_max * self.rho_star

    def psi(self, s):
        return eval_psi(self, s)

    def psi_star(self, u):
        return eval_psi_star(self, u)

    def to_dict(self) -> dict:
        return {"v_max": self.v_max, "rho_max": self.rho_max, "rho_star": self.rho_star, "k": self.k}

    @classmethod
    def from_dict(cls, data: dict) -> "TriangularDiagram":
        return cls(
            rho_max=data["rho_max"],
            rho_star=data["rho_star"],
            v_max=data.get("v_max"),
            k=data.get("k"),
        )


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def eval_psi(d: TriangularDiagram, s):
    """Speed at spacing ``s``; raises SpacingBelowJam for ``s < s_min``."""
    s = np.asarray(s, dtype=float)
    if np.any(s < d.s_min):
        raise SpacingBelowJam(f"spacing below jam spacing s_min={d.s_min}")
    return _scalar_or_array(np.where(s <= d.s_star, d.k * s, d.v_max))


def eval_psi_star(d: TriangularDiagram, u):
    u = np.asarray(u, dtype=float)
    if np.any((u < 0.0) | (u > d.k)):
        raise ConjugateOutOfDomain(f"u must lie in [0, k={d.k}]")
    return _scalar_or_array(d.s_star * (d.k - u))


def flow_from_density(d: TriangularDiagram, rho):
    """Flow f(rho) = rho * psi(1/rho) for ``0 < rho <= rho_max``."""
    rho = np.asarray(rho, dtype=float)
    if np.any((rho <= 0.0) | (rho > d.rho_max)):
        raise DensityOutOfRange(f"density must lie in (0, rho_max={d.rho_max}]")
    # psi(1/rho) without the s_min check: 1/rho_max can round just below s_min
    s = 1.0 / rho
    return _scalar_or_array(rho * np.where(s <= d.s_star, d.k * s, d.v_max))


def congested_inverse(d: TriangularDiagram, v):
    """Smallest spacing with ``psi(s) = v``: ``v / k`` below v_max, ``s_star`` at v_max."""
    v = np.asarray(v, dtype=float)
    return _scalar_or_array(np.where(v >= d.v_max, d.s_star, v / d.k))


def mobile_century_diagram() -> TriangularDiagram:
    """I-880 calibration: v_max = 31.5 m/s, s_min = 2.00 m, s_star = 18.15 m.

    The slope ``k`` is derived from continuity (about 1.7355 veh/s).  The raw
    calibration also quotes k = 1.95 and rho_star = 0.055 veh/m, neither of
    which is consistent with a continuous psi at s_star = 18.15.
    """
    return TriangularDiagram(rho_max=0.50, rho_star=1.0 / 18.15, v_max=31.5)
