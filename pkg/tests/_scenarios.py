"""Random piecewise-affine condition sets shared by the tests."""

import numpy as np

from lagrangian_lwr.conditions import (
    DownstreamCondition,
    InitialCondition,
    InternalChain,
    InternalCondition,
    UpstreamCondition,
)

T_DOM, N1_DOM, N2_DOM = 100.0, 0.0, 100.0


def _breaks(rng, lo, hi, pieces):
    inner = np.sort(rng.uniform(lo, hi, size=pieces - 1))
    return np.concatenate([[lo], inner, [hi]])


def random_condition(rng, d, kind=None):
    kind = kind or rng.choice(["initial", "upstream", "downstream", "internal", "chain"])
    vmax, k = d.v_max, d.k
    if kind == "initial":
        pieces = int(rng.integers(1, 4))
        lo, hi = np.sort(rng.uniform(N1_DOM, N2_DOM, 2))
        if rng.random() < 0.5:
            lo, hi = N1_DOM, N2_DOM
        spacings = rng.choice([d.s_min, d.s_star, 8.0, 30.0], size=pieces) * rng.uniform(0.8, 1.2, size=pieces)
        return InitialCondition(float(rng.uniform(0, 30)), float(rng.uniform(-500, 500)), _breaks(rng, lo, hi, pieces), np.maximum(spacings, 0.0))
    if kind in ("upstream", "downstream"):
        pieces = int(rng.integers(1, 4))
        ta, tb = np.sort(rng.uniform(0, T_DOM, 2))
        speeds = rng.uniform(0.0, 1.2 * vmax, size=pieces)
        cls, label = (UpstreamCondition, N1_DOM) if kind == "upstream" else (DownstreamCondition, N2_DOM)
        return cls(label, float(rng.uniform(-500, 500)), _breaks(rng, ta, tb, pieces), speeds)
    if kind == "internal":
        ta = float(rng.uniform(0, 80))
        tb = float(rng.uniform(ta + 1, T_DOM))
        r = float(rng.choice([0.0, k, rng.uniform(0, 0.5 * k), rng.uniform(1.01 * k, 2 * k)]))
        r = min(r, (N2_DOM - N1_DOM) / (tb - ta))
        n0 = float(rng.uniform(N1_DOM, max(N1_DOM, N2_DOM - r * (tb - ta))))
        return InternalCondition(float(rng.uniform(-500, 500)), float(rng.uniform(0, 1.2 * vmax)), ta, tb, n0, r)
    # chain of probe-like segments at one label
    n0 = float(rng.uniform(N1_DOM, N2_DOM))
    times = _breaks(rng, *np.sort(rng.uniform(0, T_DOM, 2)), int(rng.integers(2, 5)))
    x = float(rng.uniform(-500, 500))
    segs = []
    for a, b in zip(times, times[1:]):
        alpha = float(rng.uniform(0, vmax))
        seg = InternalCondition(x, alpha, a, b, n0, 0.0)
        segs.append(seg)
        x = seg.x_end
    return InternalChain(tuple(segs))


def random_conditions(rng, d, count=None):
    count = int(rng.integers(1, 11)) if count is None else count
    return [random_condition(rng, d) for _ in range(count)]


def self_compatible(c, d):
    """True when a condition alone is attained on its support (no datum faster than the model allows)."""
    if isinstance(c, InitialCondition):
        return True
    if isinstance(c, (UpstreamCondition, DownstreamCondition)):
        return bool(np.all(c.speeds <= d.v_max))
    segs = [c] if isinstance(c, InternalCondition) else list(c)
    return all(s.r <= d.k and s.alpha + d.s_star * s.r <= d.v_max * (1 + 1e-12) for s in segs)
