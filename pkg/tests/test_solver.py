import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _scenarios import N1_DOM, N2_DOM, T_DOM, random_conditions, self_compatible
from lagrangian_lwr.conditions import (
    InternalCondition,
    build_downstream,
    build_initial,
    build_upstream,
    chain_from_samples,
    eval_condition,
)
from lagrangian_lwr.errors import GridTooCoarse, InvalidCondition, PointOutsideDomain
from lagrangian_lwr.solver import (
    BRANCH_NAMES,
    SolutionField,
    evaluate_grid,
    fuse,
    grid_summary,
    lax_hopf_oracle,
    read_grid_csv,
    solve_downstream_piece,
    solve_initial_piece,
    solve_internal_piece,
    solve_upstream_piece,
    write_grid_csv,
)


def _field(d, conds, T=T_DOM, N1=N1_DOM, N2=N2_DOM):
    return SolutionField(d, conds, T, N1, N2)


class TestInitialPiece:
    def test_documented_example(self, small_diagram):
        c = build_initial(0, 0, [0, 10], [10])
        assert solve_initial_piece(small_diagram, c, 0, 2, 5) == pytest.approx(-15)
        assert lax_hopf_oracle(_field(small_diagram, [c]), 2, 5) == pytest.approx(-15, abs=1e-6)

    def test_restriction_to_support(self, diagram):
        c = build_initial(0, 40, [0, 10, 20], [5, 30])
        n = np.linspace(0, 20, 21)
        np.testing.assert_allclose(solve_initial_piece(diagram, c, 0, 0, n[:11]), c.value(n[:11]))
        np.testing.assert_allclose(solve_initial_piece(diagram, c, 1, 0, n[10:]), c.value(n[10:]))

    def test_free_piece_corner(self, diagram):
        c = build_initial(0, 0, [0, 10], [30])
        # both free branches meet at the right corner
        assert solve_initial_piece(diagram, c, 0, 0, 10) == pytest.approx(-300)

    def test_before_t0(self, diagram):
        c = build_initial(5, 0, [0, 10], [10])
        assert solve_initial_piece(diagram, c, 0, 4, 5) == np.inf


class TestUpstreamPiece:
    def test_on_support(self, diagram):
        c = build_upstream(0, 0, [0, 60], [20])
        assert solve_upstream_piece(diagram, c, 0, 30, 0) == pytest.approx(600)

    def test_stopped_leader(self, diagram):
        c = build_upstream(0, 100, [10, 60], [0])
        n = diagram.k * (40 - 10) / 2
        assert solve_upstream_piece(diagram, c, 0, 40, n) == pytest.approx(100)

    def test_outside_cone(self, diagram):
        c = build_upstream(0, 0, [10, 60], [20])
        assert solve_upstream_piece(diagram, c, 0, 20, diagram.k * 10 + 0.1) == np.inf


class TestDownstreamPiece:
    def test_endpoint(self, diagram):
        c = build_downstream(100, 0, [0, 20], [10])
        assert solve_downstream_piece(diagram, c, 0, 20, 100) == pytest.approx(200)

    def test_free_continuation(self, diagram):
        c = build_downstream(100, 0, [0, 20], [10])
        assert solve_downstream_piece(diagram, c, 0, 30, 100) == pytest.approx(200 + 315)

    def test_no_influence_on_smaller_labels(self, diagram):
        c = build_downstream(100, 0, [0, 20], [10])
        assert solve_downstream_piece(diagram, c, 0, 30, 99) == np.inf


class TestInternalPiece:
    def test_on_support(self, diagram):
        c = InternalCondition(beta=3, alpha=12, t_min=5, t_max=25, n_min=10, r=0.6)
        assert solve_internal_piece(diagram, c, 15, 16) == pytest.approx(3 + 120)

    def test_probe_wave_matches_oracle(self, small_diagram):
        c = InternalCondition(beta=0, alpha=20, t_min=0, t_max=30, n_min=100, r=0)
        f = SolutionField(small_diagram, [c], 60, 0, 200)
        closed = solve_internal_piece(small_diagram, c, 10, 110)
        # wave: the u = k characteristic lands at tau = 10 - 10 / 1.75
        assert closed == pytest.approx(20 * (10 - 10 / 1.75))
        assert lax_hopf_oracle(f, 10, 110) == pytest.approx(closed, abs=1e-6)

    def test_end_fan_left_edge(self, diagram):
        c = InternalCondition(beta=0, alpha=20, t_min=0, t_max=30, n_min=100, r=0)
        assert solve_internal_piece(diagram, c, 40, 100) == pytest.approx(600 + 10 * diagram.v_max)

    @pytest.mark.parametrize("r", [0.0, "k", 0.7, 3.0])
    def test_degenerate_rates_agree_with_oracle(self, diagram, r):
        r = diagram.k if r == "k" else r
        c = InternalCondition(beta=-20, alpha=9, t_min=5, t_max=15, n_min=20, r=r)
        f = SolutionField(diagram, [c], 40, 0, 100)
        rng = np.random.default_rng(3)
        for t, n in zip(rng.uniform(0, 40, 60), rng.uniform(0, 100, 60)):
            a, b = f.values(t, n), lax_hopf_oracle(f, t, n, (17, 17))
            assert np.isinf(a) == np.isinf(b)
            if np.isfinite(a):
                assert a == pytest.approx(b, abs=1e-6)


class TestFuse:
    def test_single_condition(self, diagram):
        c = build_initial(0, 0, [0, 50], [10])
        f = _field(diagram, [c])
        assert fuse(f, 10, 30).value == solve_initial_piece(diagram, c, 0, 10, 30)

    def test_tie_goes_to_first(self, diagram):
        c = build_initial(0, 0, [0, 50], [10])
        f = _field(diagram, [c, c])
        ev = fuse(f, 10, 30)
        assert ev.attaining_condition == 0
        assert ev.branch in BRANCH_NAMES

    def test_unreached_point(self, diagram):
        f = _field(diagram, [build_initial(50, 0, [0, 10], [10])])
        ev = fuse(f, 10, 5)
        assert ev.value == np.inf and ev.attaining_condition is None and ev.branch is None

    def test_outside_domain(self, diagram):
        f = _field(diagram, [build_initial(0, 0, [0, 10], [10])])
        with pytest.raises(PointOutsideDomain):
            fuse(f, -1, 5)
        with pytest.raises(PointOutsideDomain):
            fuse(f, 1, N2_DOM + 1)

    def test_support_outside_domain(self, diagram):
        with pytest.raises(InvalidCondition):
            SolutionField(diagram, [build_initial(0, 0, [0, 200], [10])], 10, 0, 100)

    def test_needs_a_condition(self, diagram):
        with pytest.raises(InvalidCondition):
            SolutionField(diagram, [], 10, 0, 100)

    def test_probe_shocks_initial(self, diagram):
        ini = build_initial(0, 0, [0, 100], [25])
        probe = chain_from_samples(40, [(10, -400), (30, -300), (60, 200)])
        f = _field(diagram, [ini, probe])
        rng = np.random.default_rng(7)
        t, n = rng.uniform(0, 100, 200), rng.uniform(0, 100, 200)
        both = f.values(t, n)
        np.testing.assert_array_equal(both, np.minimum(f.single(0).values(t, n), f.single(1).values(t, n)))
        assert np.any(f.evaluate(t, n)[1] == 1)
        for ti, ni, v in zip(t[:50], n[:50], both[:50]):
            o = lax_hopf_oracle(f, ti, ni, (17, 17))
            assert np.isinf(o) == np.isinf(v)
            if np.isfinite(v):
                assert o == pytest.approx(v, abs=1e-6)


class TestOracle:
    def test_at_t0(self, diagram):
        c = build_initial(0, 0, [0, 10], [10])
        assert lax_hopf_oracle(_field(diagram, [c]), 0, 4) == pytest.approx(-40)

    def test_unreachable(self, diagram):
        c = build_initial(50, 0, [0, 10], [10])
        assert lax_hopf_oracle(_field(diagram, [c]), 10, 5) == np.inf

    def test_grid_too_coarse(self, diagram):
        c = InternalCondition(beta=0, alpha=10, t_min=0, t_max=10, n_min=3.3, r=0)
        f = _field(diagram, [c])
        with pytest.raises(GridTooCoarse):
            lax_hopf_oracle(f, 20, 3.3 + 0.123, grid=(2, 2), exact_landing=False)

    def test_rejects_tiny_grid(self, diagram):
        with pytest.raises(ValueError):
            lax_hopf_oracle(_field(diagram, [build_initial(0, 0, [0, 10], [10])]), 1, 1, grid=(1, 5))


class TestGrid:
    @pytest.fixture
    def field(self, diagram):
        rng = np.random.default_rng(11)
        return _field(diagram, random_conditions(rng, diagram, 6))

    def test_small_grid(self, diagram):
        f = _field(diagram, [build_initial(0, 0, [0, 100], [10])])
        g = evaluate_grid(f, 2, 2)
        assert g.values.shape == (2, 2)
        assert g[0, 0].value == fuse(f, 0, 0).value

    def test_worker_independence(self, field):
        a = evaluate_grid(field, 37, 41, workers=1)
        b = evaluate_grid(field, 37, 41, workers=4)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.condition, b.condition)
        np.testing.assert_array_equal(a.branch, b.branch)

    def test_matches_pointwise(self, field):
        g = evaluate_grid(field, 9, 11)
        for i in range(9):
            for j in range(11):
                assert g.values[i, j] == fuse(field, g.t[i], g.n[j]).value

    def test_monotone_in_n_for_physical_data(self, diagram):
        ini = build_initial(0, 0, [0, 60, 100], [8, 25])
        up = build_upstream(0, 0, [0, 50, 100], [31.5, 6])
        x0 = float(_field(diagram, [ini, up]).values(20, 70))
        # a probe that starts on the platoon's trajectory and then crawls
        probe = chain_from_samples(70, [(20, x0), (50, x0 + 300), (90, x0 + 900)])
        g = evaluate_grid(_field(diagram, [ini, up, probe]), 31, 51)
        X = np.where(np.isfinite(g.values), g.values, np.nan)
        d = np.diff(X, axis=1)
        assert np.all(d[np.isfinite(d)] <= 1e-9)

    def test_csv_round_trip(self, field, tmp_path):
        g = evaluate_grid(field, 7, 9)
        p = tmp_path / "g.csv"
        write_grid_csv(g, p)
        t, n, v = read_grid_csv(p)
        np.testing.assert_array_equal(t, g.t)
        np.testing.assert_array_equal(n, g.n)
        np.testing.assert_array_equal(v, g.values)
        assert p.read_text().splitlines()[0].startswith("t,")

    def test_summary(self, field):
        g = evaluate_grid(field, 7, 9)
        s = grid_summary(g)
        assert 0 <= s["finite_fraction"] <= 1
        assert sum(s["attaining_condition_histogram"].values()) == int(np.isfinite(g.values).sum())


class TestProperties:
    @pytest.mark.parametrize("seed", range(5))
    def test_inf_morphism_bitwise(self, diagram, seed):
        rng = np.random.default_rng(seed)
        f = _field(diagram, random_conditions(rng, diagram, 5))
        g = evaluate_grid(f, 41, 43)
        singles = [evaluate_grid(f.single(i), 41, 43).values for i in range(5)]
        np.testing.assert_array_equal(g.values, np.minimum.reduce(singles))

    @pytest.mark.parametrize("seed", range(5))
    def test_inequality_on_supports(self, diagram, seed):
        rng = np.random.default_rng(100 + seed)
        conds = random_conditions(rng, diagram, 6)
        f = _field(diagram, conds)
        lam = np.linspace(0, 1, 15)
        for i, c in enumerate(conds):
            for ta, na, _, tb, nb, _ in c.segments():
                t, n = ta + lam * (tb - ta), na + lam * (nb - na)
                C = eval_condition(c, t, n)
                X = f.values(t, n)
                assert np.all(C - X >= -1e-9)
                if not self_compatible(c, diagram):
                    continue
                Xi = f.single(i).values(t, n)
                np.testing.assert_allclose(Xi, C, rtol=1e-9, atol=1e-9)

    def test_cone(self, diagram):
        c = InternalCondition(beta=0, alpha=10, t_min=20, t_max=40, n_min=30, r=0)
        f = _field(diagram, [c])
        t, n = np.meshgrid(np.linspace(0, 100, 51), np.linspace(0, 100, 51), indexing="ij")
        fin = np.isfinite(f.values(t, n))
        assert not np.any(fin & (t < 20))
        assert not np.any(fin & (n < 30 - 1e-6))
        assert not np.any(fin & (n - 30 > diagram.k * (t - 20) + 1e-9))

    @pytest.mark.parametrize("seed", range(4))
    def test_lipschitz_bracket(self, diagram, seed):
        rng = np.random.default_rng(seed)
        lo_speed = diagram.k * diagram.s_min
        ini = build_initial(0, 0, np.linspace(0, 100, 5), rng.uniform(diagram.s_min, 40, 4))
        up = build_upstream(0, 0, [0, 40, 100], rng.uniform(lo_speed, diagram.v_max, 2))
        f = _field(diagram, [ini, up])
        s_obs = f.max_condition_spacing()
        g = evaluate_grid(f, 21, 201)
        dX = -np.diff(g.values, axis=1)
        dn = np.diff(g.n)
        ok = np.isfinite(dX)
        assert np.all(dX[ok] >= diagram.s_min * np.broadcast_to(dn, dX.shape)[ok] - 1e-9)
        assert np.all(dX[ok] <= s_obs * np.broadcast_to(dn, dX.shape)[ok] + 1e-9)


@settings(max_examples=60, deadline=None)
@given(t=st.floats(0, 40), n=st.floats(0, 60))
def test_branch_edges_agree(t, n):
    from lagrangian_lwr.fundamental_diagram import mobile_century_diagram

    d = mobile_century_diagram()
    c = build_initial(0, 0, [0, 20, 40], [6, 35])
    f = SolutionField(d, [c], 40, 0, 60)
    v = f.values(t, n)
    # the solution is continuous wherever it is finite: nearby values stay close
    w = f.values(t, min(n + 1e-7, 60))
    if np.isfinite(v) and np.isfinite(w):
        assert abs(v - w) <= 40 * 1e-7 + 1e-9
