import itertools
import math
import re

import numpy as np
import pytest
from scipy.optimize import linprog

from cachenet.netmodel import FractionalState, IntegralStrategy, ProblemInstance, feasible_integral
from cachenet.objective import c0_sr, cost_sr, gain_sr, path_unit_costs, surrogate_L_sr
from cachenet.offline import (
    BudgetExceededError, brute_force_opt, build_counterexample, check_equivalence,
    enumeration_size, export_lp, offline_solve, pipage_round_caching, random_fractional_state,
    round_routing, route_rns_indices, solve_relaxation,
)

from conftest import line_instance, small_instance

E = 1 - 1 / math.e


def parse_lp(text):
    """Minimal reader for the LP files written by ``export_lp``."""
    term = re.compile(r"([+-]?)\s*([0-9.eE+-]+)\s+([A-Za-z_][A-Za-z0-9_]*)")
    names, obj, ub, eq = {}, {}, [], []

    def coefs(expr):
        out = {}
        for sign, val, nm in term.findall(expr):
            names.setdefault(nm, len(names))
            out[nm] = out.get(nm, 0.0) + (-1 if sign == "-" else 1) * float(val)
        return out
    section = None
    for line in text.splitlines():
        s = line.strip()
        if s in ("Maximize", "Subject To", "Bounds", "End"):
            section = s
            continue
        if section == "Maximize" and s.startswith("obj:"):
            obj = coefs(" " + s[4:])
        elif section == "Subject To":
            body = s.split(":", 1)[1]
            if "<=" in body:
                lhs, rhs = body.split("<=")
                ub.append((coefs(" " + lhs), float(rhs)))
            else:
                lhs, rhs = body.split("=")
                eq.append((coefs(" " + lhs), float(rhs)))
        elif section == "Bounds":
            names.setdefault(s.split("<=")[1].strip(), len(names))
    n = len(names)

    def dense(rows):
        A = np.zeros((len(rows), n))
        for r, (cs, _) in enumerate(rows):
            for nm, v in cs.items():
                A[r, names[nm]] = v
        return A, np.array([b for _, b in rows])
    c = np.zeros(n)
    for nm, v in obj.items():
        c[names[nm]] = v
    return c, dense(ub), dense(eq), names


class TestRelaxation:
    def test_diamond_upper_bounds_optimum(self, diamond):
        r = solve_relaxation(diamond)
        assert r.value >= 43 - 1e-9
        assert r.converged

    def test_subgradient_method_agrees(self, diamond):
        lp = solve_relaxation(diamond)
        sg = solve_relaxation(diamond, method="subgradient", tol=1e-8)
        assert sg.value == pytest.approx(lp.value, rel=1e-3)

    def test_source_cache_saturates(self):
        p = line_instance(weights=(4.0,), capacity=(1, 0), n_items=1)
        r = solve_relaxation(p)
        assert r.state.xi[0, 0] == pytest.approx(1.0)
        assert r.value == pytest.approx(c0_sr(p))

    def test_line_grid_search(self):
        p = line_instance(weights=(2.0, 3.0), capacity=(0, 1, 0), n_items=2)
        r = solve_relaxation(p)
        grid = []
        for a in np.arange(0, 1.0001, 0.01):
            xi = np.zeros((3, 2))
            xi[1] = [a, 1 - a]
            grid.append(surrogate_L_sr(FractionalState(np.ones(2), xi), p))
        assert r.value == pytest.approx(max(grid), abs=1e-6)

    def test_value_bounds_optimal_gain(self):
        for seed in range(5):
            p = small_instance(seed)
            _, cmin = brute_force_opt(p)
            assert solve_relaxation(p).value >= c0_sr(p) - cmin - 1e-6

    def test_unknown_method(self, diamond):
        with pytest.raises(ValueError):
            solve_relaxation(diamond, method="simplex")


class TestExportLP:
    def test_variable_counts(self, diamond):
        text = export_lp(diamond)
        hops = sum(len(q) - 1 for ps in diamond.path_sets for q in ps)
        assert hops == 8
        assert len(re.findall(r"^ hop\d+:", text, re.M)) == hops
        n_vars = len(re.findall(r"^ 0 <= ", text, re.M))
        assert n_vars == hops + diamond.total_paths + diamond.n_nodes * diamond.n_items

    def test_reparsed_lp_matches_solver(self, tmp_path):
        for p in (build_counterexample(10), small_instance(3)):
            path = tmp_path / "x.lp"
            export_lp(p, str(path))
            c, (A_ub, b_ub), (A_eq, b_eq), _ = parse_lp(path.read_text())
            res = linprog(-c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=(0, 1), method="highs")
            assert -res.fun == pytest.approx(solve_relaxation(p).value, rel=1e-9)

    def test_empty_demand(self, diamond):
        p = ProblemInstance(4, 2, diamond.edges, diamond.capacity, diamond.servers, [], [], [])
        text = export_lp(p)
        assert "hop" not in text
        c, *_ = parse_lp(text)
        assert not np.any(c)


class TestPipage:
    def test_integral_unchanged(self, diamond):
        s = IntegralStrategy([0, 1], [set(), {0}, {1}, set()]).to_fractional(diamond)
        out = pipage_round_caching(s, diamond)
        np.testing.assert_array_equal(out.xi, s.xi)

    def test_half_half_picks_better_vertex(self, diamond):
        s = FractionalState(np.array([1.0, 0.0, 1.0, 0.0]), np.array([[0, 0], [0.5, 0.5], [0.5, 0.5], [0, 0]]))
        out = pipage_round_caching(s, diamond)
        cands = []
        for x1 in itertools.permutations([1.0, 0.0]):
            xi = s.xi.copy()
            xi[1] = x1
            xi[2] = out.xi[2]
            cands.append(gain_sr(FractionalState(s.rho, xi), diamond))
        assert gain_sr(out, diamond) == pytest.approx(max(cands))
        assert gain_sr(out, diamond) >= gain_sr(s, diamond)

    def test_monotone_and_integral(self, rng):
        for trial in range(100):
            p = small_instance(trial % 20, n_items=4)
            p = p.with_capacity([int(rng.integers(0, 4)) for _ in range(p.n_nodes)])
            s = random_fractional_state(p, rng)
            trace = []
            out = pipage_round_caching(s, p, trace=trace)
            assert np.all(np.diff(trace) >= -1e-9)
            assert len(trace) - 1 <= p.n_nodes * p.n_items
            assert np.all((out.xi == 0) | (out.xi == 1))
            np.testing.assert_array_equal(out.xi.sum(axis=1), p.capacity)
            np.testing.assert_array_equal(out.rho, s.rho)


class TestRoundRouting:
    def test_diamond_nearest_replica(self, diamond):
        xi = np.array([[0, 0], [1, 0], [0, 1], [0, 0]], dtype=float)
        out = round_routing(FractionalState.uniform(diamond), diamond)
        out = round_routing(FractionalState(out.rho, xi), diamond)
        np.testing.assert_array_equal(out.rho, [1, 0, 0, 1])

    def test_no_caching_is_rns(self):
        p = small_instance(6).with_capacity([0] * 6)
        out = round_routing(FractionalState.uniform(p), p)
        assert out.to_integral(p).routing == tuple(route_rns_indices(p))

    def test_tie_goes_to_lowest_index(self, diamond):
        p = diamond.with_path_sets([(q[0], q[0]) for q in diamond.path_sets])
        out = round_routing(FractionalState.uniform(p), p)
        np.testing.assert_array_equal(out.rho, [1, 0, 1, 0])

    def test_monotone_and_rnr(self, rng):
        for seed in range(10):
            p = small_instance(seed)
            s = pipage_round_caching(random_fractional_state(p, rng), p)
            out = round_routing(s, p)
            assert gain_sr(out, p) >= gain_sr(s, p) - 1e-9
            unit = path_unit_costs(out, p)
            for c in range(p.n_classes):
                sl = p.class_slice(c)
                assert unit[sl][np.argmax(out.rho[sl])] == unit[sl].min()


class TestOfflineSolve:
    def test_diamond(self, diamond):
        sol = offline_solve(diamond)
        assert cost_sr(sol.integral, diamond) <= 3 + 1e-9
        assert feasible_integral(sol.integral, diamond)
        d = sol.to_dict()
        assert set(d) >= {"relaxation_value", "gain", "certified_ratio", "routing", "caching"}

    def test_sources_cache_everything(self):
        p = line_instance(capacity=(2, 0, 0))
        sol = offline_solve(p)
        assert sol.gain == pytest.approx(c0_sr(p))

    def test_certificate(self):
        for seed in range(8):
            p = small_instance(seed)
            sol = offline_solve(p)
            _, cmin = brute_force_opt(p)
            assert sol.gain >= E * (c0_sr(p) - cmin) - 1e-9
            assert sol.certified_ratio >= E - 1e-6
            assert sol.gain >= gain_sr(sol.fractional, p) - 1e-9

    def test_subgradient_pipeline(self, diamond):
        sol = offline_solve(diamond, method="subgradient")
        assert sol.gain >= E * 43


class TestOracle:
    def test_diamond(self, diamond):
        s, c = brute_force_opt(diamond)
        assert c == pytest.approx(3.0)
        assert s.routing == (0, 1) and s.caching[1] == {0} and s.caching[2] == {1}

    @pytest.mark.parametrize("M, rns", [(1, 3.0), (10, 12.0), (100, 102.0)])
    def test_counterexample_rns(self, M, rns):
        p = build_counterexample(M)
        assert brute_force_opt(p, rns_only=True)[1] == pytest.approx(rns)
        assert brute_force_opt(p)[1] == pytest.approx(3.0)

    def test_single_class_single_path(self):
        p = line_instance(weights=(2.0, 3.0), capacity=(1, 1, 0), n_items=1)
        assert brute_force_opt(p)[1] == 0.0

    def test_budget(self, diamond):
        assert enumeration_size(diamond) == 16
        with pytest.raises(BudgetExceededError):
            brute_force_opt(diamond, budget=15)

    def test_counterexample_shape(self):
        p = build_counterexample(7)
        assert p.path_weight(p.path_sets[0][0]) == 8 and p.path_weight(p.path_sets[0][1]) == 9
        assert p.capacity == (0, 1, 1, 0)
        with pytest.raises(ValueError):
            build_counterexample(0)


class TestEquivalence:
    def test_diamond(self, diamond):
        rep = check_equivalence(diamond)
        assert rep["equal"] and rep["oracle_min"] == pytest.approx(3.0)

    def test_single_cache(self):
        rep = check_equivalence(line_instance(weights=(2.0, 3.0), capacity=(0, 1, 0)))
        assert rep["equal"]

    def test_random_five_node(self):
        for seed in range(10):
            rep = check_equivalence(small_instance(seed, n_nodes=5), n_starts=4)
            assert rep["equal"], rep
