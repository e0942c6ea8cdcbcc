import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cachenet.netmodel import (
    FractionalState, InstanceFormatError, IntegralStrategy, ProblemInstance,
    StrategyIndexError, feasible_fractional, feasible_integral, parse_instance,
    read_instance, validate_instance, write_instance,
)
from cachenet.topogen import build_instance

from conftest import line_instance, small_instance


def _replace(p, **kw):
    base = dict(n_nodes=p.n_nodes, n_items=p.n_items, edges=dict(p.edges), capacity=p.capacity,
                servers=p.servers, classes=p.classes, rates=p.rates, path_sets=p.path_sets)
    base.update(kw)
    return ProblemInstance(**base)


class TestValidation:
    def test_diamond_valid(self, diamond):
        assert validate_instance(diamond) == []

    def test_path_not_ending_at_server(self, diamond):
        bad = _replace(diamond, path_sets=[((0, 1),), ((0, 2, 3),)])
        msgs = validate_instance(bad)
        assert any("not a designated server" in m for m in msgs)

    def test_capacity_exceeds_catalog(self, diamond):
        msgs = validate_instance(diamond.with_capacity([0, 3, 1, 0]))
        assert any("exceeds catalog" in m for m in msgs)

    def test_asymmetric_graph(self, diamond):
        edges = dict(diamond.edges)
        del edges[(1, 0)]
        assert any("not symmetric" in m for m in validate_instance(_replace(diamond, edges=edges)))

    def test_interior_server(self, diamond):
        bad = _replace(diamond, servers=[frozenset({3, 1}), frozenset({3})])
        assert any("interior designated server" in m for m in validate_instance(bad))

    def test_path_not_starting_at_source(self, diamond):
        bad = _replace(diamond, path_sets=[((1, 3),), diamond.path_sets[1]])
        assert any("does not start" in m for m in validate_instance(bad))

    def test_non_simple_path(self, diamond):
        bad = _replace(diamond, path_sets=[((0, 1, 0, 2, 3),), diamond.path_sets[1]])
        assert any("not simple" in m for m in validate_instance(bad))

    def test_nonpositive_rate(self, diamond):
        assert any("strictly positive" in m for m in validate_instance(_replace(diamond, rates=[1.0, 0.0])))

    @pytest.mark.parametrize("topo", ["abilene", "geant", "cycle"])
    def test_generated_instances_valid(self, topo):
        assert validate_instance(build_instance(topo, seed=3)) == []

    def test_length_mismatch(self, diamond):
        with pytest.raises(ValueError):
            _replace(diamond, rates=[1.0])


class TestFeasibility:
    def test_integral(self, diamond):
        s = IntegralStrategy([0, 1], [set(), {0}, {1}, set()])
        assert feasible_integral(s, diamond)

    def test_integral_under_capacity(self, diamond):
        assert not feasible_integral(IntegralStrategy([0, 1], [set(), set(), {1}, set()]), diamond)

    def test_index_error_is_structural(self, diamond):
        with pytest.raises(StrategyIndexError):
            feasible_integral(IntegralStrategy([0, 2], [set(), {0}, {1}, set()]), diamond)
        with pytest.raises(StrategyIndexError):
            feasible_integral(IntegralStrategy([0, 0], [set(), {5}, {1}, set()]), diamond)

    def test_lift_is_fractional_feasible(self, diamond):
        s = IntegralStrategy([1, 0], [set(), {1}, {0}, set()])
        f = s.to_fractional(diamond)
        assert feasible_fractional(f, diamond)
        assert f.is_integral()
        assert f.to_integral(diamond) == s

    def test_xi_over_capacity(self, diamond):
        f = FractionalState.uniform(diamond)
        f.xi[1, 0] += 0.1
        assert not feasible_fractional(f, diamond)

    def test_uniform_feasible(self, diamond):
        f = FractionalState.uniform(diamond)
        assert feasible_fractional(f, diamond)
        np.testing.assert_allclose(f.rho, 0.5)
        np.testing.assert_allclose(f.xi[1], 0.5)

    def test_shape_mismatch(self, diamond):
        assert not feasible_fractional(FractionalState(np.ones(3), np.zeros((4, 2))), diamond)


class TestAccessors:
    def test_counts_and_offsets(self, diamond):
        assert diamond.n_classes == 2
        assert diamond.total_paths == 4
        assert list(diamond.class_offsets) == [0, 2, 4]
        assert diamond.path_weight((0, 1, 3)) == 11.0

    def test_position(self):
        p = build_instance("abilene", seed=0)
        for paths in p.path_sets:
            for path in paths:
                for v in path:
                    assert path[p.position(path, v)] == v

    def test_table_layout(self, diamond):
        t = diamond.table
        assert t.n_paths == 4
        assert list(t.nodes[t.offsets[1]:t.offsets[2]]) == [0, 2, 3]
        assert list(t.weights[t.offsets[1]:t.offsets[2]]) == [2.0, 10.0, 0.0]


class TestFileFormat:
    def test_round_trip(self, diamond):
        text = write_instance(diamond)
        q = read_instance(text)
        assert q == diamond
        assert write_instance(q) == text

    def test_round_trip_file(self, tmp_path):
        p = build_instance("abilene", seed=1)
        path = tmp_path / "inst.txt"
        write_instance(p, str(path))
        assert read_instance(str(path)) == p
        buf = io.StringIO()
        write_instance(p, buf)
        assert read_instance(io.StringIO(buf.getvalue())) == p

    @given(st.integers(min_value=0, max_value=50))
    @settings(max_examples=10, deadline=None)
    def test_round_trip_property(self, seed):
        p = small_instance(seed)
        assert read_instance(write_instance(p)) == p

    def test_comments_and_blank_lines(self, diamond):
        text = "# header\n\n" + write_instance(diamond).replace("\n", "   # note\n", 3)
        assert parse_instance(text) == diamond

    @pytest.mark.parametrize("text, lineno", [
        ("nodes 2 items 1\nedge 0 1\n", 2),
        ("nodes 2 items 1\nedge 0 5 1.0\n", 2),
        ("nodes 2 items 1\nfoo 1\n", 2),
        ("edge 0 1 1.0\n", 1),
        ("nodes 2 items 1\nedge 0 1 abc\n", 2),
    ])
    def test_errors_carry_line_numbers(self, text, lineno):
        with pytest.raises(InstanceFormatError) as exc:
            parse_instance(text)
        assert exc.value.lineno == lineno

    def test_path_for_unknown_class(self):
        text = "nodes 2 items 1\nedge 0 1 1\nedge 1 0 1\nserver 0 1\npath 0 0 0 1\n"
        with pytest.raises(InstanceFormatError):
            parse_instance(text)

    def test_duplicate_paths_kept(self):
        p = line_instance()
        q = p.with_path_sets([ps * 2 for ps in p.path_sets])
        assert read_instance(write_instance(q)).total_paths == 2 * p.total_paths
