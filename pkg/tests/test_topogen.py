import networkx as nx
import pytest

from cachenet.netmodel import validate_instance
from cachenet.topogen import (
    TopologyFormatError, assign_weights, build_instance, generate_demand, generate_path_sets,
    generate_topology, load_topology, parse_topology,
)


def counts(g):
    return g.number_of_nodes(), g.number_of_edges()


class TestTopologies:
    @pytest.mark.parametrize("kind, n, e", [
        ("cycle", 30, 60), ("hypercube", 128, 896), ("grid-2d", 100, 360),
    ])
    def test_deterministic_counts(self, kind, n, e):
        assert counts(generate_topology(kind)) == (n, e)

    @pytest.mark.parametrize("name, n, e", [("abilene", 9, 26), ("geant", 22, 66), ("dtelekom", 68, 546)])
    def test_bundled(self, name, n, e):
        assert counts(load_topology(name)) == (n, e)
        assert counts(generate_topology(name)) == (n, e)

    @pytest.mark.parametrize("kind", ["cycle", "grid-2d", "hypercube", "expander", "erdos-renyi",
                                      "regular", "watts-strogatz", "small-world", "barabasi-albert"])
    def test_symmetric_connected_seeded(self, kind):
        g = generate_topology(kind, seed=5)
        assert all(g.has_edge(v, u) for u, v in g.edges())
        assert nx.is_strongly_connected(g)
        assert sorted(g.nodes) == list(range(g.number_of_nodes()))
        assert nx.utils.graphs_equal(g, generate_topology(kind, seed=5))

    def test_erdos_renyi_resamples(self):
        g = generate_topology("erdos-renyi", {"n": 30, "p": 0.08}, seed=0)
        assert nx.is_strongly_connected(g)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            generate_topology("torus")


class TestParsing:
    def test_comments_and_labels(self):
        g = parse_topology("# t\nA B\nB C  # c\n\n")
        assert counts(g) == (3, 4)
        assert g.nodes[0]["label"] == "A"

    @pytest.mark.parametrize("text, lineno", [("A B\nA\n", 2), ("A A\n", 1), ("A B C\n", 1)])
    def test_errors(self, text, lineno):
        with pytest.raises(TopologyFormatError) as exc:
            parse_topology(text)
        assert exc.value.lineno == lineno

    def test_load_file(self, tmp_path):
        f = tmp_path / "t.txt"
        f.write_text("0 1\n1 2\n")
        assert counts(load_topology(str(f))) == (3, 4)


class TestDemand:
    def test_rates(self):
        g = load_topology("geant")
        d = generate_demand(g, 10, 100, 10, seed=0)
        assert sum(d["rates"]) == pytest.approx(10.0)
        assert d["rates"][0] / d["rates"][1] == pytest.approx(2 ** 1.2)
        assert len(set(d["classes"])) == 100
        assert all(s in d["sources"] for _, s in d["classes"])
        assert d["capacity"] == [2] * 22

    def test_grid_row(self):
        g = generate_topology("grid-2d")
        d = generate_demand(g, 300, 1000, 20, capacity=3, seed=1)
        assert len(d["classes"]) == 1000 and len(d["sources"]) == 20 and len(d["servers"]) == 300

    def test_inconsistent(self):
        g = load_topology("abilene")
        with pytest.raises(ValueError):
            generate_demand(g, 2, 30, 9)
        with pytest.raises(ValueError):
            generate_demand(g, 2, 2, 10)
        with pytest.raises(ValueError):
            generate_demand(g, 2, 2, 2, capacity=3)

    def test_weights_symmetric_in_range(self):
        g = load_topology("abilene")
        w = assign_weights(g, seed=3)
        assert all(1 <= x <= 100 and w[(v, u)] == x for (u, v), x in w.items())


class TestPathSets:
    def setup_method(self):
        self.g = nx.DiGraph([(0, 1), (1, 0), (0, 2), (2, 0), (1, 3), (3, 1), (2, 3), (3, 2)])
        self.w = {(0, 1): 1.0, (1, 0): 1.0, (0, 2): 2.0, (2, 0): 2.0,
                  (1, 3): 10.0, (3, 1): 10.0, (2, 3): 10.0, (3, 2): 10.0}
        self.servers = [frozenset({3})]

    def test_diamond_both(self):
        ps = generate_path_sets(self.g, self.w, [(0, 0)], self.servers, k=2)
        assert ps == [((0, 1, 3), (0, 2, 3))]

    def test_k1_and_stretch1(self):
        assert generate_path_sets(self.g, self.w, [(0, 0)], self.servers, k=1) == [((0, 1, 3),)]
        assert generate_path_sets(self.g, self.w, [(0, 0)], self.servers, k=5, max_stretch=1.0) == [((0, 1, 3),)]

    def test_invalid(self):
        with pytest.raises(ValueError):
            generate_path_sets(self.g, self.w, [(0, 0)], self.servers, k=0)
        g = self.g.copy()
        g.add_node(4)
        with pytest.raises(ValueError, match="no path"):
            generate_path_sets(g, self.w, [(0, 4)], self.servers, k=1)

    @pytest.mark.parametrize("topo", ["abilene", "geant"])
    def test_instance_properties(self, topo):
        p = build_instance(topo, seed=2)
        assert validate_instance(p) == []
        for c, ps in enumerate(p.path_sets):
            ws = [p.path_weight(q) for q in ps]
            assert ws[0] == min(ws) and max(ws) <= 4.0 * ws[0] + 1e-9
            assert len(ps) <= 10
            assert len(set(ps)) == len(ps)

    def test_seed_determinism(self):
        assert build_instance("abilene", seed=4) == build_instance("abilene", seed=4)
        assert build_instance("abilene", seed=4) != build_instance("abilene", seed=5)
