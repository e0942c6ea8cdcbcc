"""Topologies, demand and candidate path sets for experiments.

Graphs are symmetric ``networkx.DiGraph`` objects on nodes ``0..n-1``.
"""
from __future__ import annotations

import itertools
from importlib import resources

import networkx as nx
import numpy as np

from .netmodel import ProblemInstance

MAX_RETRIES = 100

BUNDLED = ("abilene", "geant", "dtelekom")

# |C|, |R|, |Q|, c_v, |P| per topology
TABLE_PARAMS = {
    "cycle": (10, 100, 10, 2, 2),
    "grid-2d": (300, 1000, 20, 3, 30),
    "hypercube": (300, 1000, 20, 3, 30),
    "expander": (300, 1000, 20, 3, 30),
    "erdos-renyi": (300, 1000, 20, 3, 30),
    "regular": (300, 1000, 20, 3, 30),
    "watts-strogatz": (300, 1000, 20, 3, 2),
    "small-world": (300, 1000, 20, 3, 30),
    "barabasi-albert": (300, 1000, 20, 3, 30),
    "geant": (10, 100, 10, 2, 10),
    "abilene": (10, 90, 9, 2, 10),
    "dtelekom": (300, 1000, 20, 3, 30),
}


class TopologyFormatError(ValueError):
    def __init__(self, message, lineno=None):
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)
        self.lineno = lineno


def _symmetric(g: nx.Graph) -> nx.DiGraph:
    g = nx.convert_node_labels_to_integers(nx.Graph(g), ordering="sorted")
    g.remove_edges_from(list(nx.selfloop_edges(g)))
    return g.to_directed()


def _connected_sample(make, seed):
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RETRIES):
        g = make(int(rng.integers(2 ** 31)))
        if nx.is_connected(nx.Graph(g).to_undirected()):
            return g
    raise RuntimeError(f"no connected sample after {MAX_RETRIES} attempts")


def generate_topology(kind, params=None, seed=0) -> nx.DiGraph:
    """Synthetic symmetric topology.

    Parameters
    ----------
    kind : str
        One of ``cycle, grid-2d, hypercube, expander, erdos-renyi, regular,
        watts-strogatz, small-world, barabasi-albert``. Bundled real topologies
        (``abilene, geant, dtelekom``) are also accepted and delegate to
        :func:`load_topology`.
    params : dict, optional
        Generator parameters; defaults reproduce the experiment sizes
        (``n=30`` for the cycle, 100 nodes elsewhere, dimension 7 hypercube).
    seed : int
        Seed of the random generators; random graphs are resampled until
        connected.
    """
    params = dict(params or {})
    if kind in BUNDLED:
        return load_topology(kind)
    if kind == "cycle":
        g = nx.cycle_graph(params.get("n", 30))
    elif kind == "grid-2d":
        side = params.get("side", 10)
        g = nx.grid_2d_graph(side, side)
    elif kind == "hypercube":
        g = nx.hypercube_graph(params.get("dim", 7))
    elif kind == "expander":
        g = nx.margulis_gabber_galil_graph(params.get("side", 10))
    elif kind == "erdos-renyi":
        n, prob = params.get("n", 100), params.get("p", 0.1)
        g = _connected_sample(lambda s: nx.gnp_random_graph(n, prob, seed=s), seed)
    elif kind == "regular":
        n, d = params.get("n", 100), params.get("d", 3)
        g = _connected_sample(lambda s: nx.random_regular_graph(d, n, seed=s), seed)
    elif kind == "watts-strogatz":
        n, k, prob = params.get("n", 100), params.get("k", 4), params.get("p", 0.1)
        g = _connected_sample(lambda s: nx.watts_strogatz_graph(n, k, prob, seed=s), seed)
    elif kind == "small-world":
        side, r = params.get("side", 10), params.get("r", 2)
        g = _connected_sample(
            lambda s: nx.navigable_small_world_graph(side, p=1, q=1, r=r, dim=2, seed=s).to_undirected(),
            seed)
    elif kind == "barabasi-albert":
        n, m = params.get("n", 100), params.get("m", 4)
        g = _connected_sample(lambda s: nx.barabasi_albert_graph(n, m, seed=s), seed)
    else:
        raise ValueError(f"unknown topology kind {kind!r}")
    out = _symmetric(g)
    out.graph["name"] = kind
    return out


def parse_topology(text: str, name="") -> nx.DiGraph:
    """Parse ``A B`` link lines (``#`` comments); node ids in order of first use."""
    index, links = {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 2:
            raise TopologyFormatError(f"expected 'A B', got {raw.strip()!r}", lineno)
        if tok[0] == tok[1]:
            raise TopologyFormatError(f"self-loop at {tok[0]!r}", lineno)
        for t in tok:
            index.setdefault(t, len(index))
        links.append((index[tok[0]], index[tok[1]]))
    g = nx.DiGraph(name=name)
    for label, v in index.items():
        g.add_node(v, label=label)
    for u, v in links:
        g.add_edge(u, v)
        g.add_edge(v, u)
    return g


def load_topology(source) -> nx.DiGraph:
    """Bundled topology by name (``abilene``, ``geant``, ``dtelekom``) or a link-list file."""
    if source in BUNDLED:
        text = resources.files("cachenet").joinpath("data", f"{source}.txt").read_text()
        return parse_topology(text, name=source)
    with open(source) as fh:
        return parse_topology(fh.read(), name=str(source))


def assign_weights(g: nx.DiGraph, low=1.0, high=100.0, seed=0):
    """Uniform weights in ``[low, high]``, equal in both directions of a link."""
    rng = np.random.default_rng(seed)
    w = {}
    for u, v in sorted(g.edges()):
        if (v, u) in w:
            w[(u, v)] = w[(v, u)]
        else:
            w[(u, v)] = float(rng.uniform(low, high))
    return w


def generate_demand(g: nx.DiGraph, n_items, n_classes, n_sources, zipf_s=1.2, capacity=2, seed=0):
    """Designated servers, request classes with Zipf rates, and cache capacities.

    A server is drawn uniformly per item; ``n_sources`` distinct source nodes
    are drawn; ``n_classes`` pairs are sampled without replacement from
    ``items x sources``. The ``r``-th sampled class gets rate proportional to
    ``r ** -zipf_s``, normalized so the rates sum to ``n_sources``.

    Returns
    -------
    dict with keys ``servers``, ``classes``, ``rates``, ``capacity``, ``sources``.
    """
    n = g.number_of_nodes()
    if n_sources > n:
        raise ValueError(f"{n_sources} sources requested from {n} nodes")
    if n_classes > n_items * n_sources:
        raise ValueError(f"|R| = {n_classes} exceeds |C| x |Q| = {n_items * n_sources}")
    if capacity > n_items or capacity < 0:
        raise ValueError(f"capacity {capacity} outside [0, {n_items}]")
    rng = np.random.default_rng(seed)
    servers = [frozenset({int(rng.integers(n))}) for _ in range(n_items)]
    sources = sorted(int(v) for v in rng.choice(n, size=n_sources, replace=False))
    pairs = list(itertools.product(range(n_items), sources))
    pick = rng.choice(len(pairs), size=n_classes, replace=False)
    classes = [pairs[int(k)] for k in pick]
    ranks = np.arange(1, n_classes + 1, dtype=np.float64)
    rates = ranks ** (-zipf_s)
    rates *= n_sources / rates.sum()
    return {
        "servers": servers,
        "classes": classes,
        "rates": [float(r) for r in rates],
        "capacity": [int(capacity)] * n,
        "sources": sources,
    }


def _response_graph(g, weights):
    h = nx.DiGraph()
    h.add_nodes_from(g.nodes())
    for (u, v) in g.edges():
        # a request over (u, v) is answered over (v, u)
        h.add_edge(u, v, rw=weights[(v, u)])
    return h


def generate_path_sets(g, weights, classes, servers, k=10, max_stretch=4.0):
    """Up to ``k`` loopless paths per class, shortest first, within the stretch bound.

    Paths are enumerated in order of response weight (Yen's algorithm) towards
    every designated server of the item; paths through another designated
    server of the item are skipped.

    Raises
    ------
    ValueError
        If some class has no valid path.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    h = _response_graph(g, weights)
    cache = {}

    def towards(s, t):
        # Yen enumeration yields paths by non-decreasing weight: stop at k or the stretch cap
        if (s, t) not in cache:
            found = []
            try:
                for path in nx.shortest_simple_paths(h, s, t, weight="rw"):
                    w = nx.path_weight(h, path, "rw")
                    if found and w > max_stretch * found[0][0] + 1e-9:
                        break
                    found.append((w, tuple(path)))
                    if len(found) >= k:
                        break
            except nx.NetworkXNoPath:
                pass
            cache[(s, t)] = found
        return cache[(s, t)]

    out = []
    for (i, s) in classes:
        srv = servers[i]
        if s in srv:
            out.append(((s,),))
            continue
        cands = []
        for t in sorted(srv):
            cands.extend((w, p) for w, p in towards(s, t) if not any(v in srv for v in p[:-1]))
        if not cands:
            raise ValueError(f"class ({i},{s}) has no path to a designated server")
        cands.sort()
        best = cands[0][0]
        out.append(tuple(p for w, p in cands if w <= max_stretch * best + 1e-9)[:k])
    return out


def build_instance(topology="abilene", seed=0, n_items=None, n_classes=None, n_sources=None,
                   capacity=None, n_paths=None, max_stretch=4.0, zipf_s=1.2, params=None,
                   low=1.0, high=100.0) -> ProblemInstance:
    """Instance generated following the experiment recipe; missing sizes come from
    :data:`TABLE_PARAMS`."""
    dflt = TABLE_PARAMS.get(topology, (10, 100, 10, 2, 10))
    n_items = dflt[0] if n_items is None else n_items
    n_classes = dflt[1] if n_classes is None else n_classes
    n_sources = dflt[2] if n_sources is None else n_sources
    capacity = dflt[3] if capacity is None else capacity
    n_paths = dflt[4] if n_paths is None else n_paths
    ss = np.random.SeedSequence(seed).spawn(3)
    topo_seed, w_seed, d_seed = (int(s.generate_state(1)[0]) for s in ss)
    g = generate_topology(topology, params, seed=topo_seed)
    w = assign_weights(g, low, high, seed=w_seed)
    d = generate_demand(g, n_items, n_classes, n_sources, zipf_s, capacity, seed=d_seed)
    paths = generate_path_sets(g, w, d["classes"], d["servers"], n_paths, max_stretch)
    return ProblemInstance(
        n_nodes=g.number_of_nodes(), n_items=n_items, edges=w, capacity=d["capacity"],
        servers=d["servers"], classes=d["classes"], rates=d["rates"], path_sets=paths,
        name=f"{topology} seed={seed}",
    )
