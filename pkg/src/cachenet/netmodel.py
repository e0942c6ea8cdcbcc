"""Cache-network domain types, feasibility predicates and the instance file format.

Nodes, items and paths are dense integer indices. A path is a tuple of node
indices ``(s, p_2, ..., p_K)`` travelled by the request; the response travels
back, so the cost of hop ``k`` is the weight of the reverse edge
``(p_{k+1}, p_k)``.

Instance file grammar (one record per line, ``#`` starts a comment)::

    nodes N items K
    edge u v w          # directed edge u -> v with weight w
    cap v c             # cache capacity of node v (default 0)
    server i v          # v is a designated server of item i
    demand i s lambda   # request class (i, s) with rate lambda
    path i s v1 ... vk  # next path of class (i, s); v1 must equal s

Classes are numbered in order of their ``demand`` lines; paths of a class keep
their file order.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, List, Sequence, Tuple

import numpy as np

Path = Tuple[int, ...]
Edge = Tuple[int, int]

FEASIBILITY_TOL = 1e-9


class InstanceFormatError(ValueError):
    """Raised when an instance file cannot be parsed."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class StrategyIndexError(IndexError):
    """A strategy refers to a path, node or item that does not exist."""


class InfeasibleStateError(ValueError):
    """A state lies outside the feasible set required by an operation."""


@dataclass(frozen=True)
class PathTable:
    """Flattened, index-addressed view of all paths of an instance.

    ``nodes[offsets[j]:offsets[j+1]]`` is path ``j``; ``weights`` is aligned with
    ``nodes`` and holds the response weight of each hop (0 in the last slot).
    """

    nodes: np.ndarray
    weights: np.ndarray
    offsets: np.ndarray
    item: np.ndarray
    klass: np.ndarray
    rate: np.ndarray
    class_offsets: np.ndarray
    n_nodes: int
    n_items: int

    @property
    def n_paths(self):
        return len(self.item)


@dataclass(frozen=True)
class ProblemInstance:
    """A caching network with demand and candidate path sets.

    Parameters
    ----------
    n_nodes, n_items : int
        Sizes of the node set ``V`` and of the catalog ``C``.
    edges : dict
        Directed edge ``(u, v)`` -> weight ``w_uv >= 0``.
    capacity : sequence of int
        Cache slots per node.
    servers : sequence of frozenset
        Designated servers of every item.
    classes : sequence of (item, source)
        Request classes, in index order.
    rates : sequence of float
        Poisson rate of every class.
    path_sets : sequence of sequence of paths
        Candidate paths of every class (duplicates are distinct choices).
    """

    n_nodes: int
    n_items: int
    edges: Dict[Edge, float]
    capacity: Tuple[int, ...]
    servers: Tuple[FrozenSet[int], ...]
    classes: Tuple[Tuple[int, int], ...]
    rates: Tuple[float, ...]
    path_sets: Tuple[Tuple[Path, ...], ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "capacity", tuple(int(c) for c in self.capacity))
        object.__setattr__(self, "servers", tuple(frozenset(s) for s in self.servers))
        object.__setattr__(self, "classes", tuple((int(i), int(s)) for i, s in self.classes))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(
            self, "path_sets",
            tuple(tuple(tuple(int(v) for v in p) for p in ps) for ps in self.path_sets),
        )
        object.__setattr__(self, "edges", {(int(u), int(v)): float(w) for (u, v), w in self.edges.items()})
        if len(self.rates) != len(self.classes) or len(self.path_sets) != len(self.classes):
            raise ValueError("classes, rates and path_sets must have equal length")

    @property
    def n_classes(self):
        return len(self.classes)

    @property
    def total_paths(self):
        """Total number of candidate paths over all classes."""
        return sum(len(ps) for ps in self.path_sets)

    @cached_property
    def class_offsets(self) -> np.ndarray:
        sizes = [len(ps) for ps in self.path_sets]
        return np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)]).astype(np.int64)

    def class_slice(self, c):
        return slice(int(self.class_offsets[c]), int(self.class_offsets[c + 1]))

    def weight(self, u, v):
        return self.edges[(u, v)]

    def path_weight(self, path: Path) -> float:
        return sum(self.edges[(path[k + 1], path[k])] for k in range(len(path) - 1))

    @staticmethod
    def position(path: Path, v: int) -> int:
        """0-based position ``k`` of ``v`` in ``path`` so that ``path[k] == v``."""
        return path.index(v)

    def neighbors(self, u):
        return [v for (a, v) in self.edges if a == u]

    @cached_property
    def table(self) -> PathTable:
        nodes, weights, offsets, item, klass, rate = [], [], [0], [], [], []
        for c, ((i, _s), lam, paths) in enumerate(zip(self.classes, self.rates, self.path_sets)):
            for p in paths:
                nodes.extend(p)
                weights.extend(self.edges[(p[k + 1], p[k])] for k in range(len(p) - 1))
                weights.append(0.0)
                offsets.append(len(nodes))
                item.append(i)
                klass.append(c)
                rate.append(lam)
        return PathTable(
            nodes=np.asarray(nodes, dtype=np.int64),
            weights=np.asarray(weights, dtype=np.float64),
            offsets=np.asarray(offsets, dtype=np.int64),
            item=np.asarray(item, dtype=np.int64),
            klass=np.asarray(klass, dtype=np.int64),
            rate=np.asarray(rate, dtype=np.float64),
            class_offsets=self.class_offsets,
            n_nodes=self.n_nodes,
            n_items=self.n_items,
        )

    def with_path_sets(self, path_sets, name=None) -> "ProblemInstance":
        return ProblemInstance(
            self.n_nodes, self.n_items, dict(self.edges), self.capacity, self.servers,
            self.classes, self.rates, path_sets, name=self.name if name is None else name,
        )

    def with_capacity(self, capacity) -> "ProblemInstance":
        return ProblemInstance(
            self.n_nodes, self.n_items, dict(self.edges), capacity, self.servers,
            self.classes, self.rates, self.path_sets, name=self.name,
        )


@dataclass(frozen=True)
class IntegralStrategy:
    """Deterministic strategy: one path index per class, one item set per node."""

    routing: Tuple[int, ...]
    caching: Tuple[FrozenSet[int], ...]

    def __post_init__(self):
        object.__setattr__(self, "routing", tuple(int(r) for r in self.routing))
        object.__setattr__(self, "caching", tuple(frozenset(int(i) for i in c) for c in self.caching))

    def check_indices(self, p: ProblemInstance):
        if len(self.routing) != p.n_classes:
            raise StrategyIndexError(f"routing has {len(self.routing)} entries, expected {p.n_classes}")
        if len(self.caching) != p.n_nodes:
            raise StrategyIndexError(f"caching has {len(self.caching)} entries, expected {p.n_nodes}")
        for c, r in enumerate(self.routing):
            if not 0 <= r < len(p.path_sets[c]):
                raise StrategyIndexError(f"class {c}: path index {r} out of range")
        for v, items in enumerate(self.caching):
            for i in items:
                if not 0 <= i < p.n_items:
                    raise StrategyIndexError(f"node {v}: item {i} out of range")

    def to_fractional(self, p: ProblemInstance) -> "FractionalState":
        self.check_indices(p)
        rho = np.zeros(p.total_paths)
        for c, r in enumerate(self.routing):
            rho[p.class_offsets[c] + r] = 1.0
        xi = np.zeros((p.n_nodes, p.n_items))
        for v, items in enumerate(self.caching):
            xi[v, list(items)] = 1.0
        return FractionalState(rho, xi)


@dataclass
class FractionalState:
    """Marginals ``(rho, xi)``: flat routing vector over all paths, and a
    ``|V| x |C|`` caching matrix."""

    rho: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        self.xi = np.asarray(self.xi, dtype=np.float64)

    def copy(self):
        return FractionalState(self.rho.copy(), self.xi.copy())

    def rho_of(self, p: ProblemInstance, c: int) -> np.ndarray:
        return self.rho[p.class_slice(c)]

    @classmethod
    def uniform(cls, p: ProblemInstance) -> "FractionalState":
        sizes = np.diff(p.class_offsets)
        rho = np.repeat(1.0 / np.maximum(sizes, 1), sizes)
        cap = np.asarray(p.capacity, dtype=np.float64)
        xi = np.repeat((cap / max(p.n_items, 1))[:, None], p.n_items, axis=1)
        return cls(rho, xi)

    def is_integral(self, tol=FEASIBILITY_TOL):
        def near01(a):
            return bool(np.all((np.abs(a) <= tol) | (np.abs(a - 1) <= tol)))
        return near01(self.rho) and near01(self.xi)

    def to_integral(self, p: ProblemInstance, tol=FEASIBILITY_TOL) -> IntegralStrategy:
        if not self.is_integral(tol):
            raise InfeasibleStateError("state is not integral")
        routing = [int(np.argmax(self.rho_of(p, c))) for c in range(p.n_classes)]
        caching = [frozenset(np.flatnonzero(self.xi[v] > 0.5).tolist()) for v in range(p.n_nodes)]
        return IntegralStrategy(routing, caching)


@dataclass(frozen=True)
class RequestEvent:
    klass: Tuple[int, int]
    time: float
    path_choice: int = -1


def validate_instance(p: ProblemInstance) -> List[str]:
    """Return a list of human-readable violations; empty means valid."""
    problems = []
    for (u, v), w in p.edges.items():
        if not (0 <= u < p.n_nodes and 0 <= v < p.n_nodes):
            problems.append(f"edge ({u},{v}) references an unknown node")
            continue
        if (v, u) not in p.edges:
            problems.append(f"graph not symmetric: ({u},{v}) present but ({v},{u}) missing")
        if not (w >= 0) or math.isinf(w):
            problems.append(f"edge ({u},{v}) has invalid weight {w}")
    if len(p.capacity) != p.n_nodes:
        problems.append(f"capacity has {len(p.capacity)} entries, expected {p.n_nodes}")
    for v, c in enumerate(p.capacity):
        if c < 0:
            problems.append(f"node {v}: negative capacity {c}")
        elif c > p.n_items:
            problems.append(f"node {v}: capacity {c} exceeds catalog size {p.n_items}")
    if len(p.servers) != p.n_items:
        problems.append(f"servers given for {len(p.servers)} items, expected {p.n_items}")
    for i, srv in enumerate(p.servers):
        if not srv:
            problems.append(f"item {i} has no designated server")
        for v in srv:
            if not 0 <= v < p.n_nodes:
                problems.append(f"item {i}: server {v} is not a node")
    seen = set()
    for c, ((i, s), lam, paths) in enumerate(zip(p.classes, p.rates, p.path_sets)):
        tag = f"class {c} ({i},{s})"
        if (i, s) in seen:
            problems.append(f"{tag}: duplicate request class")
        seen.add((i, s))
        if not 0 <= i < p.n_items or not 0 <= s < p.n_nodes:
            problems.append(f"{tag}: unknown item or source")
            continue
        if not (lam > 0) or math.isinf(lam):
            problems.append(f"{tag}: rate {lam} is not strictly positive")
        if not paths:
            problems.append(f"{tag}: empty path set")
        srv = p.servers[i] if i < len(p.servers) else frozenset()
        for j, path in enumerate(paths):
            ptag = f"{tag} path {j}"
            if not path or path[0] != s:
                problems.append(f"{ptag}: does not start at source {s} (a)")
                continue
            if len(set(path)) != len(path):
                problems.append(f"{ptag}: not simple (b)")
            for k in range(len(path) - 1):
                if (path[k], path[k + 1]) not in p.edges:
                    problems.append(f"{ptag}: missing edge ({path[k]},{path[k + 1]})")
            if path[-1] not in srv:
                problems.append(f"{ptag}: last node {path[-1]} is not a designated server (c)")
            interior = [v for v in path[:-1] if v in srv]
            if interior:
                problems.append(f"{ptag}: interior designated server {interior[0]} (d)")
    return problems


def feasible_integral(s: IntegralStrategy, p: ProblemInstance) -> bool:
    """True iff ``s`` lies in the integral feasible set.

    Raises :class:`StrategyIndexError` when ``s`` refers to missing paths or items.
    """
    s.check_indices(p)
    return all(len(items) == p.capacity[v] for v, items in enumerate(s.caching))


def feasible_fractional(s: FractionalState, p: ProblemInstance, tol=FEASIBILITY_TOL) -> bool:
    if s.rho.shape != (p.total_paths,) or s.xi.shape != (p.n_nodes, p.n_items):
        return False
    for a in (s.rho, s.xi):
        if not np.all(np.isfinite(a)) or a.size and (a.min() < -tol or a.max() > 1 + tol):
            return False
    sums = np.add.reduceat(s.rho, p.class_offsets[:-1]) if p.n_classes else np.zeros(0)
    if np.any(np.abs(sums - 1.0) > tol):
        return False
    cap = np.asarray(p.capacity, dtype=np.float64)
    return bool(np.all(np.abs(s.xi.sum(axis=1) - cap) <= tol))


# -- file format -----------------------------------------------------------

def _fmt_float(x):
    return repr(float(x))


def write_instance(p: ProblemInstance, out=None) -> str:
    """Serialize ``p``; writes to ``out`` (path or file object) when given."""
    lines = []
    if p.name:
        lines.append(f"# {p.name}")
    lines.append(f"nodes {p.n_nodes} items {p.n_items}")
    for (u, v), w in sorted(p.edges.items()):
        lines.append(f"edge {u} {v} {_fmt_float(w)}")
    for v, c in enumerate(p.capacity):
        if c:
            lines.append(f"cap {v} {c}")
    for i, srv in enumerate(p.servers):
        for v in sorted(srv):
            lines.append(f"server {i} {v}")
    for (i, s), lam in zip(p.classes, p.rates):
        lines.append(f"demand {i} {s} {_fmt_float(lam)}")
    for (i, s), paths in zip(p.classes, p.path_sets):
        for path in paths:
            lines.append(f"path {i} {s} " + " ".join(map(str, path)))
    text = "\n".join(lines) + "\n"
    if out is not None:
        if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
            with open(out, "w") as fh:
                fh.write(text)
        else:
            out.write(text)
    return text


def read_instance(source) -> ProblemInstance:
    """Parse an instance from a path, file object or string (``str`` containing
    a newline is treated as file content)."""
    if hasattr(source, "read"):
        text = source.read()
        name = getattr(source, "name", "")
    elif isinstance(source, str) and "\n" in source:
        text, name = source, ""
    else:
        with open(source) as fh:
            text = fh.read()
        name = str(source)
    return parse_instance(text, name=name)


def parse_instance(text: str, name="") -> ProblemInstance:
    n_nodes = n_items = None
    edges, cap, servers = {}, {}, {}
    classes, rates, paths = [], [], {}
    title = ""
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if line.startswith("#"):
            if lineno == 1:
                title = line[1:].strip()
            continue
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind = tok[0]
        try:
            if kind == "nodes":
                if len(tok) != 4 or tok[2] != "items":
                    raise InstanceFormatError("expected 'nodes N items K'", lineno)
                n_nodes, n_items = int(tok[1]), int(tok[3])
                continue
            if n_nodes is None:
                raise InstanceFormatError("header 'nodes N items K' must come first", lineno)
            if kind == "edge":
                _arity(tok, 4, lineno)
                u, v = _node(tok[1], n_nodes, lineno), _node(tok[2], n_nodes, lineno)
                edges[(u, v)] = float(tok[3])
            elif kind == "cap":
                _arity(tok, 3, lineno)
                cap[_node(tok[1], n_nodes, lineno)] = int(tok[2])
            elif kind == "server":
                _arity(tok, 3, lineno)
                servers.setdefault(_item(tok[1], n_items, lineno), set()).add(_node(tok[2], n_nodes, lineno))
            elif kind == "demand":
                _arity(tok, 4, lineno)
                key = (_item(tok[1], n_items, lineno), _node(tok[2], n_nodes, lineno))
                if key in paths:
                    raise InstanceFormatError(f"duplicate demand for class {key}", lineno)
                classes.append(key)
                rates.append(float(tok[3]))
                paths[key] = []
            elif kind == "path":
                if len(tok) < 4:
                    raise InstanceFormatError("path needs item, source and at least one node", lineno)
                key = (_item(tok[1], n_items, lineno), _node(tok[2], n_nodes, lineno))
                if key not in paths:
                    raise InstanceFormatError(f"path for class {key} before its demand line", lineno)
                paths[key].append(tuple(_node(t, n_nodes, lineno) for t in tok[3:]))
            else:
                raise InstanceFormatError(f"unknown record '{kind}'", lineno)
        except ValueError as exc:
            if isinstance(exc, InstanceFormatError):
                raise
            raise InstanceFormatError(str(exc), lineno) from None
    if n_nodes is None:
        raise InstanceFormatError("missing header 'nodes N items K'")
    return ProblemInstance(
        n_nodes=n_nodes,
        n_items=n_items,
        edges=edges,
        capacity=[cap.get(v, 0) for v in range(n_nodes)],
        servers=[frozenset(servers.get(i, ())) for i in range(n_items)],
        classes=classes,
        rates=rates,
        path_sets=[paths[k] for k in classes],
        name=title or name,
    )


def _arity(tok, n, lineno):
    if len(tok) != n:
        raise InstanceFormatError(f"'{tok[0]}' expects {n - 1} fields, got {len(tok) - 1}", lineno)


def _node(t, n, lineno):
    v = int(t)
    if not 0 <= v < n:
        raise InstanceFormatError(f"node {v} out of range [0,{n})", lineno)
    return v


def _item(t, n, lineno):
    i = int(t)
    if not 0 <= i < n:
        raise InstanceFormatError(f"item {i} out of range [0,{n})", lineno)
    return i
