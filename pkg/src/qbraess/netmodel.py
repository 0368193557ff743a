"""Network representation, generators, state assignment and path enumeration.

A :class:`Network` is an immutable undirected simple graph whose edges carry
an :class:`EdgeState` (Bell or Werner preparation) and a shared per-edge budget
``M`` of identical copies.  Edge ``i`` is the ``i``-th entry of the canonically
sorted edge list and that index is used everywhere else in the package.
"""
from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

FORMAT_VERSION = 1
ER_MAX_ATTEMPTS = 10_000
GAUSS_SUPPORT = tuple(round(0.55 + 0.025 * i, 3) for i in range(18))


class NetworkError(ValueError):
    """Raised for malformed networks, documents or infeasible generator input."""


class EdgeKind(str, enum.Enum):
    BELL = "bell"
    WERNER = "werner"


@dataclass(frozen=True)
class EdgeState:
    """Preparation of the ``M`` copies on one edge.

    ``p0`` is the Werner parameter; it is exactly 1 for Bell edges and lies in
    the purifiable window ``(1/3, 1)`` for Werner edges.
    """

    kind: EdgeKind
    p0: float = 1.0

    def __post_init__(self):
        kind = EdgeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        p0 = float(self.p0)
        if kind is EdgeKind.BELL:
            if p0 != 1.0:
                raise NetworkError(f"p0: Bell edge must have p0=1, got {p0}")
        elif not (1.0 / 3.0 < p0 < 1.0):
            raise NetworkError(f"p0: Werner p0={p0} outside the purifiable range (1/3, 1)")
        object.__setattr__(self, "p0", p0)

    @classmethod
    def bell(cls) -> "EdgeState":
        return cls(EdgeKind.BELL, 1.0)

    @classmethod
    def werner(cls, p0: float) -> "EdgeState":
        return cls(EdgeKind.WERNER, p0)

    @property
    def is_bell(self) -> bool:
        return self.kind is EdgeKind.BELL

    @property
    def f0(self) -> float:
        return (3.0 * self.p0 + 1.0) / 4.0


def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def is_connected(n_nodes: int, edges: Iterable[tuple[int, int]]) -> bool:
    """Union-find connectivity test."""
    parent = list(range(n_nodes))
    components = n_nodes
    for u, v in edges:
        ru, rv = _find(parent, u), _find(parent, v)
        if ru != rv:
            parent[ru] = rv
            components -= 1
    return components <= 1


@dataclass(frozen=True)
class Network:
    """Undirected simple graph with per-edge entanglement preparation.

    Parameters
    ----------
    n_nodes : int
        Number of nodes ``N``; nodes are ``0..N-1``.
    edges : sequence of (u, v)
        Undirected edges with ``u < v`` in sorted order.
    states : sequence of EdgeState
        One state per edge, aligned with ``edges``.
    budget : int
        Copies ``M`` prepared on every edge.
    require_connected : bool
        Validate connectivity.  Networks derived by :func:`remove_edges` skip
        this check.
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    states: tuple[EdgeState, ...]
    budget: int = 1000
    require_connected: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        edges = tuple((int(u), int(v)) for u, v in self.edges)
        states = tuple(self.states)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "states", states)
        if int(self.n_nodes) < 1:
            raise NetworkError(f"n: node count must be positive, got {self.n_nodes}")
        if int(self.budget) < 1:
            raise NetworkError(f"m_budget: must be a positive integer, got {self.budget}")
        if len(states) != len(edges):
            raise NetworkError("states: one state per edge required")
        for u, v in edges:
            if u == v:
                raise NetworkError(f"edges: self-loop at node {u}")
            if u > v:
                raise NetworkError(f"edges: edge ({u},{v}) not canonical (u<v)")
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
                raise NetworkError(f"edges: edge ({u},{v}) references a node outside [0,{self.n_nodes})")
        for a, b in zip(edges, edges[1:]):
            if a == b:
                raise NetworkError(f"edges: duplicate edge {a}")
            if a > b:
                raise NetworkError(f"edges: list not in canonical sorted order at {b}")
        for s in states:
            if not isinstance(s, EdgeState):
                raise NetworkError("states: entries must be EdgeState")
        if self.require_connected and not is_connected(self.n_nodes, edges):
            raise NetworkError("edges: network is not connected")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degree(self, node: int) -> int:
        return sum(1 for e in self.edges if node in e)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=int)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def adjacency(self) -> list[list[tuple[int, int]]]:
        """Per-node sorted list of ``(neighbor, edge_index)``."""
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n_nodes)]
        for i, (u, v) in enumerate(self.edges):
            adj[u].append((v, i))
            adj[v].append((u, i))
        for lst in adj:
            lst.sort()
        return adj

    def edge_index(self, u: int, v: int) -> int:
        key = (min(u, v), max(u, v))
        try:
            return self.edges.index(key)
        except ValueError:
            raise NetworkError(f"no edge {key}") from None

    def bell_mask(self) -> np.ndarray:
        return np.array([s.is_bell for s in self.states], dtype=bool)

    def p0_array(self) -> np.ndarray:
        return np.array([s.p0 for s in self.states], dtype=float)


def make_network(n_nodes, edges, states, budget=1000, require_connected=True) -> Network:
    """Build a network from unordered edges, canonicalizing and sorting them."""
    pairs = [((min(u, v), max(u, v)), s) for (u, v), s in zip(edges, states)]
    pairs.sort(key=lambda t: t[0])
    return Network(
        n_nodes,
        tuple(e for e, _ in pairs),
        tuple(s for _, s in pairs),
        budget,
        require_connected=require_connected,
    )


def generate_er(n_nodes: int, avg_degree: float, seed: int, budget: int = 1000) -> Network:
    """Uniform connected graph with exactly ``K = n_nodes * avg_degree / 2`` edges.

    Samples ``K`` of the ``N(N-1)/2`` node pairs uniformly and rejects
    disconnected draws.  All edges are Bell until :func:`assign_states` runs.
    """
    if n_nodes < 2:
        raise NetworkError(f"n_nodes must be >= 2, got {n_nodes}")
    k_float = n_nodes * avg_degree / 2.0
    n_edges = int(round(k_float))
    if abs(k_float - n_edges) > 1e-9:
        raise NetworkError(f"n_nodes*avg_degree/2 = {k_float} is not an integer edge count")
    max_edges = n_nodes * (n_nodes - 1) // 2
    if n_edges > max_edges:
        raise NetworkError(f"K={n_edges} exceeds the complete graph ({max_edges} edges)")
    if n_edges < n_nodes - 1:
        raise NetworkError(f"K={n_edges} < N-1={n_nodes - 1}: no connected graph exists")
    rng = np.random.default_rng(seed)
    all_pairs = list(itertools.combinations(range(n_nodes), 2))
    for _ in range(ER_MAX_ATTEMPTS):
        pick = np.sort(rng.choice(len(all_pairs), size=n_edges, replace=False))
        edges = [all_pairs[i] for i in pick]
        if is_connected(n_nodes, edges):
            return Network(n_nodes, tuple(edges), (EdgeState.bell(),) * n_edges, budget)
    raise NetworkError(f"no connected graph after {ER_MAX_ATTEMPTS} attempts (N={n_nodes}, K={n_edges})")


def generate_lattice(side: int, budget: int = 1000) -> Network:
    """``side x side`` square lattice with open boundaries, node id ``row*side + col``."""
    if side < 2:
        raise NetworkError(f"side must be >= 2, got {side}")
    edges = []
    for r in range(side):
        for c in range(side):
            u = r * side + c
            if c + 1 < side:
                edges.append((u, u + 1))
            if r + 1 < side:
                edges.append((u, u + side))
    edges.sort()
    return Network(side * side, tuple(edges), (EdgeState.bell(),) * len(edges), budget)


@dataclass(frozen=True)
class ConstantFidelity:
    f0: float

    def __post_init__(self):
        if not (0.5 < self.f0 < 1.0):
            raise NetworkError(f"f0={self.f0} outside (0.5, 1)")

    def sample(self, rng, size):
        return np.full(size, self.f0)


@dataclass(frozen=True)
class GaussianFidelity:
    """Discrete truncated Gaussian over ``{0.55, 0.575, ..., 0.975}``."""

    mean: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise NetworkError(f"sigma must be positive, got {self.sigma}")

    @property
    def support(self) -> np.ndarray:
        return np.array(GAUSS_SUPPORT)

    def weights(self) -> np.ndarray:
        z = (self.support - self.mean) / self.sigma
        w = np.exp(-0.5 * z * z)
        return w / w.sum()

    def sample(self, rng, size):
        return rng.choice(self.support, size=size, p=self.weights())


def werner_from_f0(f0: float) -> float:
    return (4.0 * f0 - 1.0) / 3.0


def assign_states(net: Network, bell_fraction: float, f0, seed: int) -> Network:
    """Prepare ``round(bell_fraction*K)`` random edges as Bell, the rest as Werner.

    ``f0`` is a :class:`ConstantFidelity`, :class:`GaussianFidelity` or a plain
    float (constant fidelity).
    """
    if not (0.0 <= bell_fraction <= 1.0):
        raise NetworkError(f"bell_fraction={bell_fraction} outside [0, 1]")
    if not isinstance(f0, (ConstantFidelity, GaussianFidelity)):
        f0 = ConstantFidelity(float(f0))
    rng = np.random.default_rng(seed)
    n_edges = net.n_edges
    n_bell = int(round(bell_fraction * n_edges))
    bell = np.zeros(n_edges, dtype=bool)
    bell[rng.permutation(n_edges)[:n_bell]] = True
    fids = f0.sample(rng, int(n_edges - n_bell))
    states = []
    it = iter(fids)
    for is_bell in bell:
        if is_bell:
            states.append(EdgeState.bell())
        else:
            states.append(EdgeState.werner(werner_from_f0(float(next(it)))))
    return Network(net.n_nodes, net.edges, tuple(states), net.budget,
                   require_connected=net.require_connected)


@dataclass(frozen=True)
class PathSet:
    """All simple ``source -> target`` paths, lexicographic on node sequences."""

    source: int
    target: int
    node_paths: tuple[tuple[int, ...], ...]
    edge_paths: tuple[tuple[int, ...], ...]

    def __len__(self):
        return len(self.node_paths)


def enumerate_simple_paths(net: Network, a: int, b: int) -> PathSet:
    """Depth-first enumeration of every simple path between ``a`` and ``b``."""
    for node in (a, b):
        if not (0 <= node < net.n_nodes):
            raise NetworkError(f"node {node} outside [0, {net.n_nodes})")
    if a == b:
        raise NetworkError("source and target must differ")
    adj = net.adjacency()
    node_paths: list[tuple[int, ...]] = []
    edge_paths: list[tuple[int, ...]] = []
    nodes = [a]
    used_edges: list[int] = []
    on_path = [False] * net.n_nodes
    on_path[a] = True
    stack = [iter(adj[a])]
    while stack:
        step = next(stack[-1], None)
        if step is None:
            stack.pop()
            on_path[nodes.pop()] = False
            if used_edges:
                used_edges.pop()
            continue
        nbr, ei = step
        if on_path[nbr]:
            continue
        if nbr == b:
            node_paths.append(tuple(nodes) + (b,))
            edge_paths.append(tuple(used_edges) + (ei,))
            continue
        nodes.append(nbr)
        used_edges.append(ei)
        on_path[nbr] = True
        stack.append(iter(adj[nbr]))
    order = sorted(range(len(node_paths)), key=node_paths.__getitem__)
    return PathSet(a, b, tuple(node_paths[i] for i in order), tuple(edge_paths[i] for i in order))


@dataclass(frozen=True)
class DemandSpec:
    """Alice-Bob commodities with normalized demands ``nu_i`` (users / M)."""

    pairs: tuple[tuple[int, int], ...]
    demands: tuple[float, ...]

    @property
    def pair_count(self) -> int:
        return len(self.pairs)

    @property
    def total(self) -> float:
        return float(sum(self.demands))


def demand_for(net: Network, pairs: Sequence[tuple[int, int]]) -> DemandSpec:
    """``nu_i = min(deg A_i, deg B_i) / d`` measured on ``net``."""
    pairs = tuple((int(a), int(b)) for a, b in pairs)
    if not pairs:
        raise NetworkError("at least one Alice-Bob pair is required")
    seen = set()
    for a, b in pairs:
        if a == b:
            raise NetworkError(f"pair ({a},{b}): Alice and Bob must differ")
        for node in (a, b):
            if not (0 <= node < net.n_nodes):
                raise NetworkError(f"pair ({a},{b}): node {node} outside [0, {net.n_nodes})")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise NetworkError(f"pair ({a},{b}) listed twice")
        seen.add(key)
    deg = net.degrees()
    d = len(pairs)
    return DemandSpec(pairs, tuple(min(deg[a], deg[b]) / d for a, b in pairs))


def remove_edges(net: Network, edge_indices: Iterable[int]) -> Network:
    """Copy of ``net`` without the given edges; connectivity is not enforced."""
    drop = [int(i) for i in edge_indices]
    if len(set(drop)) != len(drop):
        raise NetworkError(f"duplicate edge index in {drop}")
    for i in drop:
        if not (0 <= i < net.n_edges):
            raise NetworkError(f"edge index {i} outside [0, {net.n_edges})")
    keep = [i for i in range(net.n_edges) if i not in set(drop)]
    return Network(
        net.n_nodes,
        tuple(net.edges[i] for i in keep),
        tuple(net.states[i] for i in keep),
        net.budget,
        require_connected=False,
    )


def network_to_dict(net: Network) -> dict:
    edges = []
    for (u, v), s in zip(net.edges, net.states):
        rec = {"u": u, "v": v, "kind": s.kind.value}
        if not s.is_bell:
            rec["p0"] = s.p0
        edges.append(rec)
    return {"version": FORMAT_VERSION, "n": net.n_nodes, "m_budget": net.budget, "edges": edges}


def network_from_dict(doc) -> Network:
    if not isinstance(doc, dict):
        raise NetworkError("document: expected a mapping at top level")
    for key in ("version", "n", "m_budget", "edges"):
        if key not in doc:
            raise NetworkError(f"{key}: missing field")
    if doc["version"] != FORMAT_VERSION:
        raise NetworkError(f"version: unsupported value {doc['version']!r}")
    for key in ("n", "m_budget"):
        if not isinstance(doc[key], int) or isinstance(doc[key], bool):
            raise NetworkError(f"{key}: expected an integer")
    if not isinstance(doc["edges"], list):
        raise NetworkError("edges: expected a list")
    edges, states = [], []
    for i, rec in enumerate(doc["edges"]):
        if not isinstance(rec, dict):
            raise NetworkError(f"edges[{i}]: expected a record")
        try:
            u, v, kind = int(rec["u"]), int(rec["v"]), rec["kind"]
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkError(f"edges[{i}]: malformed record ({exc})") from None
        if kind == "bell":
            if "p0" in rec and float(rec["p0"]) != 1.0:
                raise NetworkError(f"edges[{i}].p0: Bell edge must not carry p0 != 1")
            states.append(EdgeState.bell())
        elif kind == "werner":
            if "p0" not in rec:
                raise NetworkError(f"edges[{i}].p0: missing for Werner edge")
            try:
                states.append(EdgeState.werner(float(rec["p0"])))
            except NetworkError as exc:
                raise NetworkError(f"edges[{i}].{exc}") from None
        else:
            raise NetworkError(f"edges[{i}].kind: unknown kind {kind!r}")
        edges.append((u, v))
    return Network(doc["n"], tuple(edges), tuple(states), doc["m_budget"])


def save_network(net: Network) -> bytes:
    return (json.dumps(network_to_dict(net), indent=1) + "\n").encode()


def load_network(data: bytes | str) -> Network:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise NetworkError(f"document: not valid JSON ({exc})") from None
    return network_from_dict(doc)


def n_subsets(n_edges: int, max_size: int) -> int:
    return sum(math.comb(n_edges, s) for s in range(1, max_size + 1))


FIXTURES = ("braess8",)


def load_fixture(name: str) -> Network:
    """Shipped example network, e.g. ``"braess8"`` (8-node, pair (3, 6))."""
    from importlib import resources

    if name not in FIXTURES:
        raise NetworkError(f"fixture: unknown name {name!r} (available: {', '.join(FIXTURES)})")
    return load_network(resources.files("qbraess").joinpath("data", f"{name}.json").read_bytes())
