"""Compiled routing game: commodities, their path sets and edge incidence."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from . import _kernels, entops
from .netmodel import DemandSpec, Network, NetworkError, PathSet, enumerate_simple_paths


class NoPathError(NetworkError):
    """Some commodity has no Alice-Bob path."""


@dataclass(frozen=True)
class RoutingGame:
    """Flattened path structure for a network and a set of commodities.

    Paths of all commodities are concatenated; ``commodity[j]`` says which
    commodity path ``j`` serves and ``incidence[j, i]`` is 1 when path ``j``
    uses edge ``i``.  The edges of path ``j`` are
    ``path_edges[path_ptr[j]:path_ptr[j+1]]``.
    """

    net: Network
    demand: DemandSpec
    node_path_list: tuple[tuple[int, ...], ...]
    commodity: np.ndarray
    incidence: np.ndarray
    path_ptr: np.ndarray
    path_edges: np.ndarray
    response: entops.ResponseArrays

    @classmethod
    def build(cls, net: Network, demand: DemandSpec, path_sets=None) -> "RoutingGame":
        if path_sets is None:
            path_sets = tuple(enumerate_simple_paths(net, a, b) for a, b in demand.pairs)
        for ps in path_sets:
            if len(ps) == 0:
                raise NoPathError(f"no path between {ps.source} and {ps.target}")
        commodity, ptr, flat, nodes = [], [0], [], []
        for c, ps in enumerate(path_sets):
            for ep, np_ in zip(ps.edge_paths, ps.node_paths):
                commodity.append(c)
                nodes.append(tuple(np_))
                flat.extend(ep)
                ptr.append(len(flat))
        ptr = np.array(ptr, dtype=np.int64)
        flat = np.array(flat, dtype=np.int64)
        commodity = np.array(commodity, dtype=np.int64)
        incidence = np.zeros((len(commodity), net.n_edges))
        incidence[np.repeat(np.arange(len(commodity)), np.diff(ptr)), flat] = 1.0
        return cls(net, demand, tuple(nodes), commodity, incidence, ptr, flat,
                   entops.ResponseArrays.for_network(net))

    @cached_property
    def path_sets(self) -> tuple[PathSet, ...]:
        out = []
        edge_paths = self.edge_paths()
        for c, (a, b) in enumerate(self.demand.pairs):
            idx = np.flatnonzero(self.commodity == c)
            out.append(PathSet(a, b, tuple(self.node_path_list[j] for j in idx),
                               tuple(edge_paths[j] for j in idx)))
        return tuple(out)

    def has_paths_without(self, removed) -> bool:
        """Whether every commodity keeps a path once ``removed`` edges are gone."""
        removed = list(removed)
        alive = ~self.incidence[:, removed].any(axis=1)
        return bool(np.all(np.bincount(self.commodity[alive], minlength=self.n_commodities) > 0))

    def restrict(self, removed) -> "RoutingGame":
        """Game on ``net`` minus ``removed`` edges, keeping the original demand.

        Paths through removed edges are dropped; no re-enumeration is needed
        because every simple path of the subgraph is a simple path of the
        original graph.  Edge indices are renumbered to the reduced network.
        """
        from .netmodel import remove_edges

        removed = sorted(set(int(i) for i in removed))
        if not self.has_paths_without(removed):
            raise NoPathError(f"removing edges {removed} disconnects a commodity")
        sub = remove_edges(self.net, removed)
        kept_edges = np.ones(self.net.n_edges, dtype=bool)
        kept_edges[removed] = False
        remap = np.cumsum(kept_edges) - 1
        alive = ~self.incidence[:, removed].any(axis=1)
        keep = np.flatnonzero(alive)
        all_lengths = np.diff(self.path_ptr)
        lengths = all_lengths[keep]
        flat = self.path_edges[np.repeat(alive, all_lengths)]
        ptr = np.zeros(len(keep) + 1, dtype=np.int64)
        np.cumsum(lengths, out=ptr[1:])
        r = self.response
        response = entops.ResponseArrays(r.is_bell[kept_edges], r.p0[kept_edges], r.table_id[kept_edges],
                                         r.grid, r.values)
        return RoutingGame(sub, self.demand, tuple(self.node_path_list[j] for j in keep),
                           self.commodity[keep], self.incidence[np.ix_(keep, np.flatnonzero(kept_edges))],
                           ptr, remap[flat].astype(np.int64), response)

    @property
    def n_paths(self) -> int:
        return len(self.commodity)

    @property
    def n_commodities(self) -> int:
        return self.demand.pair_count

    @property
    def totals(self) -> np.ndarray:
        return np.asarray(self.demand.demands, dtype=float)

    def blocks(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.commodity == c) for c in range(self.n_commodities)]

    def node_paths(self) -> list[tuple[int, ...]]:
        return list(self.node_path_list)

    def edge_paths(self) -> list[tuple[int, ...]]:
        return [tuple(int(i) for i in self.path_edges[self.path_ptr[j]:self.path_ptr[j + 1]])
                for j in range(self.n_paths)]

    def loads(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.incidence

    def edge_params(self, loads) -> np.ndarray:
        return self.response(loads)

    def flow_state(self, x):
        """``(edge loads, edge parameters, path parameters)`` at path flows ``x``."""
        r = self.response
        return _kernels.flow_state(np.ascontiguousarray(x, dtype=float), self.path_ptr, self.path_edges,
                                   self.net.n_edges, r.is_bell, r.p0, r.table_id, r.grid, r.values)

    def path_params(self, x) -> np.ndarray:
        """End-to-end Werner parameter of every path at flow ``x``."""
        return self.flow_state(x)[2]

    def average_params(self, x, p=None) -> np.ndarray:
        """Per-commodity flow-weighted average parameter."""
        x = np.asarray(x, dtype=float)
        if p is None:
            p = self.path_params(x)
        sums = np.bincount(self.commodity, weights=p * x, minlength=self.n_commodities)
        return sums / self.totals

    def overall_average(self, x, p=None) -> float:
        x = np.asarray(x, dtype=float)
        if p is None:
            p = self.path_params(x)
        return float(np.dot(p, x) / self.totals.sum())

    def users(self, budget: int) -> np.ndarray:
        """Integer user counts ``round(nu_i * M)`` per commodity."""
        return np.array([int(round(nu * budget)) for nu in self.demand.demands], dtype=np.int64)

    def integer_response(self, budget: int, max_load: int) -> np.ndarray:
        """``G[i, k] = g(k / M)`` for every edge and integer loads ``0..max_load``.

        Column 0 is unused by the discrete dynamics and set to 1.
        """
        out = np.ones((self.net.n_edges, max_load + 1))
        bell = self.net.bell_mask()
        if np.any(bell):
            out[bell, 1:] = _bell_column(budget, max_load)
        p0s = self.net.p0_array()
        for p0 in np.unique(p0s[~bell]):
            sel = (~bell) & (p0s == p0)
            out[sel, 1:] = _werner_column(float(p0), budget, max_load)
        return out


@lru_cache(maxsize=64)
def _bell_column(budget: int, max_load: int) -> np.ndarray:
    col = entops.bell_response_g1(np.arange(1, max_load + 1) / budget)
    col.setflags(write=False)
    return col


@lru_cache(maxsize=512)
def _werner_column(p0: float, budget: int, max_load: int) -> np.ndarray:
    col = entops.werner_response_g2(p0, np.arange(1, max_load + 1) / budget)
    col.setflags(write=False)
    return col
