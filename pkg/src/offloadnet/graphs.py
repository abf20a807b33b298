"""Graph structures: connectivity graph, conflict graph, extended graph, line graphs.

Node and link ids are dense integers. Physical links are ordered by
(min endpoint, max endpoint); virtual links follow, ordered by owner node.
Every structure is immutable after construction.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np


class GraphError(ValueError):
    pass


class NodeRole(enum.IntEnum):
    EDGE = 0
    RELAY = 1
    SERVER = 2


def _csr(n: int, pairs: np.ndarray, payload: np.ndarray | None = None):
    """Symmetric CSR from undirected pairs; neighbors sorted by (neighbor, payload)."""
    if len(pairs) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return np.zeros(n + 1, dtype=np.int64), empty, empty
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    pay = np.arange(len(pairs)) if payload is None else payload
    pay = np.concatenate([pay, pay])
    order = np.lexsort((pay, dst, src))
    src, dst, pay = src[order], dst[order], pay[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, dst.astype(np.int64), pay.astype(np.int64)


@dataclass(frozen=True, eq=False)
class LineGraph:
    """Vertex i stands for link i of some base graph; adjacency = shared endpoint.

    Also used as a general conflict graph (vertices = links, edges = conflicts).
    """

    vertex_count: int
    edges: np.ndarray  # (m, 2) int, i < j, lexicographic
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @classmethod
    def from_pairs(cls, vertex_count: int, pairs) -> "LineGraph":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs):
            if np.any(pairs[:, 0] == pairs[:, 1]):
                raise GraphError("self-conflict")
            if pairs.min() < 0 or pairs.max() >= vertex_count:
                raise GraphError("conflict pair out of range")
            pairs = np.sort(pairs, axis=1)
            pairs = np.unique(pairs, axis=0)
        indptr, indices, _ = _csr(vertex_count, pairs)
        for a in (pairs, indptr, indices):
            a.setflags(write=False)
        return cls(vertex_count, pairs, indptr, indices)

    @cached_property
    def degree(self) -> np.ndarray:
        d = np.diff(self.indptr)
        d.setflags(write=False)
        return d

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def __eq__(self, other):
        return (
            isinstance(other, LineGraph)
            and self.vertex_count == other.vertex_count
            and np.array_equal(self.edges, other.edges)
        )

    __hash__ = None


ConflictGraph = LineGraph


def line_graph(edges: Sequence[tuple[int, int]] | np.ndarray) -> LineGraph:
    """Line graph over links in the given order (vertex i = edges[i])."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        raise GraphError("no links")
    m = len(edges)
    # group link ids by endpoint, then pair up every two links at each node
    ends = np.concatenate([edges[:, 0], edges[:, 1]])
    ids = np.concatenate([np.arange(m), np.arange(m)])
    order = np.lexsort((ids, ends))
    ends, ids = ends[order], ids[order]
    pairs = []
    start = 0
    for stop in np.flatnonzero(np.diff(ends)).tolist() + [len(ends) - 1]:
        group = ids[start:stop + 1]
        if len(group) > 1:
            a, b = np.triu_indices(len(group), k=1)
            pairs.append(np.stack([group[a], group[b]], axis=1))
        start = stop + 1
    pairs = np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)
    return LineGraph.from_pairs(m, pairs)


@dataclass(frozen=True, eq=False)
class ConnectivityGraph:
    node_count: int
    edges: np.ndarray  # (m, 2) int, u < v, lexicographic

    @classmethod
    def from_edges(cls, node_count: int, edges, check_connected: bool = True) -> "ConnectivityGraph":
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if np.any(e[:, 0] == e[:, 1]):
            raise GraphError("self-loop")
        if len(e) and (e.min() < 0 or e.max() >= node_count):
            raise GraphError("edge endpoint out of range")
        e = np.sort(e, axis=1)  # copies
        e = e[np.lexsort((e[:, 1], e[:, 0]))]
        if len(e) > 1 and np.any(np.all(e[1:] == e[:-1], axis=1)):
            raise GraphError("duplicate edge")
        e.setflags(write=False)
        g = cls(node_count, e)
        if check_connected and not g.is_connected():
            raise GraphError("graph is not connected")
        return g

    @cached_property
    def _csr(self):
        return _csr(self.node_count, self.edges)

    @cached_property
    def adjacency(self) -> list[list[int]]:
        indptr, nbr, _ = self._csr
        return [nbr[indptr[v]:indptr[v + 1]].tolist() for v in range(self.node_count)]

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self._csr[0])

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def is_connected(self, removed=()) -> bool:
        removed = set(removed)
        keep = [v for v in range(self.node_count) if v not in removed]
        if not keep:
            return True
        adj = self.adjacency
        seen = {keep[0]}
        stack = [keep[0]]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen and v not in removed:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == len(keep)

    def to_networkx(self):
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(range(self.node_count))
        g.add_edges_from(map(tuple, self.edges.tolist()))
        return g

    def __eq__(self, other):
        return (
            isinstance(other, ConnectivityGraph)
            and self.node_count == other.node_count
            and np.array_equal(self.edges, other.edges)
        )

    __hash__ = None


def conflict_graph(g: ConnectivityGraph) -> ConflictGraph:
    """Interface-conflict graph: links sharing a device conflict."""
    return line_graph(g.edges)


@dataclass(frozen=True, eq=False)
class ExtendedGraph:
    """Connectivity graph plus one virtual node/link per edge or server node.

    Virtual node of owner v gets id ``node_count + k`` where k is v's rank
    among computing nodes. Link vectors have the physical links first.
    """

    base: ConnectivityGraph
    roles: np.ndarray
    owners: np.ndarray  # computing nodes, ascending; owners[k] owns virtual node n + k
    edges: np.ndarray  # (|E| + |owners|, 2)
    rates: np.ndarray  # r^l

    @property
    def n_physical(self) -> int:
        return self.base.edge_count

    @property
    def n_links(self) -> int:
        return len(self.edges)

    @property
    def node_count(self) -> int:
        return self.base.node_count + len(self.owners)

    @cached_property
    def is_virtual(self) -> np.ndarray:
        q = np.zeros(self.n_links, dtype=bool)
        q[self.n_physical:] = True
        return q

    @cached_property
    def is_server_virtual(self) -> np.ndarray:
        w = np.zeros(self.n_links, dtype=bool)
        w[self.n_physical:] = self.roles[self.owners] == NodeRole.SERVER
        return w

    @cached_property
    def virtual_link(self) -> dict[int, int]:
        """Owner node id -> index of its virtual link."""
        return {int(v): self.n_physical + k for k, v in enumerate(self.owners)}

    @cached_property
    def virtual_node(self) -> dict[int, int]:
        n = self.base.node_count
        return {int(v): n + k for k, v in enumerate(self.owners)}

    @cached_property
    def csr(self):
        """(indptr, neighbor, link id) over the extended node set."""
        return _csr(self.node_count, self.edges)

    @cached_property
    def line_graph(self) -> "ExtendedLineGraph":
        lg = line_graph(self.edges)
        return ExtendedLineGraph(
            lg.vertex_count, lg.edges, lg.indptr, lg.indices,
            is_virtual=self.is_virtual, is_server_virtual=self.is_server_virtual,
        )


@dataclass(frozen=True, eq=False)
class ExtendedLineGraph(LineGraph):
    is_virtual: np.ndarray = field(default=None, repr=False)
    is_server_virtual: np.ndarray = field(default=None, repr=False)


def extend_graph(g: ConnectivityGraph, roles, link_rates, service_rates) -> ExtendedGraph:
    roles = np.array(roles, dtype=np.int64)
    link_rates = np.array(link_rates, dtype=float)
    service_rates = np.array(service_rates, dtype=float)
    if roles.shape != (g.node_count,) or service_rates.shape != (g.node_count,):
        raise GraphError("per-node arrays must have one entry per node")
    if link_rates.shape != (g.edge_count,):
        raise GraphError("link_rates must have one entry per link")
    if np.any(link_rates <= 0):
        raise GraphError("link rates must be positive")
    owners = np.flatnonzero(roles != NodeRole.RELAY)
    if np.any(service_rates[owners] <= 0):
        raise GraphError("edge and server nodes need a positive service rate")
    n = g.node_count
    vedges = np.stack([owners, n + np.arange(len(owners))], axis=1).reshape(-1, 2)
    edges = np.concatenate([g.edges, vedges]).astype(np.int64)
    rates = np.concatenate([link_rates, service_rates[owners]])
    for a in (roles, owners, edges, rates):
        a.setflags(write=False)
    return ExtendedGraph(g, roles, owners, edges, rates)
