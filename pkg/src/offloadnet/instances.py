"""Random network instances and task sets, plus JSONL persistence.

Every random draw goes through a Philox stream derived from integer keys,
so an instance depends only on (master seed, split, index) and a task draw
only on (instance seed, draw index).
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .graphs import ConnectivityGraph, GraphError, NodeRole, conflict_graph, extend_graph

log = logging.getLogger(__name__)

ETA_UP = 100
ETA_DOWN = 1
JOB_RATE_RANGE = (0.015, 0.075)
TASK_FRACTION_RANGE = (0.3, 1.0)
SERVER_FRACTION_RANGE = (0.1, 0.25)
LINK_RATE_RANGE = (30.0, 70.0)
PARETO_SHAPE = 2.0
SERVER_RATE_MODE = 100.0
EDGE_RATE_MODE = 8.0

SPLITS = {"train": 0, "test": 1}


def stream(*keys: int) -> np.random.Generator:
    """Counter-based generator keyed by a tuple of nonnegative ints."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(keys))))


def instance_seed(master_seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([master_seed, SPLITS[split], index])
    return int(ss.generate_state(1, np.uint32)[0])


def round_half_even(x: float) -> int:
    return int(round(x))


@dataclass(frozen=True)
class Task:
    source: int
    job_rate: float
    eta_u: int = ETA_UP
    eta_d: int = ETA_DOWN
    servers: tuple[int, ...] = ()

    @property
    def eta(self) -> int:
        return self.eta_u + self.eta_d

    @property
    def packet_rate(self) -> float:
        return self.job_rate * self.eta


TaskSet = tuple  # tuple[Task, ...]


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    graph: ConnectivityGraph
    roles: np.ndarray
    link_rates: np.ndarray
    service_rates: np.ndarray
    seed: int = 0
    index: int = 0
    task_draws: tuple = field(default=(), repr=False)

    @property
    def size(self) -> int:
        return self.graph.node_count

    @cached_property
    def conflict(self):
        return conflict_graph(self.graph)

    @cached_property
    def extended(self):
        return extend_graph(self.graph, self.roles, self.link_rates, self.service_rates)

    @cached_property
    def servers(self) -> tuple[int, ...]:
        return tuple(np.flatnonzero(self.roles == NodeRole.SERVER).tolist())

    @cached_property
    def edge_nodes(self) -> tuple[int, ...]:
        return tuple(np.flatnonzero(self.roles == NodeRole.EDGE).tolist())

    @cached_property
    def relays(self) -> tuple[int, ...]:
        return tuple(np.flatnonzero(self.roles == NodeRole.RELAY).tolist())

    def __eq__(self, other):
        return isinstance(other, NetworkInstance) and to_record(self) == to_record(other)

    __hash__ = None


# ---------------------------------------------------------------- topology

def generate_ba(n: int, nu: int, rng: np.random.Generator) -> ConnectivityGraph:
    """Barabasi-Albert growth from a complete seed graph on nu+1 nodes.

    Each new node links to nu distinct existing nodes, picked with
    probability proportional to their current degree.
    """
    if nu < 1 or n <= nu:
        raise ValueError(f"need n > nu >= 1, got n={n}, nu={nu}")
    edges = list(itertools.combinations(range(nu + 1), 2))
    degree = np.zeros(n)
    degree[: nu + 1] = nu
    for v in range(nu + 1, n):
        p = degree[:v] / degree[:v].sum()
        targets = rng.choice(v, size=nu, replace=False, p=p)
        for t in targets:
            edges.append((int(t), v))
            degree[t] += 1
        degree[v] = nu
    return ConnectivityGraph.from_edges(n, edges)


def _lex_smallest_cut(g: nx.Graph, size: int, floor: int = -1):
    """Lexicographically smallest node set of the given size whose removal
    disconnects g, using only node ids > floor; None if there is none."""
    if size == 0:
        return () if not nx.is_connected(g) else None
    if size == 1:
        aps = [v for v in nx.articulation_points(g) if v > floor]
        return (min(aps),) if aps else None
    for a in sorted(v for v in g.nodes if v > floor):
        h = g.copy()
        h.remove_node(a)
        if h.number_of_nodes() < 2:
            break
        rest = _lex_smallest_cut(h, size - 1, a)
        if rest is not None:
            return (a,) + rest
    return None


def select_relays(g: ConnectivityGraph, rng: np.random.Generator | None = None) -> tuple[int, ...]:
    """Global minimum vertex cut; ties go to the lexicographically smallest set.

    The cut size comes from max-flow node connectivity. rng is accepted for
    interface symmetry and unused, since the result is deterministic.
    """
    n = g.node_count
    if g.edge_count == n * (n - 1) // 2:
        log.warning("complete graph has no vertex cut; no relays selected")
        return ()
    h = g.to_networkx()
    kappa = nx.node_connectivity(h)
    cut = _lex_smallest_cut(h, kappa)
    if cut is None:  # pragma: no cover
        raise GraphError("vertex cut search failed")
    return cut


def partition_stoer_wagner(g: ConnectivityGraph) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Sides of a global minimum edge cut (unit weights) as (larger, smaller)."""
    if g.node_count < 2:
        raise GraphError("need at least 2 nodes")
    _, (a, b) = nx.stoer_wagner(g.to_networkx())
    a, b = tuple(sorted(a)), tuple(sorted(b))
    if len(a) < len(b) or (len(a) == len(b) and a[0] < b[0]):
        a, b = b, a
    return a, b


def assign_roles(
    g: ConnectivityGraph,
    relays: Iterable[int],
    partition: tuple[Sequence[int], Sequence[int]],
    rng: np.random.Generator,
    server_fraction: float | None = None,
) -> np.ndarray:
    n = g.node_count
    relays = set(relays)
    big, small = partition
    if server_fraction is None:
        server_fraction = rng.uniform(*SERVER_FRACTION_RANGE)
    n_servers = round_half_even(server_fraction * n)
    if n - len(relays) < n_servers:
        raise GraphError("too many relays")
    first = sorted(set(small) - relays)
    second = sorted(set(big) - relays)
    if len(first) >= n_servers:
        servers = rng.choice(first, size=n_servers, replace=False).tolist()
    else:
        servers = first + rng.choice(second, size=n_servers - len(first), replace=False).tolist()
    roles = np.full(n, int(NodeRole.EDGE), dtype=np.int64)
    roles[list(relays)] = NodeRole.RELAY
    roles[servers] = NodeRole.SERVER
    return roles


def pareto(rng: np.random.Generator, mode: float, shape: float = PARETO_SHAPE, size=None):
    """Pareto draws by inverse CDF: mode * (1 - U)^(-1/shape)."""
    return mode * (1.0 - rng.random(size)) ** (-1.0 / shape)


def sample_rates(g: ConnectivityGraph, roles, rng: np.random.Generator):
    roles = np.asarray(roles)
    link_rates = rng.uniform(*LINK_RATE_RANGE, size=g.edge_count)
    u = rng.random(g.node_count)
    modes = np.where(roles == NodeRole.SERVER, SERVER_RATE_MODE, EDGE_RATE_MODE)
    service = modes * (1.0 - u) ** (-1.0 / PARETO_SHAPE)
    service[roles == NodeRole.RELAY] = 0.0
    return link_rates, service


def sample_tasks(
    instance: NetworkInstance, rng: np.random.Generator, task_fraction: float | None = None
) -> tuple[Task, ...]:
    edge_nodes = instance.edge_nodes
    if not edge_nodes:
        raise GraphError("instance has no edge nodes")
    if task_fraction is None:
        task_fraction = rng.uniform(*TASK_FRACTION_RANGE)
    count = round_half_even(task_fraction * len(edge_nodes))
    sources = sorted(rng.choice(edge_nodes, size=count, replace=False).tolist())
    rates = rng.uniform(*JOB_RATE_RANGE, size=count)
    servers = instance.servers
    return tuple(Task(int(s), float(r), ETA_UP, ETA_DOWN, servers) for s, r in zip(sources, rates))


def make_instance(n: int, seed: int, nu: int = 2, draws: int = 10, index: int = 0) -> NetworkInstance:
    rng = stream(seed, 0)
    g = generate_ba(n, nu, rng)
    relays = select_relays(g, rng)
    partition = partition_stoer_wagner(g)
    roles = assign_roles(g, relays, partition, rng)
    link_rates, service = sample_rates(g, roles, rng)
    inst = NetworkInstance(g, roles, link_rates, service, seed=seed, index=index)
    tasks = tuple(sample_tasks(inst, stream(seed, 1, d)) for d in range(draws))
    return NetworkInstance(g, roles, link_rates, service, seed=seed, index=index, task_draws=tasks)


def generate_split(
    split: str, count: int, sizes: Sequence[int], master_seed: int, nu: int = 2, draws: int = 10
) -> list[NetworkInstance]:
    return [
        make_instance(sizes[i % len(sizes)], instance_seed(master_seed, split, i), nu, draws, index=i)
        for i in range(count)
    ]


# ---------------------------------------------------------------- persistence

def to_record(inst: NetworkInstance) -> dict:
    return {
        "id": inst.index,
        "seed": inst.seed,
        "nodes": [
            {"id": v, "role": NodeRole(int(r)).name.lower(), "service_rate": float(mu)}
            for v, (r, mu) in enumerate(zip(inst.roles.tolist(), inst.service_rates.tolist()))
        ],
        "links": [
            {"u": int(u), "v": int(v), "rate": float(r)}
            for (u, v), r in zip(inst.graph.edges.tolist(), inst.link_rates.tolist())
        ],
        "task_draws": [
            [{"source": t.source, "job_rate": t.job_rate, "eta_u": t.eta_u, "eta_d": t.eta_d} for t in draw]
            for draw in inst.task_draws
        ],
    }


def from_record(rec: dict) -> NetworkInstance:
    nodes = sorted(rec["nodes"], key=lambda d: d["id"])
    n = len(nodes)
    roles = np.array([NodeRole[d["role"].upper()] for d in nodes], dtype=np.int64)
    service = np.array([d["service_rate"] for d in nodes], dtype=float)
    links = rec["links"]
    g = ConnectivityGraph.from_edges(n, [(d["u"], d["v"]) for d in links])
    by_pair = {(min(d["u"], d["v"]), max(d["u"], d["v"])): d["rate"] for d in links}
    link_rates = np.array([by_pair[tuple(e)] for e in g.edges.tolist()], dtype=float)
    servers = tuple(np.flatnonzero(roles == NodeRole.SERVER).tolist())
    draws = tuple(
        tuple(Task(int(t["source"]), float(t["job_rate"]), int(t["eta_u"]), int(t["eta_d"]), servers) for t in draw)
        for draw in rec.get("task_draws", [])
    )
    for d in draws:
        for t in d:
            if roles[t.source] != NodeRole.EDGE:
                raise GraphError(f"task source {t.source} is not an edge node")
    return NetworkInstance(g, roles, link_rates, service, seed=int(rec["seed"]),
                           index=int(rec.get("id", 0)), task_draws=draws)


def dumps(inst: NetworkInstance) -> str:
    return json.dumps(to_record(inst), separators=(",", ":"))


def write_jsonl(path, instances: Iterable[NetworkInstance]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for inst in instances:
            f.write(dumps(inst) + "\n")


def read_jsonl(path) -> list[NetworkInstance]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(from_record(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad instance record ({exc})") from exc
    return out
