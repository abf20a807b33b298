"""Greedy per-task offloading on weighted extended graphs, and latency evaluation.

Each task independently picks the cheapest node among its source and the
servers, where the cost of a remote node is the round-trip packet delay
along the weighted shortest path, bounded below by two slots per physical
hop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .graphs import ExtendedGraph
from .instances import NetworkInstance, Task
from .queueing import congestion_flags, estimate_delays


@dataclass(frozen=True)
class ShortestPaths:
    source: int
    dist: np.ndarray
    parent: np.ndarray
    parent_link: np.ndarray
    hops: np.ndarray  # physical links only

    def route(self, target: int) -> list[int]:
        """Link ids from source to target, in travel order."""
        links = []
        v = target
        while v != self.source:
            e = self.parent_link[v]
            if e < 0:
                raise ValueError(f"node {target} unreachable from {self.source}")
            links.append(int(e))
            v = self.parent[v]
        links.reverse()
        return links


@dataclass(frozen=True)
class OffloadDecision:
    targets: tuple[int, ...]
    routes: tuple[tuple[int, ...], ...]
    costs: tuple[float, ...] = ()


@dataclass(frozen=True)
class RouteMatrices:
    gamma: np.ndarray  # (links, tasks)
    gamma_minus: np.ndarray


@dataclass(frozen=True)
class PolicyResult:
    latency: np.ndarray
    congested: np.ndarray
    objective: float
    decision: OffloadDecision
    matrices: RouteMatrices
    traffic: np.ndarray
    delays: np.ndarray
    service: object


def baseline_weights(ext: ExtendedGraph) -> np.ndarray:
    if np.any(ext.rates <= 0):
        raise ValueError("zero link rate")
    return 1.0 / ext.rates


def shortest_paths(ext: ExtendedGraph, weights, source: int) -> ShortestPaths:
    w = np.ascontiguousarray(weights, dtype=float)
    if w.shape != (ext.n_links,):
        raise ValueError("one weight per extended link expected")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    indptr, nbr, eid = ext.csr
    physical = ~ext.is_virtual
    dist, parent, plink, hops = _kernels.dijkstra(indptr, nbr, eid, w, physical, int(source))
    if not np.all(np.isfinite(dist)):
        raise ValueError("extended graph is disconnected")
    return ShortestPaths(int(source), dist, parent, plink, hops)


def offload_cost(task: Task, candidate: int, sp: ShortestPaths, ext: ExtendedGraph, weights) -> float:
    m = task.source
    if candidate == m:
        return max(task.eta_u * float(weights[ext.virtual_link[m]]), 0.0)
    if candidate not in task.servers:
        raise ValueError(f"node {candidate} is not an offloading option for task at {m}")
    to_node = float(sp.dist[candidate])
    up = to_node + float(weights[ext.virtual_link[candidate]])
    return max(task.eta_u * up + task.eta_d * to_node, 2.0 * int(sp.hops[candidate]))


def decide(ext: ExtendedGraph, weights, tasks) -> OffloadDecision:
    targets, routes, costs = [], [], []
    for task in tasks:
        m = task.source
        best, best_cost = m, offload_cost(task, m, None, ext, weights)
        sp = None
        if task.servers:
            sp = shortest_paths(ext, weights, m)
            for v in sorted(task.servers):
                c = offload_cost(task, v, sp, ext, weights)
                if c < best_cost:
                    best, best_cost = v, c
        if best == m:
            route = (ext.virtual_link[m],)
        else:
            route = tuple(sp.route(best)) + (ext.virtual_link[best],)
        targets.append(best)
        routes.append(route)
        costs.append(best_cost)
    return OffloadDecision(tuple(targets), tuple(routes), tuple(costs))


def local_decision(ext: ExtendedGraph, tasks) -> OffloadDecision:
    targets = tuple(t.source for t in tasks)
    routes = tuple((ext.virtual_link[t.source],) for t in tasks)
    return OffloadDecision(targets, routes)


def build_route_matrices(decision: OffloadDecision, ext: ExtendedGraph) -> RouteMatrices:
    gamma = np.zeros((ext.n_links, len(decision.routes)))
    for j, route in enumerate(decision.routes):
        gamma[list(route), j] = 1.0
    gm = gamma.copy()
    gm[ext.n_physical:] = 0.0
    return RouteMatrices(gamma, gm)


def task_packet_rates(tasks) -> np.ndarray:
    return np.array([t.job_rate * t.eta for t in tasks], dtype=float)


def traffic(matrices: RouteMatrices, tasks) -> np.ndarray:
    """Per-link packet arrival rate induced by all routes."""
    return matrices.gamma @ task_packet_rates(tasks)


def empirical_latency(tau, matrices: RouteMatrices, tasks) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    if tau.shape[0] != matrices.gamma.shape[0] or matrices.gamma.shape[1] != len(tasks):
        raise ValueError("dimension mismatch")
    eta_u = np.array([t.eta_u for t in tasks], dtype=float)
    eta_d = np.array([t.eta_d for t in tasks], dtype=float)
    transfer = (tau @ matrices.gamma) * eta_u + (tau @ matrices.gamma_minus) * eta_d
    return np.maximum(transfer, 2.0 * matrices.gamma_minus.sum(axis=0))


def evaluate_decision(instance: NetworkInstance, tasks, decision: OffloadDecision, T=1000, K=10) -> PolicyResult:
    ext = instance.extended
    mats = build_route_matrices(decision, ext)
    rho = traffic(mats, tasks)
    tau, svc = estimate_delays(instance.conflict, ext, rho, T=T, K=K)
    u = empirical_latency(tau, mats, tasks)
    unstable = congestion_flags(svc, rho)
    congested = (mats.gamma[unstable] > 0).any(axis=0) if len(tasks) else np.zeros(0, dtype=bool)
    return PolicyResult(u, congested, float(u.sum()), decision, mats, rho, tau, svc)


def evaluate_policy(instance: NetworkInstance, tasks, weights, T=1000, K=10) -> PolicyResult:
    """decide -> route matrices -> contention delays under the induced traffic -> latency."""
    decision = decide(instance.extended, weights, tasks)
    return evaluate_decision(instance, tasks, decision, T=T, K=K)


def evaluate_local(instance: NetworkInstance, tasks, T=1000, K=10) -> PolicyResult:
    return evaluate_decision(instance, tasks, local_decision(instance.extended, tasks), T=T, K=K)
