import itertools
import json
import logging

import networkx as nx
import numpy as np
import pytest

from offloadnet.graphs import ConnectivityGraph, GraphError, NodeRole
from offloadnet.instances import (
    assign_roles, dumps, from_record, generate_ba, generate_split, instance_seed, make_instance,
    pareto, partition_stoer_wagner, read_jsonl, sample_rates, sample_tasks, select_relays, stream,
    to_record, write_jsonl,
)
from oracles import brute_min_edge_cut, is_connected_without


def test_ba_seed_graph_only():
    g = generate_ba(3, 2, stream(0))
    assert g.edges.tolist() == [[0, 1], [0, 2], [1, 2]]


@pytest.mark.parametrize("n,expected", [(20, 37), (110, 217)])
def test_ba_edge_count(n, expected):
    nu = 2
    assert nu * (n - nu - 1) + nu * (nu + 1) // 2 == expected
    g = generate_ba(n, nu, stream(42))
    assert g.edge_count == expected
    assert g.is_connected()
    assert g.degree.min() >= nu


def test_ba_has_hubs():
    g = generate_ba(110, 2, stream(3))
    assert g.degree.max() >= 5 * 2


def test_ba_rejects_bad_sizes():
    with pytest.raises(ValueError):
        generate_ba(2, 2, stream(0))


def test_relays_on_path():
    g = ConnectivityGraph.from_edges(3, [(0, 1), (1, 2)])
    assert select_relays(g) == (1,)


def test_relays_on_bowtie():
    g = ConnectivityGraph.from_edges(5, [(0, 1), (0, 2), (1, 2), (2, 3), (2, 4), (3, 4)])
    assert select_relays(g) == (2,)


def test_relays_complete_graph_warns(caplog):
    g = ConnectivityGraph.from_edges(4, list(itertools.combinations(range(4), 2)))
    with caplog.at_level(logging.WARNING):
        assert select_relays(g) == ()
    assert "no vertex cut" in caplog.text


@pytest.mark.parametrize("seed", range(5))
def test_relays_on_ba_are_minimum_and_lex_smallest(seed):
    g = generate_ba(20, 2, stream(seed))
    cut = select_relays(g)
    assert 1 <= len(cut) <= 2
    assert not is_connected_without(20, g.edges.tolist(), set(cut))
    assert len(cut) == nx.node_connectivity(g.to_networkx())
    # exhaustive check of the tie-break among cuts of the same size
    for cand in itertools.combinations(range(20), len(cut)):
        if not is_connected_without(20, g.edges.tolist(), set(cand)):
            assert cand == cut
            break


def test_stoer_wagner_path():
    g = ConnectivityGraph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    big, small = partition_stoer_wagner(g)
    assert brute_min_edge_cut(4, g.edges.tolist()) == 1
    cut = sum(1 for u, v in g.edges.tolist() if (u in small) != (v in small))
    assert cut == 1
    assert len(big) >= len(small)
    assert sorted(big + small) == [0, 1, 2, 3]


def test_stoer_wagner_barbell():
    k4a = list(itertools.combinations(range(4), 2))
    k4b = list(itertools.combinations(range(4, 8), 2))
    g = ConnectivityGraph.from_edges(8, k4a + k4b + [(3, 4)])
    big, small = partition_stoer_wagner(g)
    assert set(small) in ({0, 1, 2, 3}, {4, 5, 6, 7})


def test_stoer_wagner_triangle():
    g = ConnectivityGraph.from_edges(3, [(0, 1), (0, 2), (1, 2)])
    big, small = partition_stoer_wagner(g)
    assert brute_min_edge_cut(3, g.edges.tolist()) == 2
    assert len(small) == 1 and len(big) == 2


@pytest.mark.parametrize("n,u,expected", [(20, 0.1, 2), (110, 0.25, 28)])
def test_server_count(n, u, expected):
    g = generate_ba(n, 2, stream(0))
    roles = assign_roles(g, select_relays(g), partition_stoer_wagner(g), stream(1), server_fraction=u)
    assert int(np.sum(roles == NodeRole.SERVER)) == expected


def test_server_overflow_to_larger_side():
    g = ConnectivityGraph.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
    roles = assign_roles(g, relays=[1], partition=((2, 3, 4, 5), (0, 1)), rng=stream(0), server_fraction=0.5)
    servers = set(np.flatnonzero(roles == NodeRole.SERVER).tolist())
    assert len(servers) == 3
    assert 0 in servers and len(servers & {2, 3, 4, 5}) == 2
    assert roles[1] == NodeRole.RELAY


def test_too_many_relays():
    g = ConnectivityGraph.from_edges(3, [(0, 1), (1, 2)])
    with pytest.raises(GraphError, match="too many relays"):
        assign_roles(g, [0, 1, 2], ((0, 1), (2,)), stream(0), server_fraction=0.25)


def test_pareto_quantiles():
    class Fixed:
        def __init__(self, u):
            self.u = u

        def random(self, size=None):
            return self.u

    assert pareto(Fixed(0.0), 8.0) == 8.0
    assert pareto(Fixed(0.5), 100.0) == pytest.approx(100 * np.sqrt(2), abs=1e-12)
    assert 100 * np.sqrt(2) == pytest.approx(141.42, abs=0.01)


def test_uniform_link_rates_mean():
    g = ConnectivityGraph.from_edges(2, [(0, 1)])
    draws = stream(9).uniform(30, 70, size=100_000)
    assert abs(draws.mean() - 50) < 0.2
    link, service = sample_rates(g, [NodeRole.EDGE, NodeRole.SERVER], stream(1))
    assert 30 <= link[0] <= 70
    assert service[0] >= 8 and service[1] >= 100


def test_rate_invariants_on_generated_instance():
    inst = make_instance(40, 123, draws=0)
    assert np.all((inst.link_rates >= 30) & (inst.link_rates <= 70))
    assert np.all(inst.service_rates[list(inst.servers)] >= 100)
    assert np.all(inst.service_rates[list(inst.edge_nodes)] >= 8)
    assert np.all(inst.service_rates[list(inst.relays)] == 0)


def _edge_only_instance(n_edge):
    inst = make_instance(20, 0, draws=0)
    roles = np.full(20, int(NodeRole.RELAY))
    roles[:n_edge] = NodeRole.EDGE
    roles[19] = NodeRole.SERVER
    from offloadnet.instances import NetworkInstance

    return NetworkInstance(inst.graph, roles, inst.link_rates, np.where(roles == 1, 0.0, 10.0))


@pytest.mark.parametrize("frac,count", [(0.3, 3), (1.0, 10)])
def test_task_count(frac, count):
    inst = _edge_only_instance(10)
    tasks = sample_tasks(inst, stream(4), task_fraction=frac)
    assert len(tasks) == count
    assert len({t.source for t in tasks}) == count


def test_task_parameters():
    inst = make_instance(50, 7)
    for draw in inst.task_draws:
        for t in draw:
            assert (t.eta_u, t.eta_d, t.eta) == (100, 1, 101)
            assert 0.015 <= t.job_rate <= 0.075
            assert inst.roles[t.source] == NodeRole.EDGE
            assert t.servers == inst.servers


def test_sample_tasks_needs_edge_nodes():
    inst = _edge_only_instance(0)
    with pytest.raises(GraphError):
        sample_tasks(inst, stream(0))


def test_generation_is_deterministic():
    a = make_instance(60, 99)
    b = make_instance(60, 99)
    assert dumps(a) == dumps(b)
    assert dumps(make_instance(60, 98)) != dumps(a)


def test_split_seeds_differ():
    assert instance_seed(0, "train", 0) != instance_seed(0, "test", 0)
    assert instance_seed(0, "train", 0) != instance_seed(0, "train", 1)


def test_relay_removal_disconnects():
    for inst in generate_split("train", 10, [20, 30], 5, draws=0):
        if inst.relays:
            assert not inst.graph.is_connected(inst.relays)


def test_serialization_round_trip(tmp_path):
    insts = generate_split("test", 4, [20, 30], 1, draws=3)
    path = tmp_path / "x.jsonl"
    write_jsonl(path, insts)
    back = read_jsonl(path)
    assert back == insts
    for a, b in zip(insts, back):
        assert np.array_equal(a.link_rates, b.link_rates)
        assert a.task_draws == b.task_draws
    assert from_record(json.loads(dumps(insts[0]))) == insts[0]


def test_record_fields():
    rec = to_record(make_instance(20, 3, draws=1))
    assert set(rec) >= {"seed", "nodes", "links", "task_draws"}
    assert set(rec["nodes"][0]) == {"id", "role", "service_rate"}
    assert set(rec["links"][0]) == {"u", "v", "rate"}
    if rec["task_draws"][0]:
        assert set(rec["task_draws"][0][0]) == {"source", "job_rate", "eta_u", "eta_d"}


def test_scale_statistics():
    insts = generate_split("train", 1000, [20], 2024, draws=1)
    server_frac = np.mean([len(i.servers) / i.size for i in insts])
    task_frac = np.mean([len(i.task_draws[0]) / len(i.edge_nodes) for i in insts])
    assert 0.16 <= server_frac <= 0.19
    assert 0.62 <= task_frac <= 0.68
