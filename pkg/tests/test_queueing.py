import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offloadnet.graphs import ConnectivityGraph, LineGraph, NodeRole, conflict_graph, extend_graph
from offloadnet.queueing import (
    ServiceEstimate, congestion_flags, estimate_delays, estimate_delays_vjp, service_rates,
)
from oracles import central_difference, reference_contention, reference_delay


def relay_path(rates):
    """Path of relay nodes: physical links only, consecutive links conflict."""
    n = len(rates) + 1
    g = ConnectivityGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])
    ext = extend_graph(g, [NodeRole.RELAY] * n, rates, [0.0] * n)
    return conflict_graph(g), ext


def test_isolated_link():
    cg, ext = relay_path([50.0])
    for K in (1, 5, 10):
        d, svc = estimate_delays(cg, ext, [10.0], K=K)
        assert svc.mu_hat[0] == 50.0
        assert d[0] == pytest.approx(0.025, rel=1e-15)


def test_two_link_fixed_point():
    cg, ext = relay_path([50.0, 50.0])
    d, svc = estimate_delays(cg, ext, [10.0, 10.0], K=10)
    assert np.all(np.abs(svc.mu_hat - 40.0) < 0.1)
    d, svc = estimate_delays(cg, ext, [10.0, 10.0], K=200)
    assert svc.mu_hat == pytest.approx([40.0, 40.0], abs=1e-9)
    assert d == pytest.approx([1 / 30, 1 / 30], rel=1e-8)


def test_two_link_saturated():
    cg, ext = relay_path([50.0, 50.0])
    d, svc = estimate_delays(cg, ext, [30.0, 30.0], T=1000, K=10)
    assert svc.mu_hat.tolist() == [25.0, 25.0]
    assert svc.congested.all()
    assert d.tolist() == [1200.0, 1200.0]


def test_virtual_links_skip_contention(small_ext):
    cg = conflict_graph(small_ext.base)
    x = np.array([5.0, 5.0, 2.0, 120.0])
    d, svc = estimate_delays(cg, small_ext, x, T=1000)
    assert svc.mu_hat[2:].tolist() == [8.0, 100.0]
    assert d[2] == pytest.approx(1 / 6)
    # overloaded server: congestion branch on a virtual link
    assert d[3] == pytest.approx(1000 * 120 / 100)


def test_zero_arrivals_give_contention_free_delays(small_ext):
    cg = conflict_graph(small_ext.base)
    d, svc = estimate_delays(cg, small_ext, np.zeros(4))
    assert d == pytest.approx(1 / small_ext.rates, rel=1e-15)
    assert not svc.congested.any()


def test_input_validation(small_ext):
    cg = conflict_graph(small_ext.base)
    with pytest.raises(ValueError):
        estimate_delays(cg, small_ext, [-1.0, 0, 0, 0])
    with pytest.raises(ValueError):
        estimate_delays(cg, small_ext, [0.0, 0, 0])
    with pytest.raises(ValueError):
        estimate_delays(cg, small_ext, np.zeros(4), rates=[0.0, 1, 1, 1])
    with pytest.raises(ValueError):
        estimate_delays(LineGraph.from_pairs(3, []), small_ext, np.zeros(4))


def test_vjp_closed_forms():
    cg, ext = relay_path([50.0])
    assert estimate_delays_vjp(cg, ext, [10.0], [1.0])[0] == pytest.approx(1 / 40**2, rel=1e-12)
    assert estimate_delays_vjp(cg, ext, [60.0], [1.0], T=1000)[0] == pytest.approx(20.0, rel=1e-12)


def test_vjp_two_links_finite_difference():
    cg, ext = relay_path([50.0, 50.0])
    x0 = np.array([10.0, 10.0])
    for g in (np.array([1.0, 0.0]), np.array([0.3, -0.7])):
        analytic = estimate_delays_vjp(cg, ext, x0, g, K=10)
        numeric = central_difference(lambda x: g @ estimate_delays(cg, ext, x, K=10)[0], x0, 1e-4)
        assert analytic == pytest.approx(numeric, rel=1e-4)


def random_conflict_instance(rng, max_links=6):
    n_links = int(rng.integers(1, max_links + 1))
    pairs = [p for p in itertools.combinations(range(n_links), 2) if rng.random() < 0.5]
    n = n_links + 1
    g = ConnectivityGraph.from_edges(n, [(i, i + 1) for i in range(n_links)])
    rates = rng.uniform(30, 70, n_links)
    ext = extend_graph(g, [NodeRole.RELAY] * n, rates, [0.0] * n)
    return LineGraph.from_pairs(n_links, pairs), ext, pairs, rates


def test_matches_reference_iteration_on_random_graphs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        cg, ext, pairs, rates = random_conflict_instance(rng)
        x = rng.uniform(0, 40, len(rates))
        d, svc = estimate_delays(cg, ext, x, T=1000, K=10)
        ref = reference_contention(rates.tolist(), x.tolist(), pairs, 10)
        assert np.max(np.abs(svc.mu_hat - ref)) < 1e-12
        ref_d = [reference_delay(m, xi, 1000) for m, xi in zip(ref, x)]
        assert d == pytest.approx(ref_d, rel=1e-12)


def test_vjp_random_finite_differences():
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 100:
        cg, ext, pairs, rates = random_conflict_instance(rng)
        x = rng.uniform(0, 40, len(rates))
        d, svc = estimate_delays(cg, ext, x, K=10)
        # stay clear of kinks: busy ratio near 1, branch boundary near mu == x
        ratios = x / svc.history[:-1]
        gap = np.abs(svc.mu_hat - x)
        if np.min(np.abs(ratios - 1)) < 0.05 or np.min(gap) < 1.0:
            continue
        g = rng.normal(size=len(x))
        analytic = estimate_delays_vjp(cg, ext, x, g, K=10)
        numeric = central_difference(lambda z: g @ estimate_delays(cg, ext, z, K=10)[0], x, 1e-4)
        scale = np.max(np.abs(numeric)) + 1e-12
        assert np.max(np.abs(analytic - numeric)) / scale < 1e-4
        checked += 1


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_iteration_bounds(seed):
    rng = np.random.default_rng(seed)
    cg, ext, pairs, rates = random_conflict_instance(rng)
    x = rng.uniform(0, 60, len(rates))
    svc = service_rates(cg, ext, x, K=10)
    deg = cg.degree
    lo = rates / (1 + deg)
    for mu in svc.history:
        assert np.all(mu >= lo - 1e-12)
        assert np.all(mu <= rates + 1e-12)
    busy = np.minimum(x / svc.history[-2], 1.0)
    assert np.all((busy >= 0) & (busy <= 1))
    d, _ = estimate_delays(cg, ext, x, K=10)
    assert np.all(d > 0)
    cong = svc.congested
    assert np.all(d[cong] >= 1000 * x[cong] / svc.mu_hat[cong] - 1e-9)


def test_isolated_link_matches_gg1_response_time():
    cg, ext = relay_path([37.0])
    for lam in (0.0, 5.0, 20.0, 36.0):
        assert estimate_delays(cg, ext, [lam])[0][0] == pytest.approx(1 / (37 - lam), rel=1e-14)


def test_congestion_flags():
    svc = ServiceEstimate(np.array([25.0, 40.0]), np.array([True, False]), np.zeros((1, 2)))
    assert congestion_flags(svc, [30.0, 10.0]).tolist() == [True, False]
    assert not congestion_flags(svc, [0.0, 0.0]).any()
    with pytest.raises(ValueError):
        congestion_flags(svc, [1.0])
