"""Per-link service rates under contention and per-packet delays.

Physical links share the channel with conflicting neighbors whose queues
are non-empty; the busy probability of a link is min(x/mu, 1) and its
service rate is r/(1 + expected number of busy neighbors). The iteration
starts from the worst case mu = r/(1 + degree) and runs a fixed K rounds.
Virtual links (computation) are not scheduled, so their service rate is the
node's own rate.

A stable link (mu > x) has the G/G/1 response time 1/(mu - x). An unstable
one gets the time T*x/mu needed to drain jobs that arrived during the first
T slots.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .graphs import ConflictGraph, ExtendedGraph

EPS = 1e-9


@dataclass(frozen=True)
class ServiceEstimate:
    mu_hat: np.ndarray
    congested: np.ndarray  # mu_hat <= arrival
    history: np.ndarray = field(repr=False)  # (K+1, |E|) physical-link service rates


def _check(conflict: ConflictGraph, ext: ExtendedGraph, rates, arrivals):
    rates = ext.rates if rates is None else np.asarray(rates, dtype=float)
    x = np.asarray(arrivals, dtype=float)
    if x.shape != (ext.n_links,) or rates.shape != (ext.n_links,):
        raise ValueError(
            f"expected vectors of length {ext.n_links}, got arrivals {x.shape} rates {rates.shape}"
        )
    if conflict.vertex_count != ext.n_physical:
        raise ValueError("conflict graph does not match the physical links")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("arrival rates must be finite and nonnegative")
    if np.any(rates <= 0):
        raise ValueError("link rates must be positive")
    return rates, x


def service_rates(conflict, ext, arrivals, K=10, rates=None) -> ServiceEstimate:
    rates, x = _check(conflict, ext, rates, arrivals)
    if K < 1:
        raise ValueError("K must be >= 1")
    n = ext.n_physical
    hist = _kernels.contention_forward(
        np.ascontiguousarray(rates[:n]), np.ascontiguousarray(x[:n]),
        conflict.indptr, conflict.indices, int(K),
    )
    mu_hat = rates.copy()
    mu_hat[:n] = hist[-1]
    return ServiceEstimate(mu_hat, mu_hat <= x, hist)


def _delays(mu_hat, x, T):
    stable = mu_hat > x
    gap = np.maximum(mu_hat - x, EPS)
    return np.where(stable, 1.0 / gap, T * x / mu_hat)


def estimate_delays(conflict, ext, arrivals, T=1000, K=10, rates=None):
    """Per-extended-link delays for the given arrivals.

    Returns (delays, ServiceEstimate).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    svc = service_rates(conflict, ext, arrivals, K=K, rates=rates)
    x = np.asarray(arrivals, dtype=float)
    return _delays(svc.mu_hat, x, T), svc


def estimate_delays_vjp(conflict, ext, arrivals, grad, T=1000, K=10, rates=None, service=None):
    """Gradient of <grad, delays(arrivals)> with respect to the arrivals.

    Differentiates the K-round unrolled iteration. At min(x/mu, 1) ties the
    ratio branch is used; the stable/unstable branch is the one taken forward.
    """
    rates, x = _check(conflict, ext, rates, arrivals)
    svc = service if service is not None else service_rates(conflict, ext, x, K=K, rates=rates)
    g = np.asarray(grad, dtype=float)
    mu = svc.mu_hat
    stable = mu > x
    gap = np.maximum(mu - x, EPS)
    inv2 = 1.0 / (gap * gap)
    # d delay / d x and d delay / d mu_hat, per branch
    dx = np.where(stable, inv2, T / mu)
    dmu = np.where(stable, -inv2, -T * x / (mu * mu))
    # gap guard makes the stable branch flat where it is active
    flat = stable & (mu - x < EPS)
    dx[flat] = 0.0
    dmu[flat] = 0.0
    gx = g * dx
    n = ext.n_physical
    gx[:n] += _kernels.contention_backward(
        np.ascontiguousarray(rates[:n]), np.ascontiguousarray(x[:n]), svc.history,
        conflict.indptr, conflict.indices, np.ascontiguousarray(g[:n] * dmu[:n]),
    )
    return gx


def congestion_flags(service: ServiceEstimate, arrivals) -> np.ndarray:
    """Links whose queue is unstable: estimated service rate below the arrival rate."""
    x = np.asarray(arrivals, dtype=float)
    if x.shape != service.mu_hat.shape:
        raise ValueError("dimension mismatch")
    return service.mu_hat < x
