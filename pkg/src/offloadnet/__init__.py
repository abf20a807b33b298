"""Congestion-aware distributed task offloading in wireless multi-hop networks."""
from .graphs import (
    ConflictGraph, ConnectivityGraph, ExtendedGraph, ExtendedLineGraph, GraphError,
    LineGraph, NodeRole, conflict_graph, extend_graph, line_graph,
)
from .instances import NetworkInstance, Task, make_instance
from .queueing import ServiceEstimate, congestion_flags, estimate_delays, estimate_delays_vjp

__version__ = "0.1.0"
