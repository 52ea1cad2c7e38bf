"""Discrete-event MAC/energy simulator."""

from .channel import Transmission, channel_resolve, csma_attempt, duty_schedule
from .engine import Simulation, capture_frames, link_key, run
from .topology import Topology, all_paths, hop_counts, random_connected_topology, shortest_path_routes
from .trace import TraceLog, TraceRecord, load_summary_csv, load_trace_csv, mean_throughput, throughput_series

__all__ = [
    "Simulation", "Topology", "capture_frames", "TraceLog", "TraceRecord", "Transmission", "all_paths", "channel_resolve",
    "csma_attempt", "duty_schedule", "hop_counts", "link_key", "load_summary_csv", "load_trace_csv", "mean_throughput",
    "random_connected_topology", "run", "shortest_path_routes", "throughput_series",
]
