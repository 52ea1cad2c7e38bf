"""Disk-model topology and static shortest-path routing."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..errors import DisconnectedNode, ValidationError


@dataclass
class Topology:
    positions: dict[int, tuple[float, float]]
    comm_range: float = 30.0
    interference_range: float = 40.0
    gateway: int = 0
    _dist: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.interference_range >= self.comm_range > 0:
            raise ValidationError("need interference_range >= comm_range > 0")
        if self.gateway not in self.positions:
            raise ValidationError(f"gateway {self.gateway} has no position")
        self.positions = {int(k): (float(v[0]), float(v[1])) for k, v in self.positions.items()}

    @property
    def ids(self) -> list[int]:
        return sorted(self.positions)

    def distance(self, a: int, b: int) -> float:
        (xa, ya), (xb, yb) = self.positions[a], self.positions[b]
        return float(np.hypot(xa - xb, ya - yb))

    def distance_matrix(self) -> tuple[list[int], np.ndarray]:
        ids = self.ids
        if self._dist is None or self._dist.shape[0] != len(ids):
            xy = np.array([self.positions[i] for i in ids])
            self._dist = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
        return ids, self._dist

    def neighbors(self, radius: float | None = None) -> dict[int, list[int]]:
        """Nodes within ``radius`` (default comm range) of each node, ascending id."""
        radius = self.comm_range if radius is None else radius
        ids, d = self.distance_matrix()
        adj = (d <= radius) & ~np.eye(len(ids), dtype=bool)
        return {ids[i]: [ids[j] for j in np.flatnonzero(adj[i])] for i in range(len(ids))}

    def within(self, point, radius: float) -> list[int]:
        x, y = point
        return [i for i in self.ids if np.hypot(self.positions[i][0] - x, self.positions[i][1] - y) <= radius]


def hop_counts(topology: Topology) -> dict[int, int]:
    adj = topology.neighbors()
    hops = {topology.gateway: 0}
    queue = deque([topology.gateway])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in hops:
                hops[v] = hops[u] + 1
                queue.append(v)
    return hops


def shortest_path_routes(topology: Topology) -> dict[int, int]:
    """Next hop toward the gateway for every node; ties go to the lowest id."""
    hops = hop_counts(topology)
    missing = [i for i in topology.ids if i not in hops]
    if missing:
        raise DisconnectedNode(missing)
    adj = topology.neighbors()
    routes = {}
    for node in topology.ids:
        if node == topology.gateway:
            continue
        routes[node] = min(v for v in adj[node] if hops[v] == hops[node] - 1)
    return routes


def path_to_gateway(routes: dict[int, int], source: int, gateway: int) -> list[int]:
    path = [source]
    while path[-1] != gateway:
        path.append(routes[path[-1]])
        if len(path) > len(routes) + 2:
            raise ValueError("routing loop")
    return path


def all_paths(topology: Topology, routes: dict[int, int] | None = None) -> list[list[int]]:
    routes = shortest_path_routes(topology) if routes is None else routes
    return [path_to_gateway(routes, s, topology.gateway) for s in topology.ids if s != topology.gateway]


def random_connected_topology(n: int, *, side=100.0, comm_range=30.0, interference_range=40.0,
                              seed=0, max_tries=1000) -> Topology:
    """``n`` nodes uniformly in a square with the gateway (id 0) at the centre."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        xy = rng.uniform(0, side, size=(n, 2))
        pos = {0: (side / 2, side / 2)}
        pos.update({i + 1: (float(round(x, 2)), float(round(y, 2))) for i, (x, y) in enumerate(xy)})
        topo = Topology(pos, comm_range, interference_range, 0)
        if len(hop_counts(topo)) == n + 1:
            return topo
    raise RuntimeError("could not draw a connected topology")
