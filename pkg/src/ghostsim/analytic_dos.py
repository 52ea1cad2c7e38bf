"""Renewal-based CSMA/CA throughput model for multi-hop chains under a
CSMA-blind interferer, solved as a damped fixed point.

Per node ``i`` with next hop ``j`` (probabilities per backoff slot):

    tau_i   = 1 / (b + 1 + L * alpha_i),  b = (2**mac_be - 1) / 2
    alpha_i = clamp(1 - L * (1 - busy_i))
    busy_i  = prod_{k in N(i)} (1 - rho_k p_k) * (1 - p_att)**[i interfered]
    p_i     = tau_i * alpha_i
    rho_i   = min((lam + inbound_i) / p_i, 1),  inbound_i = sum_{children c} rho_c p_c ps_c
    ps_i    = prod_{k in N(i) - {j}} (1 - rho_k p_k) * (1 - p_att)**[i interfered]
              * prod_{k in N(j) - N(i) - {i}} (1 - L rho_k p_k)
              * (1 - L p_att)**[j interfered and i not] * (1 - rho_j)
    S_i     = lam / (lam + inbound_i) * rho_i p_i * prod_{k on path(i)} ps_k

The gateway never transmits and is always listening (rho = p = 0).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, ValidationError

log = logging.getLogger(__name__)


@dataclass
class ChainSpec:
    """Nodes, symmetric interference neighbourhoods and a routing tree toward ``gateway``."""
    neighbors: dict[int, set[int]]
    next_hop: dict[int, int]
    gateway: int = 0
    interfered: set[int] = field(default_factory=set)
    gen_rate: float = 0.02
    packet_slots: int = 3
    mac_be: int = 3
    p_att: float = 0.0

    def __post_init__(self):
        self.neighbors = {int(k): {int(v) for v in vs} for k, vs in self.neighbors.items()}
        self.next_hop = {int(k): int(v) for k, v in self.next_hop.items()}
        self.interfered = {int(v) for v in self.interfered}
        self.validate()

    @property
    def nodes(self) -> list[int]:
        return sorted(self.next_hop)

    def validate(self):
        if not 0 <= self.gen_rate <= 1:
            raise ValidationError("gen_rate must lie in [0, 1]")
        if not 0 <= self.p_att <= 1:
            raise ValidationError("p_att must lie in [0, 1]")
        if self.packet_slots < 1:
            raise ValidationError("packet_slots must be >= 1")
        if self.mac_be < 0:
            raise ValidationError("mac_be must be >= 0")
        for a, vs in self.neighbors.items():
            for b in vs:
                if a not in self.neighbors.get(b, ()):
                    raise ValidationError(f"interference sets not symmetric: {a} -> {b}")
        for n in self.nodes:
            hop, seen = n, set()
            while hop != self.gateway:
                if hop in seen or hop not in self.next_hop:
                    raise ValidationError(f"node {n} has no loop-free route to the gateway")
                seen.add(hop)
                hop = self.next_hop[hop]
            if self.next_hop[n] not in self.neighbors.get(n, ()):
                raise ValidationError(f"next hop of {n} is not a neighbour")

    def path(self, node: int) -> list[int]:
        out = [node]
        while self.next_hop[out[-1]] != self.gateway:
            out.append(self.next_hop[out[-1]])
        return out

    def with_attack_rate(self, p_att: float) -> "ChainSpec":
        return ChainSpec(self.neighbors, self.next_hop, self.gateway, set(self.interfered),
                         self.gen_rate, self.packet_slots, self.mac_be, p_att)


@dataclass(frozen=True)
class NodeSolution:
    tau: float
    alpha: float
    rho: float
    p: float
    p_s: float
    S: float


@dataclass
class FixedPoint:
    nodes: dict[int, NodeSolution]
    iterations: int
    residual: float
    clamped: list[int] = field(default_factory=list)
    alternative: bool = False  # a random restart converged elsewhere

    def __getitem__(self, node):
        return self.nodes[node]

    def throughput(self) -> dict[int, float]:
        return {n: s.S for n, s in self.nodes.items()}


class _Model:
    """Vectorised update map over the state (alpha, rho, ps)."""

    def __init__(self, spec: ChainSpec):
        self.spec = spec
        self.ids = spec.nodes
        idx = {n: i for i, n in enumerate(self.ids)}
        n = len(self.ids)
        gw = spec.gateway
        L = spec.packet_slots
        self.n, self.L = n, L
        self.b = (2 ** spec.mac_be - 1) / 2
        self.lam = spec.gen_rate
        self.nbr = np.zeros((n, n))
        self.child = np.zeros((n, n))
        self.ps_direct = np.zeros((n, n))  # neighbours of i except its receiver
        self.ps_hidden = np.zeros((n, n))  # receiver's neighbours hidden from i
        self.receiver = np.full(n, -1)
        att = spec.interfered
        self.att_i = np.array([1.0 if i in att else 0.0 for i in self.ids])
        self.att_hidden = np.zeros(n)
        for a in self.ids:
            i = idx[a]
            for k in spec.neighbors.get(a, ()):
                if k != gw and k in idx:
                    self.nbr[i, idx[k]] = 1
            j = spec.next_hop[a]
            if j != gw:
                self.child[idx[j], i] = 1
                self.receiver[i] = idx[j]
            own = spec.neighbors.get(a, set())
            for k in own - {j}:
                if k != gw and k in idx:
                    self.ps_direct[i, idx[k]] = 1
            for k in spec.neighbors.get(j, set()) - own - {a}:
                if k != gw and k in idx:
                    self.ps_hidden[i, idx[k]] = 1
            if j in att and a not in att:
                self.att_hidden[i] = 1
        self.paths = [[idx[k] for k in spec.path(a)] for a in self.ids]

    @staticmethod
    def _prod(mask, factors):
        # product over masked entries, done in log space free of zeros
        out = np.ones(mask.shape[0])
        for i in range(mask.shape[0]):
            sel = factors[mask[i] > 0]
            if sel.size:
                out[i] = float(np.prod(sel))
        return out

    def derived(self, alpha, rho, ps):
        tau = 1.0 / (self.b + 1.0 + self.L * alpha)
        p = tau * alpha
        return tau, p

    def step(self, state):
        alpha, rho, ps = state
        p_att, L = self.spec.p_att, self.L
        tau, p = self.derived(alpha, rho, ps)
        idle = 1.0 - rho * p
        att_factor = (1.0 - p_att) ** self.att_i
        busy = self._prod(self.nbr, idle) * att_factor
        raw_alpha = 1.0 - L * (1.0 - busy)
        clamped = np.flatnonzero((raw_alpha < 0) | (raw_alpha > 1))
        new_alpha = np.clip(raw_alpha, 0.0, 1.0)
        inbound = self.child @ (rho * p * ps)
        demand = self.lam + inbound
        with np.errstate(divide="ignore", invalid="ignore"):
            new_rho = np.where(p > 0, np.minimum(demand / np.where(p > 0, p, 1.0), 1.0),
                               np.where(demand > 0, 1.0, 0.0))
        hidden = np.clip(1.0 - L * rho * p, 0.0, 1.0)
        rx_free = np.array([1.0 - rho[r] if r >= 0 else 1.0 for r in self.receiver])
        new_ps = (self._prod(self.ps_direct, idle) * att_factor * self._prod(self.ps_hidden, hidden)
                  * max(1.0 - L * p_att, 0.0) ** self.att_hidden * rx_free)
        return (new_alpha, new_rho, np.clip(new_ps, 0.0, 1.0)), clamped

    def throughput(self, state):
        alpha, rho, ps = state
        _, p = self.derived(alpha, rho, ps)
        inbound = self.child @ (rho * p * ps)
        out = np.zeros(self.n)
        for i, path in enumerate(self.paths):
            share = self.lam / (self.lam + inbound[i]) if self.lam + inbound[i] > 0 else 0.0
            out[i] = share * rho[i] * p[i] * float(np.prod(ps[path]))
        return out


def _residual(a, b):
    return max(float(np.max(np.abs(x - y))) if x.size else 0.0 for x, y in zip(a, b))


def _iterate(model, state, damping, tol, max_iter):
    clamped = set()
    res = np.inf
    for it in range(1, max_iter + 1):
        target, cl = model.step(state)
        clamped.update(int(c) for c in cl)
        res = _residual(target, state)
        if res < tol:
            # prefer the undamped image: clamped entries then sit exactly on their bounds
            image, cl = model.step(target)
            img_res = _residual(image, target)
            if img_res < tol:
                clamped.update(int(c) for c in cl)
                return target, it, img_res, clamped
            return state, it, res, clamped
        state = tuple(s + damping * (t - s) for s, t in zip(state, target))
    raise NoConvergence(max_iter, res)


def solve_fixed_point(spec: ChainSpec, *, damping=0.5, tol=1e-9, max_iter=100_000,
                      restart_seed: int | None = None) -> FixedPoint:
    """Solve the per-node model; ``restart_seed`` adds a random-start uniqueness check."""
    model = _Model(spec)
    n = model.n
    start = (np.ones(n), np.zeros(n), np.ones(n))
    state, iters, res, clamped = _iterate(model, start, damping, tol, max_iter)
    if clamped:
        log.info("alpha clamped for nodes %s", [model.ids[i] for i in sorted(clamped)])
    alternative = False
    if restart_seed is not None:
        rng = np.random.default_rng(restart_seed)
        other, *_ = _iterate(model, tuple(rng.uniform(0, 1, n) for _ in range(3)), damping, tol, max_iter)
        alternative = _residual(other, state) > 1e-6
        if alternative:
            log.warning("random restart converged to a different fixed point")
    alpha, rho, ps = state
    tau, p = model.derived(alpha, rho, ps)
    S = model.throughput(state)
    nodes = {
        nid: NodeSolution(float(tau[i]), float(alpha[i]), float(rho[i]), float(p[i]), float(ps[i]), float(S[i]))
        for i, nid in enumerate(model.ids)
    }
    return FixedPoint(nodes, iters, res, [model.ids[i] for i in sorted(clamped)], alternative)


def model_residual(spec: ChainSpec, solution: FixedPoint) -> float:
    """Max violation of the model equations at ``solution`` (independent substitution)."""
    model = _Model(spec)
    state = tuple(np.array([getattr(solution[n], f) for n in model.ids]) for f in ("alpha", "rho", "p_s"))
    target, _ = model.step(state)
    res = _residual(target, state)
    tau, p = model.derived(*state)
    res = max(res, float(np.max(np.abs(tau - [solution[n].tau for n in model.ids]))),
              float(np.max(np.abs(p - [solution[n].p for n in model.ids]))),
              float(np.max(np.abs(model.throughput(state) - [solution[n].S for n in model.ids]))))
    return res


@dataclass
class SweepResult:
    grid: list[float]
    throughput: dict[float, dict[int, float]]
    variation: dict[float, dict[int, float]]  # percent vs p_att = 0 (first grid point if 0 absent)
    residuals: dict[float, float]

    def rows(self):
        for pa in self.grid:
            for node, s in sorted(self.throughput[pa].items()):
                yield {"p_att": pa, "node": node, "S": s, "dS_pct": self.variation[pa][node]}


def sweep_attack_rate(spec: ChainSpec, grid, **solver_kw) -> SweepResult:
    grid = [float(g) for g in grid]
    if any(not 0 <= g <= 1 for g in grid):
        raise ValueError("p_att grid must lie within [0, 1]")
    base = solve_fixed_point(spec.with_attack_rate(0.0), **solver_kw).throughput()
    thr, var, res = {}, {}, {}
    for pa in grid:
        sol = solve_fixed_point(spec.with_attack_rate(pa), **solver_kw)
        thr[pa] = sol.throughput()
        res[pa] = sol.residual
        var[pa] = {n: (100.0 * (s - base[n]) / base[n] if base[n] > 0 else 0.0) for n, s in thr[pa].items()}
    return SweepResult(grid, thr, var, res)


FIG1_POSITIONS = {1: (0.0, 0.0), 2: (25.0, 0.0), 3: (50.0, 0.0), 4: (75.0, 0.0), 5: (90.0, 20.0), 0: (100.0, 0.0)}
FIG1_ATTACKER = {1: (37.5, 15.0), 2: (50.0, 22.0)}


def chain_from_geometry(positions, radius, attacker=None, *, gateway=0, next_hop=None,
                        attack_radius=None, **params) -> ChainSpec:
    """Build a ChainSpec from coordinates: neighbours within ``radius``, routes by hop count."""
    from .mac_sim.topology import Topology, shortest_path_routes

    topo = Topology(dict(positions), radius, radius, gateway)
    nbrs = {k: set(v) for k, v in topo.neighbors().items()}
    routes = next_hop if next_hop is not None else shortest_path_routes(topo)
    interfered = set()
    if attacker is not None:
        r = radius if attack_radius is None else attack_radius
        interfered = {n for n in topo.within(attacker, r) if n != gateway}
    return ChainSpec(nbrs, routes, gateway, interfered, **params)


def fig1_chain(case: int = 1, **params) -> ChainSpec:
    """Five-node chain with the attacker covering nodes 2 and 3 (case 1) or node 3 only (case 2)."""
    return chain_from_geometry(FIG1_POSITIONS, 30.0, FIG1_ATTACKER[case], **params)
