"""Scenario description, TOML loading and validation.

The file format is documented in ``docs/scenario-format.md``.
"""

from __future__ import annotations

import copy
import math
import re
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .attacks import AttackerConfig
from .energy import CpuCostModel, DutyCycle, PowerProfile
from .errors import DisconnectedNode, InvalidScenario, ParseError, ValidationError
from .mac_sim.topology import Topology, hop_counts, random_connected_topology

ATTACKER_ID_BASE = 1000


@dataclass(frozen=True)
class CsmaParams:
    min_be: int = 3
    max_be: int = 5
    max_backoffs: int = 4
    max_retries: int = 3
    ack: bool = True
    fixed_be: int | None = None  # pin the backoff exponent

    def __post_init__(self):
        if not 0 <= self.min_be <= self.max_be:
            raise ValidationError("need 0 <= min_be <= max_be")
        if self.max_backoffs < 0 or self.max_retries < 0:
            raise ValidationError("CSMA retry limits must be non-negative")


@dataclass(frozen=True)
class NodeConfig:
    duty: DutyCycle | None = DutyCycle()  # None: radio always on
    phase: float = 0.0
    traffic_rate: float = 1.0
    traffic_jitter: float = 0.1  # each inter-packet gap is (1 +- jitter) / traffic_rate
    payload_len: int = 40
    security_level: int = 4
    battery_ah: float | None = 2.45  # None: mains powered
    battery_threshold_ah: float = 0.0
    profile: PowerProfile = PowerProfile()
    csma: CsmaParams = CsmaParams()
    clock_hz: float | None = None
    rx_queue: int = 1  # frames buffered between radio and CPU
    tx_queue: int = 16

    @property
    def mains(self) -> bool:
        return self.battery_ah is None


@dataclass
class Countermeasures:
    blacklist: bool = False
    blacklist_threshold: int = 5
    blacklist_persistent: bool = False
    challenge_response: bool = False
    challenge_timeout: float = 1.0
    rekey_on_reboot: bool = False
    persist_counters: bool = False
    flash_write_energy_j: float = 0.0


@dataclass
class Scenario:
    name: str
    topology: Topology
    nodes: dict[int, NodeConfig]
    attackers: list[AttackerConfig] = field(default_factory=list)
    countermeasures: Countermeasures = field(default_factory=Countermeasures)
    sim_end: float = 120.0
    seeds: list[int] = field(default_factory=lambda: [1])
    data_rate: float = 250_000.0
    cost_model: CpuCostModel = field(default_factory=CpuCostModel)
    reboot_delay: float | None = None
    description: str = ""
    params: dict[str, dict] = field(default_factory=dict)  # experiment-specific sections

    def section(self, name: str) -> dict:
        return dict(self.params.get(name, {}))

    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def attacker_id(self, index: int) -> int:
        return ATTACKER_ID_BASE + index

    def copy(self, **changes) -> "Scenario":
        out = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(out, k, v)
        return out

    def with_node_overrides(self, node_ids, **changes) -> "Scenario":
        out = self.copy()
        for n in node_ids:
            out.nodes[n] = replace(out.nodes[n], **changes)
        return out

    def validate(self) -> "Scenario":
        topo = self.topology
        if set(self.nodes) != set(topo.positions):
            raise ValidationError("node configs and positions disagree")
        if any(n >= ATTACKER_ID_BASE or n < 0 for n in self.nodes):
            raise ValidationError(f"node ids must lie in 0..{ATTACKER_ID_BASE - 1}")
        missing = [n for n in topo.ids if n not in hop_counts(topo)]
        if missing:
            raise DisconnectedNode(missing)
        if self.sim_end <= 0 or not math.isfinite(self.sim_end):
            raise ValidationError("sim_end must be positive and finite")
        if self.data_rate <= 0:
            raise ValidationError("data_rate must be positive")
        for n, cfg in self.nodes.items():
            if cfg.traffic_rate < 0:
                raise ValidationError(f"node {n}: traffic_rate must be non-negative")
            if not 0 <= cfg.traffic_jitter < 1:
                raise ValidationError(f"node {n}: traffic_jitter must lie in [0, 1)")
            if not 10 <= cfg.payload_len <= 100:
                raise ValidationError(f"node {n}: payload_len must be within 10..100")
            if not 0 <= cfg.security_level <= 7:
                raise ValidationError(f"node {n}: security_level must be 0..7")
            if cfg.battery_ah is not None and not 0 <= cfg.battery_threshold_ah < cfg.battery_ah:
                raise ValidationError(f"node {n}: need 0 <= threshold < battery")
            if cfg.rx_queue < 1 or cfg.tx_queue < 1:
                raise ValidationError(f"node {n}: queue capacities must be >= 1")
        for a in self.attackers:
            for t in a.targets:
                if t not in self.nodes or t == topo.gateway:
                    raise ValidationError(f"attacker target {t} is not a battery node")
        cm = self.countermeasures
        if cm.rekey_on_reboot and not cm.challenge_response:
            raise ValidationError("rekey_on_reboot is carried by challenge_response; enable both")
        if cm.blacklist_threshold < 1 or cm.challenge_timeout <= 0 or cm.flash_write_energy_j < 0:
            raise ValidationError("countermeasure parameters out of range")
        if self.reboot_delay is not None and self.reboot_delay < 0:
            raise ValidationError("reboot delay must be non-negative")
        return self


# -- loading -----------------------------------------------------------------

_NODE_KEYS = {"always_on", "duty_tau", "duty_period", "phase", "traffic_rate", "traffic_jitter", "payload_len", "security_level",
              "battery_ah", "battery_threshold_ah", "mains", "clock_hz", "rx_queue", "tx_queue", "power", "csma"}
_TOP_KEYS = {"name", "description", "sim_end", "seeds", "data_rate", "topology", "node_defaults", "nodes",
             "gateway", "attacker", "countermeasures", "reboot", "cost_model"}
_EXPERIMENT_SECTIONS = {"analysis", "lifetime", "per_packet_cost", "dos_network", "analytic", "localization",
                        "countermeasure_ab", "replay_demo", "nonce_reuse_demo"}
_GATEWAY_DEFAULTS = {"always_on": True, "mains": True, "traffic_rate": 0.0, "clock_hz": 64e6, "rx_queue": 16}


def _line_of(text: str, key: str) -> int | None:
    if not text:
        return None
    pat = re.compile(rf"^\s*(\[+\s*)?[\"']?{re.escape(key)}[\"']?\b", re.M)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


class _Checker:
    def __init__(self, text):
        self.text = text

    def fail(self, key, reason):
        raise ValidationError(reason, _line_of(self.text, key))

    def unknown(self, table: dict, allowed: set, where: str):
        for k in table:
            if k not in allowed:
                self.fail(k, f"unknown key {k!r} in {where}")


def _node_config(spec: dict, chk: _Checker, where: str) -> NodeConfig:
    chk.unknown(spec, _NODE_KEYS, where)
    try:
        duty = None
        if not spec.get("always_on", False):
            tau, T = float(spec.get("duty_tau", 1e-3)), float(spec.get("duty_period", 0.1))
            if not 0 < tau <= T:
                chk.fail("duty_tau", f"{where}: need 0 < duty_tau <= duty_period (got {tau} > {T})")
            duty = DutyCycle(tau, T)
        power = spec.get("power", {})
        chk.unknown(power, set(PowerProfile.__dataclass_fields__), f"{where}.power")
        csma = spec.get("csma", {})
        chk.unknown(csma, set(CsmaParams.__dataclass_fields__), f"{where}.csma")
        battery = None if spec.get("mains", False) else float(spec.get("battery_ah", 2.45))
        return NodeConfig(
            duty=duty,
            phase=float(spec.get("phase", 0.0)),
            traffic_rate=float(spec.get("traffic_rate", 1.0)),
            traffic_jitter=float(spec.get("traffic_jitter", 0.1)),
            payload_len=int(spec.get("payload_len", 40)),
            security_level=int(spec.get("security_level", 4)),
            battery_ah=battery,
            battery_threshold_ah=float(spec.get("battery_threshold_ah", 0.0)),
            profile=PowerProfile(**power),
            csma=CsmaParams(**csma),
            clock_hz=float(spec["clock_hz"]) if "clock_hz" in spec else None,
            rx_queue=int(spec.get("rx_queue", 1)),
            tx_queue=int(spec.get("tx_queue", 16)),
        )
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def _topology(spec: dict, chk: _Checker) -> Topology:
    allowed = {"comm_range", "interference_range", "gateway", "nodes", "random_nodes", "random_side",
               "random_seed", "gateway_position"}
    chk.unknown(spec, allowed, "topology")
    comm = float(spec.get("comm_range", 30.0))
    interf = float(spec.get("interference_range", 40.0))
    if "random_nodes" in spec:
        topo = random_connected_topology(int(spec["random_nodes"]), side=float(spec.get("random_side", 100.0)),
                                         comm_range=comm, interference_range=interf,
                                         seed=int(spec.get("random_seed", 0)))
        return topo
    if "nodes" not in spec:
        chk.fail("topology", "topology needs 'nodes' or 'random_nodes'")
    positions = {}
    for row in spec["nodes"]:
        if len(row) != 3:
            chk.fail("nodes", "each topology node is [id, x, y]")
        nid = int(row[0])
        if nid in positions:
            chk.fail("nodes", f"duplicate node id {nid}")
        positions[nid] = (float(row[1]), float(row[2]))
    gateway = int(spec.get("gateway", 0))
    if gateway not in positions:
        chk.fail("gateway", f"gateway {gateway} is not among the topology nodes")
    return Topology(positions, comm, interf, gateway)


def _attacker(spec: dict, chk: _Checker, i: int) -> AttackerConfig:
    spec = dict(spec)
    fields = set(AttackerConfig.__dataclass_fields__) - {"position"}
    chk.unknown(spec, fields | {"x", "y"}, f"attacker[{i}]")
    if "x" not in spec or "y" not in spec:
        chk.fail("attacker", f"attacker[{i}] needs x and y")
    pos = (spec.pop("x"), spec.pop("y"))
    if "stop" in spec and spec["stop"] is None:
        spec.pop("stop")
    try:
        return AttackerConfig(position=pos, **spec)
    except ValidationError as exc:
        raise ValidationError(f"attacker[{i}]: {exc.reason}", _line_of(chk.text, "attacker")) from exc


def scenario_from_dict(data: dict[str, Any], text: str = "") -> Scenario:
    """Build and validate a scenario from parsed TOML; ``text`` is only used for line numbers."""
    try:
        return _build(data, text)
    except InvalidScenario:
        raise
    except (TypeError, ValueError, AttributeError, KeyError) as exc:
        raise ValidationError(f"malformed scenario: {type(exc).__name__}: {exc}") from exc


def _build(data: dict[str, Any], text: str) -> Scenario:
    chk = _Checker(text)
    unknown = set(data) - _TOP_KEYS - _EXPERIMENT_SECTIONS
    for k in sorted(unknown):
        chk.fail(k, f"unknown top-level key {k!r}")
    if "topology" not in data:
        chk.fail("topology", "missing [topology] section")
    topo = _topology(data["topology"], chk)
    defaults = dict(data.get("node_defaults", {}))
    gateway_spec = {**defaults, **_GATEWAY_DEFAULTS, **data.get("gateway", {})}
    overrides = {int(k): v for k, v in data.get("nodes", {}).items()}
    for n in overrides:
        if n not in topo.positions:
            chk.fail(f"nodes.{n}", f"override for unknown node {n}")
    nodes = {}
    for n in topo.ids:
        base = gateway_spec if n == topo.gateway else defaults
        merged = {**base, **overrides.get(n, {})}
        for sub in ("power", "csma"):
            merged[sub] = {**base.get(sub, {}), **overrides.get(n, {}).get(sub, {})}
        nodes[n] = _node_config(merged, chk, f"node {n}")
    attackers = [_attacker(a, chk, i) for i, a in enumerate(data.get("attacker", []))]
    cm_spec = data.get("countermeasures", {})
    chk.unknown(cm_spec, set(Countermeasures.__dataclass_fields__), "countermeasures")
    cost = dict(data.get("cost_model", {}))
    chk.unknown(cost, set(CpuCostModel.__dataclass_fields__), "cost_model")
    base_cost = CpuCostModel()
    if isinstance(cost.get("cycles_per_block"), (int, float)):
        cost["cycles_per_block"] = dict.fromkeys(base_cost.cycles_per_block, float(cost["cycles_per_block"]))
    if "setup_cycles" in cost:
        cost["setup_cycles"] = {**base_cost.setup_cycles, **cost["setup_cycles"]}
    reboot = data.get("reboot", {})
    chk.unknown(reboot, {"delay"}, "reboot")
    seeds = data.get("seeds", [1])
    try:
        sc = Scenario(
            name=str(data.get("name", "unnamed")),
            description=str(data.get("description", "")),
            topology=topo,
            nodes=nodes,
            attackers=attackers,
            countermeasures=Countermeasures(**cm_spec),
            sim_end=float(data.get("sim_end", 120.0)),
            seeds=[int(s) for s in seeds],
            data_rate=float(data.get("data_rate", 250_000.0)),
            cost_model=CpuCostModel(**cost),
            reboot_delay=float(reboot["delay"]) if "delay" in reboot else None,
            params={k: dict(data[k]) for k in _EXPERIMENT_SECTIONS if k in data},
        )
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc
    try:
        return sc.validate()
    except ValidationError as exc:
        if exc.line is None:
            word = re.findall(r"[a-z_]+", exc.reason)
            line = next((ln for w in word if (ln := _line_of(text, w))), None)
            raise ValidationError(exc.reason, line) from exc
        raise


def parse_scenario_text(text: str) -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(str(exc), int(m.group(1)) if m else getattr(exc, "lineno", None)) from exc
    return scenario_from_dict(data, text)


SHIPPED = ("fig1_chain", "sec6_victim", "sec6_dos38", "replay_demo")


def shipped_path(name: str) -> Path:
    ref = resources.files("ghostsim") / "scenarios" / f"{name}.toml"
    return Path(str(ref))


def parse_scenario(path) -> Scenario:
    """Load a scenario file; bare names resolve to the shipped scenarios."""
    p = Path(path)
    if not p.exists() and str(path) in SHIPPED:
        p = shipped_path(str(path))
    if not p.exists():
        raise FileNotFoundError(str(path))
    return parse_scenario_text(p.read_text(encoding="utf-8"))
