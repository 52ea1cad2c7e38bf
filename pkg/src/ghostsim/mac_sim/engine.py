"""Event-driven simulation of secured 802.15.4 nodes, attackers and the shared channel.

Simultaneous events run in (time, kind rank, entity id, insertion order)
order. Energy is integrated exactly: every radio or CPU state change closes
the previous interval and appends a ledger row.
"""

from __future__ import annotations

import contextlib
import contextvars
import hashlib
import heapq
import math
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from ..attacks import AttackerState, CapturedFrame, capture_and_replay, craft_bogus_frame, ghost_schedule
from ..countermeasures import BlacklistState, ChallengeManager, challenge_response, derive_next_key
from ..energy import Battery
from ..errors import IntegrityFailure, SecurityError, SessionExpired
from ..frame_security import (FRAME_TYPE_CMD, AclEntry, Frame, MacHeader, ReplayRejected, SecuredFrame,
                              SecurityLevel, address_node, airtime, check_replay, node_address, secure_frame,
                              unsecure_frame)
from .topology import all_paths, shortest_path_routes
from .trace import TraceLog, TraceRecord

# event ranks: lower runs first at equal time
CYCLE, TX_END, CPU_DONE, DEPLETE, REBOOT, WAKE, ACK_SEND, TX_START, ATTACK, REPLAY, CCA, ACK_TIMEOUT, GEN, \
    SLEEP, CHALLENGE_EXPIRE = range(15)

ACK_MPDU = 5
CMD_CHALLENGE, CMD_RESPONSE = 0x80, 0x81
MAGIC = b"GS"
ATTACKER_ID_BASE = 1000

_frame_sink: contextvars.ContextVar = contextvars.ContextVar("frame_sink", default=None)


@contextlib.contextmanager
def capture_frames():
    """Collect ``(seed, time, sender, dst, wire bytes)`` for every frame sent by runs inside the block."""
    sink: list[tuple] = []
    token = _frame_sink.set(sink)
    try:
        yield sink
    finally:
        _frame_sink.reset(token)


def link_key(a: int, b: int) -> bytes:
    """Pre-shared pairwise key (distribution is out of scope)."""
    lo, hi = min(a, b), max(a, b)
    return hashlib.sha256(b"ghostsim-link" + lo.to_bytes(2, "big") + hi.to_bytes(2, "big")).digest()[:16]


def app_payload(origin: int, seq: int, length: int) -> bytes:
    body = MAGIC + origin.to_bytes(2, "big") + seq.to_bytes(4, "big")
    return body + bytes(max(length - len(body), 0))


def parse_app_payload(data: bytes):
    if len(data) < 8 or data[:2] != MAGIC or any(data[8:]):
        return None
    return int.from_bytes(data[2:4], "big"), int.from_bytes(data[4:8], "big")


class Packet:
    __slots__ = ("uid", "origin", "seq", "created", "copies", "done", "delivered")

    def __init__(self, uid, origin, seq, created):
        self.uid, self.origin, self.seq, self.created = uid, origin, seq, created
        self.copies = 0
        self.done = False
        self.delivered = False


class Tx:
    __slots__ = ("id", "sender", "dst", "kind", "frame", "nbytes", "start", "end", "packet", "seq", "ack",
                 "dst_collided")

    def __init__(self, id, sender, dst, kind, frame, nbytes, start, end, packet=None, seq=0, ack=False):
        self.id, self.sender, self.dst, self.kind, self.frame = id, sender, dst, kind, frame
        self.nbytes, self.start, self.end, self.packet, self.seq, self.ack = nbytes, start, end, packet, seq, ack
        self.dst_collided = False


@dataclass
class OutFrame:
    frame: SecuredFrame | None
    dst: int
    kind: str
    packet: Packet | None = None
    ack: bool = True


class Station:
    is_attacker = False

    def __init__(self, sid, pos):
        self.id = sid
        self.pos = pos
        self.nbrs: list[tuple[Station, bool]] = []
        self.signals = 0
        self.last_busy_end = -math.inf
        self.transmitting: Tx | None = None


class Node(Station):
    def __init__(self, sid, pos, cfg, rng):
        super().__init__(sid, pos)
        self.cfg = cfg
        self.rng = rng
        self.addr = node_address(sid)
        self.duty = cfg.duty
        self.always_on = cfg.duty is None
        self.profile = cfg.profile
        self.battery = None if cfg.mains else Battery(cfg.battery_ah, None, cfg.battery_threshold_ah,
                                                     cfg.profile.voltage)
        self.alive = True
        self.life = 0
        self.epoch = 0
        self.version = 0
        self.k = 0
        self.awake = False
        self.radio, self.cpu, self.current = "off", "powersave", 0.0
        self.last_t = 0.0
        self.drained = 0.0
        self.depleted_at = None
        self.rx_tx: Tx | None = None
        self.rx_bad = False
        self.ack_pending = 0
        self.tx_queue: deque[OutFrame] = deque()
        self.mac_state = "idle"
        self.mac_token = 0
        self.nb = 0
        self.be = cfg.csma.min_be
        self.retries = 0
        self.cur_tx: Tx | None = None
        self.cpu_queue: deque = deque()
        self.rx_waiting = 0
        self.cpu_job = None
        self.isr = 0  # receive-interrupt filtering in progress
        self.isr_until = 0.0
        self.cpu_done_at = 0.0
        self.cpu_token = 0
        self.acl: dict[bytes, AclEntry] = {}
        self.keys: dict[int, bytes] = {}
        self.key_epoch: dict[int, int] = {}
        self.tx_counter = 0
        self.mac_seq = 0
        self.next_hop = None
        self.blacklist: BlacklistState | None = None
        self.challenges: ChallengeManager | None = None
        self.challenge_required = False
        self.gen_seq = 0


class Attacker(Station):
    is_attacker = True

    def __init__(self, sid, cfg, rng):
        super().__init__(sid, cfg.position)
        self.cfg = cfg
        self.rng = rng
        self.state = AttackerState(cfg)
        self.schedule = None
        self.offset = 0.0
        self.backlog: deque = deque()
        self.rotate = 0
        self.target_idx = 0
        self.seq = 0


@dataclass
class _FFState:
    period: float
    history: list = field(default_factory=list)
    marks: dict = field(default_factory=dict)
    rec_start: int = 0


class Simulation:
    """One run of a scenario. Use :func:`run` for the common case."""

    def __init__(self, scenario, seed: int = 0, *, fast_forward: bool = False, stop_nodes=None,
                 record_energy: bool = True, record_trace: bool = True, sim_end: float | None = None):
        self.sc = scenario
        self.seed = int(seed)
        self.topo = scenario.topology
        self.sim_end = float(scenario.sim_end if sim_end is None else sim_end)
        self.record_energy = record_energy
        self.record_trace = record_trace
        self.cost = scenario.cost_model
        self.cm = scenario.countermeasures
        rate = scenario.data_rate
        symbol = 4.0 / rate
        self.slot = 20 * symbol
        self.cca_time = 8 * symbol
        self.turnaround = 12 * symbol
        self.ack_wait = 54 * symbol
        self.ack_air = airtime(ACK_MPDU, rate)
        self.heap: list = []
        self.seq = 0
        self.now = 0.0
        self.stopped = False
        self.tx_ids = 0
        self.packet_ids = 0
        self.records: list[TraceRecord] = []
        self.ledger: list[tuple] = []
        self.counts: Counter = Counter()
        self.packets: list[Packet] = []
        self.routes = shortest_path_routes(self.topo)
        ss = np.random.SeedSequence(self.seed)
        ids = self.topo.ids
        children = ss.spawn(len(ids) + len(scenario.attackers))
        self.nodes: dict[int, Node] = {}
        for i, nid in enumerate(ids):
            self.nodes[nid] = Node(nid, self.topo.positions[nid], scenario.nodes[nid], np.random.default_rng(children[i]))
        self.attackers = [Attacker(ATTACKER_ID_BASE + j, cfg, np.random.default_rng(children[len(ids) + j]))
                          for j, cfg in enumerate(scenario.attackers)]
        self.stop_nodes = set(stop_nodes) if stop_nodes is not None else set()
        self.frame_sink = _frame_sink.get()
        self._wire()
        self.ff = self._ff_setup() if fast_forward else None

    # -- setup ---------------------------------------------------------------
    def _wire(self):
        comm, interf = self.topo.comm_range, self.topo.interference_range
        stations: list[Station] = list(self.nodes.values()) + list(self.attackers)
        for s in stations:
            for o in stations:
                if o is s or (s.is_attacker and o.is_attacker):
                    continue
                d = math.dist(s.pos, o.pos)
                if d <= interf:
                    s.nbrs.append((o, d <= comm))
        comm_nbrs = self.topo.neighbors()
        for n in self.nodes.values():
            n.next_hop = self.routes.get(n.id)
            for peer in comm_nbrs[n.id]:
                key = link_key(n.id, peer)
                n.keys[peer] = key
                n.key_epoch[peer] = 0
                n.acl[node_address(peer)] = AclEntry(node_address(peer), key)
            if self.cm.blacklist:
                n.blacklist = BlacklistState(self.cm.blacklist_threshold, self.cm.blacklist_persistent)
            if self.cm.challenge_response:
                n.challenges = ChallengeManager(self.cm.challenge_timeout, n.rng)

    def _ff_setup(self):
        periods = {n.duty.T for n in self.nodes.values() if n.battery is not None and n.duty is not None}
        if len(periods) != 1 or any(n.battery is not None and n.duty is None for n in self.nodes.values()):
            return None
        return _FFState(periods.pop())

    # -- event plumbing ------------------------------------------------------
    def push(self, t, rank, ent, fn, *args):
        self.seq += 1
        heapq.heappush(self.heap, (t, rank, ent, self.seq, fn, args))

    def log(self, node, event, counterpart=None, nbytes=0, tx_id=None, detail=""):
        self.counts[(node, event)] += 1
        if self.record_trace:
            self.records.append(TraceRecord(self.now, node, event, counterpart, nbytes, tx_id, detail))

    def run(self) -> TraceLog:
        for n in self.nodes.values():
            self._power(n)
            self._start_node(n)
        for a in self.attackers:
            self._start_attacker(a)
        if self.ff is not None:
            self.push(self.ff.period, -1, -1, self._on_cycle)
        heap = self.heap
        end = self.sim_end
        while heap and not self.stopped:
            t = heap[0][0]
            if t > end:
                break
            t, _, _, _, fn, args = heapq.heappop(heap)
            self.now = t
            fn(*args)
        if not self.stopped:
            self.now = end if not heap or heap[0][0] > end else self.now
        for n in self.nodes.values():
            if n.alive:
                self._accrue(n)
        return self._result()

    # -- energy --------------------------------------------------------------
    def _accrue(self, n: Node):
        dt = self.now - n.last_t
        if dt > 0 and n.battery is not None and n.current > 0:
            taken = n.battery.drain(n.current, dt)
            n.drained += taken
            if self.record_energy:
                self.ledger.append((self.now, n.id, f"{n.radio}/{n.cpu}", n.current,
                                    taken * 3600 * n.battery.voltage, n.battery.remaining, dt))
        n.last_t = self.now

    def _power(self, n: Node):
        if not n.alive:
            return
        if n.transmitting is not None:
            radio = "tx"
        elif (n.always_on or n.awake or n.rx_tx is not None or n.ack_pending
              or n.mac_state in ("turnaround", "ack_wait")):
            radio = "rx"
        else:
            radio = "off"
        cpu = "active" if n.cpu_job is not None or n.isr else ("idle" if radio != "off" else "powersave")
        if radio == n.radio and cpu == n.cpu:
            return
        self._accrue(n)
        n.radio, n.cpu = radio, cpu
        n.current = n.profile.current(radio, cpu)
        if n.battery is not None:
            n.version += 1
            t_dep = self.now + n.battery.time_to_threshold(n.current)
            if t_dep <= self.sim_end:
                self.push(t_dep, DEPLETE, n.id, self._on_deplete, n, n.version)

    def _flash_write(self, n: Node):
        e = self.cm.flash_write_energy_j
        if e <= 0 or n.battery is None:
            return
        self._accrue(n)
        ah = e / (3600 * n.battery.voltage)
        taken = min(ah, n.battery.remaining)
        n.battery.remaining -= taken
        n.drained += taken
        if self.record_energy:
            self.ledger.append((self.now, n.id, "flash", 0.0, taken * 3600 * n.battery.voltage,
                                n.battery.remaining, 0.0))
        n.version += 1
        t_dep = self.now + n.battery.time_to_threshold(n.current)
        if t_dep <= self.sim_end:
            self.push(t_dep, DEPLETE, n.id, self._on_deplete, n, n.version)

    def _on_deplete(self, n: Node, version):
        if version != n.version or not n.alive:
            return
        self._accrue(n)
        self._die(n)

    def _die(self, n: Node):
        n.alive = False
        n.depleted_at = self.now
        n.version += 1
        self.log(n.id, "depleted")
        for out in n.tx_queue:
            self._release(out.packet, n.id, "node_depleted")
        for job in n.cpu_queue:
            self._release(job[-1], n.id, "node_depleted")
        if n.cpu_job is not None:
            self._release(n.cpu_job[-1], n.id, "node_depleted")
        n.tx_queue.clear()
        n.cpu_queue.clear()
        n.cpu_job = None
        n.isr = 0
        n.isr_until = 0.0
        n.rx_waiting = 0
        n.mac_token += 1
        n.mac_state = "idle"
        n.awake = False
        n.rx_tx = None
        n.ack_pending = 0
        n.radio, n.cpu, n.current = "off", "off", 0.0
        if self.stop_nodes and all(not self.nodes[i].alive for i in self.stop_nodes):
            self.stopped = True
        if self.sc.reboot_delay is not None:
            self.push(self.now + self.sc.reboot_delay, REBOOT, n.id, self._on_reboot, n)

    def _on_reboot(self, n: Node):
        if n.battery is not None:
            added = n.battery.capacity - n.battery.remaining
            n.battery.remaining = n.battery.capacity
            if self.record_energy:
                self.ledger.append((self.now, n.id, "recharge", 0.0, -added * 3600 * n.battery.voltage,
                                    n.battery.remaining, 0.0))
        n.alive = True
        n.life += 1
        n.epoch += 1
        n.last_t = self.now
        n.radio, n.cpu = "off", "powersave"
        keep = self.cm.persist_counters
        for e in n.acl.values():
            if not keep:
                e.highest_counter = 0
            if not (self.cm.blacklist_persistent and n.blacklist is not None):
                e.blacklisted = False
        if not keep:
            n.tx_counter = 0
        if n.blacklist is not None:
            n.blacklist.on_reboot()
        if self.cm.rekey_on_reboot:
            for peer in n.keys:
                n.key_epoch[peer] += 1
                n.keys[peer] = derive_next_key(n.keys[peer], n.key_epoch[peer])
                n.acl[node_address(peer)].key = n.keys[peer]
        if n.challenges is not None:
            n.challenges.reset()
            n.challenge_required = True
        self.log(n.id, "reboot", detail=f"epoch={n.epoch}")
        self._power(n)
        self._start_node(n)
        for a in self.attackers:
            if a.cfg.replay_after_reboot and n.id in a.cfg.targets:
                caps = [c for c in a.state.captures if address_node(c.dst) == n.id]
                for t, raw in capture_and_replay(caps, self.now, a.cfg.replay_spacing):
                    self.push(t, REPLAY, a.id, self._on_replay, a, raw)

    # -- node lifecycle ------------------------------------------------------
    def _start_node(self, n: Node):
        life = n.life
        if n.always_on:
            self._power(n)
        else:
            T, phase = n.duty.T, n.cfg.phase
            n.k = max(math.ceil((self.now - phase) / T - 1e-12), 0)
            self.push(phase + n.k * T, WAKE, n.id, self._on_wake, n, life)
        rate = n.cfg.traffic_rate
        if rate > 0 and n.id != self.topo.gateway:
            self.push(self.now + float(n.rng.uniform(0, 1.0 / rate)), GEN, n.id, self._on_gen, n, life)

    def _on_wake(self, n: Node, life):
        if not n.alive or life != n.life:
            return
        n.awake = True
        self.log(n.id, "wake")
        T, tau, phase = n.duty.T, n.duty.tau, n.cfg.phase
        self.push(phase + n.k * T + tau, SLEEP, n.id, self._on_sleep, n, life)
        n.k += 1
        self.push(phase + n.k * T, WAKE, n.id, self._on_wake, n, life)
        self._power(n)
        self._mac_kick(n)

    def _on_sleep(self, n: Node, life):
        if not n.alive or life != n.life:
            return
        n.awake = False
        self.log(n.id, "sleep")
        if n.mac_state in ("backoff", "wait_cpu"):
            n.mac_token += 1
            n.mac_state = "idle"
        self._power(n)

    def _can_tx(self, n: Node) -> bool:
        return n.alive and (n.always_on or n.awake)

    def _on_gen(self, n: Node, life):
        if not n.alive or life != n.life:
            return
        self.packet_ids += 1
        n.gen_seq += 1
        p = Packet(self.packet_ids, n.id, n.gen_seq, self.now)
        p.copies = 1
        self.packets.append(p)
        self.log(n.id, "generated", n.id, detail=f"seq={n.gen_seq}")
        self._cpu_enqueue(n, ("secure", OutFrame(None, n.next_hop, "data", p), p))
        gap = 1.0 / n.cfg.traffic_rate
        if n.cfg.traffic_jitter:
            gap *= 1.0 + float(n.rng.uniform(-n.cfg.traffic_jitter, n.cfg.traffic_jitter))
        self.push(self.now + gap, GEN, n.id, self._on_gen, n, life)

    def _release(self, packet: Packet | None, where: int, reason: str):
        if packet is None:
            return
        packet.copies -= 1
        if packet.copies == 0 and not packet.done:
            packet.done = True
            self.log(where, "lost", packet.origin, detail=reason)

    # -- CPU -----------------------------------------------------------------
    def _clock_scale(self, n: Node) -> float:
        return 1.0 if n.cfg.clock_hz is None else self.cost.clock_hz / n.cfg.clock_hz

    def _cpu_enqueue(self, n: Node, job):
        n.cpu_queue.append(job)
        self._cpu_kick(n)

    def _cpu_kick(self, n: Node):
        if n.cpu_job is not None or not n.alive or not n.cpu_queue:
            return
        job = n.cpu_queue.popleft()
        kind = job[0]
        scale = self._clock_scale(n)
        if kind == "secure":
            dur = self.cost.cpu_time(n.cfg.security_level, n.cfg.payload_len) * scale
        elif kind == "rx":
            n.rx_waiting -= 1
            tx = job[1]
            verdict = self._precheck(n, tx)
            job = ("rx", tx, verdict, job[-1])
            if verdict == "decrypt":
                fr = tx.frame
                dur = self.cost.cpu_time(fr.level, len(fr.payload)) * scale
                self.log(n.id, "decrypt_start", tx.sender, tx.nbytes, tx.id)
            elif verdict in ("respond",):
                dur = self.cost.cpu_time(SecurityLevel.MIC_64, 24) * scale
            else:
                dur = self.cost.drop_time(tx.nbytes) * scale
        else:
            raise AssertionError(kind)
        n.cpu_job = job
        n.cpu_done_at = max(self.now, n.isr_until) + dur
        n.cpu_token += 1
        self.push(n.cpu_done_at, CPU_DONE, n.id, self._on_cpu_done, n, n.life, n.cpu_token)
        self._power(n)

    def _precheck(self, n: Node, tx: Tx) -> str:
        fr = tx.frame
        if fr.mac_header.frame_type == FRAME_TYPE_CMD:
            cmd = fr.payload[:1]
            if cmd == bytes([CMD_CHALLENGE]):
                return "respond"
            if cmd == bytes([CMD_RESPONSE]):
                return "verify"
            return "unknown"
        acl = n.acl.get(fr.src)
        try:
            check_replay(acl, fr)
        except ReplayRejected:
            return "replay"
        except SecurityError as exc:
            return "blacklisted" if acl is not None and acl.blacklisted else type(exc).__name__
        if n.challenge_required and fr.src not in n.challenges.verified:
            return "hold"
        return "decrypt"

    def _on_cpu_done(self, n: Node, life, token):
        if not n.alive or life != n.life or n.cpu_job is None or token != n.cpu_token:
            return
        job, n.cpu_job = n.cpu_job, None
        if job[0] == "secure":
            self._finish_secure(n, job[1])
        else:
            self._finish_rx(n, job[1], job[2])
        if n.mac_state == "wait_cpu":
            self._cca_decide(n)
        self._cpu_kick(n)
        self._power(n)

    def _finish_secure(self, n: Node, out: OutFrame):
        p = out.packet
        n.tx_counter += 1
        n.mac_seq = (n.mac_seq + 1) & 0xFF
        hdr = MacHeader(src=n.addr, dst=node_address(out.dst), seq=n.mac_seq, ack_request=True)
        payload = app_payload(p.origin, p.seq, n.cfg.payload_len)
        out.frame = secure_frame(n.keys[out.dst], Frame(hdr, payload, n.tx_counter), n.cfg.security_level)
        if self.cm.persist_counters:
            self._flash_write(n)
        self._mac_enqueue(n, out)

    def _finish_rx(self, n: Node, tx: Tx, verdict: str):
        fr, src = tx.frame, tx.frame.src
        sid = address_node(src) if len(src) == 8 else None
        packet = tx.packet
        bl = n.blacklist
        if verdict == "decrypt":
            self.log(n.id, "decrypt_end", tx.sender, tx.nbytes, tx.id)
            acl = n.acl[src]
            try:
                plain = unsecure_frame(None, acl, fr)
            except IntegrityFailure:
                self.log(n.id, "rx_integrity_fail", sid, tx.nbytes, tx.id, tx.kind)
                if bl is not None and bl.observe(src, "integrity_fail"):
                    acl.blacklisted = True
                    self.log(n.id, "blacklist_add", sid)
                self._release(packet, n.id, "integrity")
                return
            if bl is not None:
                bl.observe(src, "ok")
            if self.cm.persist_counters:
                self._flash_write(n)
            app = parse_app_payload(plain.payload)
            if app is None:
                self.log(n.id, "rx_unauth_accept", sid, tx.nbytes, tx.id, tx.kind)
                self._release(packet, n.id, "garbage")
                return
            self.log(n.id, "rx_ok", sid, tx.nbytes, tx.id, "replayed" if tx.kind == "replay" else "")
            if packet is None or tx.kind == "replay":
                return
            if n.id == self.topo.gateway:
                if not packet.done:
                    packet.done = packet.delivered = True
                    self.log(n.id, "delivered", packet.origin, detail=f"seq={packet.seq}")
                packet.copies -= 1
            else:
                self._cpu_enqueue(n, ("secure", OutFrame(None, n.next_hop, "data", packet), packet))
            return
        if verdict == "replay":
            self.log(n.id, "rx_replay_reject", sid, tx.nbytes, tx.id, tx.kind)
            if bl is not None:
                bl.observe(src, "replay_reject")
        elif verdict == "blacklisted":
            self.log(n.id, "rx_blacklisted", sid, tx.nbytes, tx.id, tx.kind)
        elif verdict == "hold":
            self.log(n.id, "rx_challenge_hold", sid, tx.nbytes, tx.id, tx.kind)
            if n.challenges.pending(src, self.now) is None:
                self._send_challenge(n, sid)
        elif verdict == "respond":
            self._send_response(n, sid, fr.payload)
        elif verdict == "verify":
            key = n.keys.get(sid)
            result = "failed"
            if key is not None and n.challenges is not None:
                try:
                    result = n.challenges.verify(key, src, fr.payload[1:9], self.now)
                except (SessionExpired, ValueError):
                    result = "failed"
            self.log(n.id, f"challenge_{result}", sid)
        else:
            self.log(n.id, "rx_unknown_source", sid, tx.nbytes, tx.id, verdict)
        self._release(packet, n.id, verdict)

    # -- challenge-response --------------------------------------------------
    def _send_challenge(self, n: Node, peer: int):
        s = n.challenges.issue(node_address(peer), self.now, n.epoch)
        payload = bytes([CMD_CHALLENGE]) + n.epoch.to_bytes(4, "big") + s.nonce
        self._send_command(n, peer, payload)
        self.log(n.id, "challenge_issued", peer)
        self.push(self.now + s.timeout + 1e-9, CHALLENGE_EXPIRE, n.id, self._on_challenge_expire, n, n.life)

    def _on_challenge_expire(self, n: Node, life):
        if not n.alive or life != n.life or n.challenges is None:
            return
        for s in n.challenges.expire(self.now):
            self.log(n.id, "challenge_failed", address_node(s.peer), detail="timeout")

    def _send_response(self, n: Node, peer: int, payload: bytes):
        if peer not in n.keys:
            return
        epoch = int.from_bytes(payload[1:5], "big")
        nonce = payload[5:21]
        entry = n.acl[node_address(peer)]
        if self.cm.rekey_on_reboot:
            while n.key_epoch[peer] < epoch:
                n.key_epoch[peer] += 1
                n.keys[peer] = derive_next_key(n.keys[peer], n.key_epoch[peer])
                entry.key = n.keys[peer]
                entry.highest_counter = 0
        elif not self.cm.persist_counters:
            # the challenger restarted its counters
            entry.highest_counter = 0
        resp = challenge_response(n.keys[peer], nonce, n.addr)
        self._send_command(n, peer, bytes([CMD_RESPONSE]) + resp)

    def _send_command(self, n: Node, peer: int, payload: bytes):
        n.mac_seq = (n.mac_seq + 1) & 0xFF
        hdr = MacHeader(src=n.addr, dst=node_address(peer), seq=n.mac_seq, frame_type=FRAME_TYPE_CMD,
                        ack_request=True)
        self._mac_enqueue(n, OutFrame(SecuredFrame(hdr, None, payload), peer, "command"))

    # -- MAC -----------------------------------------------------------------
    def _mac_enqueue(self, n: Node, out: OutFrame):
        if len(n.tx_queue) >= n.cfg.tx_queue:
            in_service = n.mac_state != "idle"
            if len(n.tx_queue) > (1 if in_service else 0):
                victim = n.tx_queue[1] if in_service else n.tx_queue[0]
                n.tx_queue.remove(victim)
            else:
                victim = out
            self.log(n.id, "queue_drop", victim.dst)
            self._release(victim.packet, n.id, "queue_overflow")
            if victim is out:
                return
        n.tx_queue.append(out)
        self._mac_kick(n)

    def _mac_kick(self, n: Node):
        if n.mac_state != "idle" or not n.tx_queue or not self._can_tx(n):
            return
        csma = n.cfg.csma
        n.nb = 0
        n.be = csma.fixed_be if csma.fixed_be is not None else csma.min_be
        self._backoff(n)

    def _backoff(self, n: Node):
        n.mac_state = "backoff"
        n.mac_token += 1
        delay = int(n.rng.integers(0, 2 ** n.be)) * self.slot
        self.push(self.now + delay + self.cca_time, CCA, n.id, self._on_cca, n, n.mac_token)

    def _on_cca(self, n: Node, token):
        if token != n.mac_token or not n.alive:
            return
        if not self._can_tx(n):
            n.mac_state = "idle"
            return
        if n.cpu_job is not None:
            n.mac_state = "wait_cpu"
            return
        self._cca_decide(n)

    def _cca_decide(self, n: Node):
        busy = (n.signals > 0 or n.last_busy_end > self.now - self.cca_time or n.rx_tx is not None
                or n.transmitting is not None or n.ack_pending > 0)
        if not busy:
            n.mac_state = "turnaround"
            n.mac_token += 1
            self.push(self.now + self.turnaround, TX_START, n.id, self._on_tx_start, n, n.mac_token)
            self._power(n)
            return
        csma = n.cfg.csma
        n.nb += 1
        if csma.fixed_be is None:
            n.be = min(n.be + 1, csma.max_be)
        if n.nb > csma.max_backoffs:
            out = n.tx_queue.popleft()
            self.log(n.id, "channel_access_failure", out.dst)
            self._release(out.packet, n.id, "channel_access_failure")
            n.retries = 0
            n.mac_state = "idle"
            self._mac_kick(n)
        else:
            self._backoff(n)

    def _on_tx_start(self, n: Node, token):
        if token != n.mac_token or not n.alive:
            return
        if n.transmitting is not None:
            n.mac_state = "backoff"
            self._cca_decide(n)
            return
        out = n.tx_queue[0]
        fr = out.frame
        nbytes = len(fr)
        want_ack = out.ack and n.cfg.csma.ack
        tx = self._new_tx(n, out.dst, out.kind, fr, nbytes, out.packet, fr.mac_header.seq, want_ack)
        n.mac_state = "tx"
        n.cur_tx = tx
        self._start_tx(n, tx)

    def _new_tx(self, s: Station, dst, kind, frame, nbytes, packet=None, seq=0, ack=False, air=None):
        self.tx_ids += 1
        dur = airtime(nbytes, self.sc.data_rate) if air is None else air
        return Tx(self.tx_ids, s.id, dst, kind, frame, nbytes, self.now, self.now + dur, packet, seq, ack)

    def _start_tx(self, s: Station, tx: Tx):
        s.transmitting = tx
        if not s.is_attacker:
            if s.rx_tx is not None:
                s.rx_bad = True
            self._power(s)
        self.log(s.id, "tx_start", tx.dst, tx.nbytes, tx.id, tx.kind)
        if self.frame_sink is not None and tx.frame is not None:
            self.frame_sink.append((self.seed, self.now, s.id, tx.dst, tx.frame.to_bytes()))
        for r, comm in s.nbrs:
            r.signals += 1
            if r.is_attacker or not r.alive:
                continue
            if r.rx_tx is not None:
                r.rx_bad = True
                if tx.dst == r.id:
                    tx.dst_collided = True
            elif comm and r.radio == "rx" and r.transmitting is None:
                if r.signals == 1:
                    r.rx_tx = tx
                    r.rx_bad = False
                elif tx.dst == r.id:
                    tx.dst_collided = True
        self.push(tx.end, TX_END, s.id, self._on_tx_end, s, tx)

    def _on_tx_end(self, s: Station, tx: Tx):
        s.transmitting = None
        for r, comm in s.nbrs:
            r.signals -= 1
            r.last_busy_end = self.now
            if r.is_attacker:
                if comm:
                    self._sniff(r, tx)
                continue
            if r.rx_tx is tx:
                r.rx_tx = None
                bad, r.rx_bad = r.rx_bad, False
                if r.alive:
                    self._delivered(r, tx, not bad)
                    self._power(r)
            elif tx.dst == r.id and tx.dst_collided and r.alive and tx.kind != "ack":
                self.log(r.id, "rx_collision", tx.sender, tx.nbytes, tx.id)
        self.log(s.id, "tx_end", tx.dst, tx.nbytes, tx.id, tx.kind)
        if s.is_attacker:
            if s.backlog:
                self._attacker_emit(s, s.backlog.popleft())
            return
        n = s
        if not n.alive:
            return
        if tx.kind == "ack":
            self._power(n)
            self._mac_kick(n)
            return
        if tx.ack:
            n.mac_state = "ack_wait"
            n.mac_token += 1
            self.push(self.now + self.ack_wait, ACK_TIMEOUT, n.id, self._on_ack_timeout, n, n.mac_token)
            self._power(n)
        else:
            self._tx_success(n)

    def _delivered(self, r: Node, tx: Tx, ok: bool):
        if tx.kind == "ack":
            if ok and r.mac_state == "ack_wait" and tx.dst == r.id and r.cur_tx is not None \
                    and r.cur_tx.seq == tx.seq:
                self._tx_success(r)
            return
        if tx.dst != r.id:
            return
        if not ok:
            self.log(r.id, "rx_collision", tx.sender, tx.nbytes, tx.id)
            return
        self.log(r.id, "rx_frame", tx.sender, tx.nbytes, tx.id, tx.kind)
        if tx.ack:
            r.ack_pending += 1
            self.push(self.now + self.turnaround, ACK_SEND, r.id, self._on_ack_send, r, tx, r.life)
        acl = r.acl.get(tx.frame.src)
        if acl is not None and acl.blacklisted:
            # dropped by MAC filtering in the receive interrupt, ahead of any queued crypto work
            self.log(r.id, "rx_blacklisted", tx.sender, tx.nbytes, tx.id, tx.kind)
            cost = self.cost.drop_time(tx.nbytes) * self._clock_scale(r)
            if r.cpu_job is not None:
                # preempts the running job, which finishes that much later
                r.cpu_done_at += cost
                r.cpu_token += 1
                self.push(r.cpu_done_at, CPU_DONE, r.id, self._on_cpu_done, r, r.life, r.cpu_token)
            else:
                r.isr += 1
                r.isr_until = max(self.now, r.isr_until) + cost
                self._power(r)
                self.push(r.isr_until, CPU_DONE, r.id, self._on_isr_done, r, r.life)
            return
        if r.rx_waiting >= r.cfg.rx_queue:
            self.log(r.id, "rx_drop", tx.sender, tx.nbytes, tx.id, "queue_full")
            return
        if tx.packet is not None and tx.kind == "data":
            tx.packet.copies += 1
        r.rx_waiting += 1
        self._cpu_enqueue(r, ("rx", tx, tx.packet if tx.kind == "data" else None))

    def _on_isr_done(self, r: Node, life):
        if life != r.life or not r.alive:
            return
        r.isr -= 1
        self._power(r)

    def _on_ack_send(self, r: Node, tx: Tx, life):
        if life != r.life or not r.alive:
            return
        r.ack_pending -= 1
        if r.transmitting is not None:
            self._power(r)
            return
        ack = self._new_tx(r, tx.sender, "ack", None, ACK_MPDU, seq=tx.seq, air=self.ack_air)
        self._start_tx(r, ack)

    def _on_ack_timeout(self, n: Node, token):
        if token != n.mac_token or not n.alive:
            return
        n.retries += 1
        csma = n.cfg.csma
        if n.retries > csma.max_retries:
            out = n.tx_queue.popleft()
            self.log(n.id, "tx_fail", out.dst, detail="no_ack")
            self._release(out.packet, n.id, "no_ack")
            n.retries = 0
            n.mac_state = "idle"
            n.cur_tx = None
            self._power(n)
            self._mac_kick(n)
            return
        n.mac_state = "idle"
        self._power(n)
        if self._can_tx(n):
            n.nb = 0
            n.be = csma.fixed_be if csma.fixed_be is not None else csma.min_be
            self._backoff(n)

    def _tx_success(self, n: Node):
        out = n.tx_queue.popleft()
        n.retries = 0
        n.cur_tx = None
        n.mac_state = "idle"
        n.mac_token += 1
        # the receiver holds its own copy once decoded
        self._release(out.packet, n.id, "dropped_by_receiver")
        self._power(n)
        self._mac_kick(n)

    # -- attackers -----------------------------------------------------------
    def _start_attacker(self, a: Attacker):
        cfg = a.cfg
        victim = self.nodes[cfg.targets[0]] if cfg.targets else None
        duty = victim.duty if victim is not None else None
        phase = victim.cfg.phase if victim is not None else 0.0
        a.schedule = ghost_schedule(cfg, duty, self.sim_end, a.rng, victim_phase=phase)
        self._attacker_next(a)

    def _attacker_next(self, a: Attacker):
        t = next(a.schedule, None)
        if t is not None:
            self.push(t + a.offset, ATTACK, a.id, self._on_attack, a)

    def _spoof_source(self, a: Attacker, victim: Node) -> int:
        spoof = a.cfg.spoof
        nbrs = sorted(v for v in self.topo.neighbors()[victim.id])
        if isinstance(spoof, int):
            return spoof
        if spoof == "parent" and victim.next_hop is not None:
            return victim.next_hop
        if spoof == "child":
            kids = [c for c, p in self.routes.items() if p == victim.id]
            return kids[0] if kids else victim.next_hop
        if spoof == "random-neighbor":
            return int(a.rng.choice(nbrs))
        if spoof == "rotate":
            a.rotate += 1
            return nbrs[(a.rotate - 1) % len(nbrs)]
        return nbrs[0]

    def _on_attack(self, a: Attacker):
        cfg = a.cfg
        victim = self.nodes[cfg.targets[a.target_idx % len(cfg.targets)]]
        a.target_idx += 1
        spoof = self._spoof_source(a, victim)
        addr = node_address(spoof)
        a.seq += 1
        frame = craft_bogus_frame(victim.addr, a.state.observed.get(addr, 0), cfg.counter_strategy, cfg.level,
                                  cfg.payload_len, spoof_src=addr, rng=a.rng, seq=a.seq)
        a.state.observed[addr] = max(a.state.observed.get(addr, 0), frame.frame_counter)
        a.state.sent += 1
        self._attacker_emit(a, ("bogus", victim.id, frame))
        self._attacker_next(a)

    def _on_replay(self, a: Attacker, raw: bytes):
        frame = SecuredFrame.from_bytes(raw)
        self._attacker_emit(a, ("replay", address_node(frame.dst), frame))

    def _attacker_emit(self, a: Attacker, item):
        if a.transmitting is not None:
            a.backlog.append(item)
            return
        if not a.cfg.blind and (a.signals > 0 or a.last_busy_end > self.now - self.cca_time):
            delay = (int(a.rng.integers(0, 8)) + 1) * self.slot
            self.push(self.now + delay, ATTACK, a.id, self._attacker_emit, a, item)
            return
        kind, dst, frame = item
        tx = self._new_tx(a, dst, kind, frame, len(frame))
        self._start_tx(a, tx)

    def _sniff(self, a: Attacker, tx: Tx):
        if tx.kind not in ("data", "command") or tx.frame is None:
            return
        fr = tx.frame
        if fr.aux_header is not None:
            a.state.observed[fr.src] = max(a.state.observed.get(fr.src, 0), fr.frame_counter)
        if a.cfg.replay_after_reboot and tx.kind == "data" and (tx.dst in a.cfg.targets
                                                                 or tx.sender in a.cfg.targets):
            a.state.captures.append(CapturedFrame.from_frame(fr, tx.start))

    # -- fast-forward --------------------------------------------------------
    def _on_cycle(self):
        ff = self.ff
        battery_nodes = [n for n in self.nodes.values() if n.battery is not None and n.alive]
        for n in battery_nodes:
            self._accrue(n)
        sig = tuple((round(r.time_s - (self.now - ff.period), 9), r.node, r.event, r.counterpart, r.nbytes)
                    for r in self.records[ff.rec_start:])
        charge = {n.id: n.drained for n in battery_nodes}
        prev = ff.marks
        ff.marks = charge
        ff.rec_start = len(self.records)
        if prev and set(prev) == set(charge):
            delta = {i: charge[i] - prev[i] for i in charge}
            ff.history.append((sig, delta))
        else:
            ff.history.clear()
        ff.history = ff.history[-3:]
        quiet = all(n.transmitting is None and n.rx_tx is None and n.cpu_job is None and not n.isr and n.mac_state == "idle"
                    and not n.tx_queue for n in self.nodes.values()) \
            and all(a.transmitting is None and not a.backlog for a in self.attackers)
        if len(ff.history) == 3 and quiet and self._repeating(ff.history):
            self._fast_forward(ff.history[-1])
        if battery_nodes:
            self.push(self.now + ff.period, -1, -1, self._on_cycle)

    @staticmethod
    def _repeating(history) -> bool:
        sig0, d0 = history[0]
        for sig, d in history[1:]:
            if sig != sig0:
                return False
            for i, v in d.items():
                if not math.isclose(v, d0[i], rel_tol=1e-9, abs_tol=1e-18):
                    return False
        return True

    def _fast_forward(self, last):
        sig, delta = last
        ff = self.ff
        horizon = int((self.sim_end - self.now) / ff.period) - 1
        budgets = [horizon]
        for i, d in delta.items():
            n = self.nodes[i]
            if d > 0:
                budgets.append(int((n.battery.remaining - n.battery.threshold) / d) - 2)
        cycles = min(budgets)
        if cycles < 1:
            return
        shift = cycles * ff.period
        # a uniform shift keeps the heap invariant
        self.heap[:] = [(t + shift, *rest) for t, *rest in self.heap]
        for a in self.attackers:
            a.offset += shift
        self.log(-1, "fast_forward", detail=f"cycles={cycles}")
        self.now += shift
        for n in self.nodes.values():
            if n.battery is not None and n.alive:
                charge = delta[n.id] * cycles
                taken = min(charge, n.battery.remaining)
                n.battery.remaining -= taken
                n.drained += taken
                if self.record_energy:
                    self.ledger.append((self.now, n.id, "fast_forward", taken * 3.6e6 / shift,
                                        taken * 3600 * n.battery.voltage, n.battery.remaining, shift))
                n.version += 1
                t_dep = self.now + n.battery.time_to_threshold(n.current)
                if t_dep <= self.sim_end:
                    self.push(t_dep, DEPLETE, n.id, self._on_deplete, n, n.version)
            n.last_t = self.now
            if n.duty is not None:
                n.k += cycles
        for _, node, event, _, _ in sig:
            self.counts[(node, event)] += cycles
        ff.history.clear()
        ff.marks = {n.id: n.drained for n in self.nodes.values() if n.battery is not None and n.alive}
        ff.rec_start = len(self.records)

    # -- results -------------------------------------------------------------
    def _result(self) -> TraceLog:
        end = self.now
        per_origin, delivered, lost, inflight = Counter(), Counter(), Counter(), Counter()
        for p in self.packets:
            per_origin[p.origin] += 1
            if p.delivered:
                delivered[p.origin] += 1
            elif p.done:
                lost[p.origin] += 1
            else:
                inflight[p.origin] += 1
        summary = {}
        for nid, n in self.nodes.items():
            elapsed = (n.depleted_at if n.depleted_at is not None else end)
            summary[nid] = {
                "lifetime_s": n.depleted_at,
                "drained_Ah": n.drained if n.battery is not None else None,
                "energy_J": n.drained * 3600 * n.battery.voltage if n.battery is not None else None,
                "mean_current_mA": n.drained * 3.6e6 / elapsed if n.battery is not None and elapsed > 0 else None,
                "generated": per_origin[nid],
                "delivered": delivered[nid],
                "throughput_pps": delivered[nid] / end if end > 0 else 0.0,
                "lost": lost[nid],
                "in_flight": inflight[nid],
                "decrypts": self.counts[(nid, "decrypt_end")],
                "integrity_fail": self.counts[(nid, "rx_integrity_fail")],
                "replay_reject": self.counts[(nid, "rx_replay_reject")],
                "unauth_accept": self.counts[(nid, "rx_unauth_accept")],
                "blacklisted_drops": self.counts[(nid, "rx_blacklisted")],
                "rx_ok": self.counts[(nid, "rx_ok")],
            }
        return TraceLog(self.records, self.ledger, summary, self.counts, end, self.seed, self.sc.name,
                        self.topo.gateway, all_paths(self.topo, self.routes), dict(self.topo.positions))


def run(scenario, seed: int = 0, **kw) -> TraceLog:
    """Simulate ``scenario`` once; identical (scenario, seed) give identical traces."""
    return Simulation(scenario, seed, **kw).run()
