"""Attacker behaviours: bogus secured frames with plausible headers, emission
schedules, capture/replay after a victim reboot and keystream-reuse recovery."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .energy import DutyCycle
from .errors import LengthMismatch, ValidationError
from .frame_security import (MAX_COUNTER, AuxSecurityHeader, MacHeader, SecuredFrame, as_level)

STRATEGIES = ("increment", "fixed-large", "random-increasing")
RATE_MODELS = ("constant", "poisson", "per_slot")
BACKOFF_SLOT = 320e-6
FIXED_LARGE_COUNTER = MAX_COUNTER - 1  # 2**32 - 2, the largest a sender may use


@dataclass
class AttackerConfig:
    position: tuple[float, float]
    targets: list[int]
    rate_model: str = "constant"
    rate: float = 10.0  # frames/s, constant model
    mean_interval: float = 0.02  # s, poisson model
    p_att: float = 0.0  # per backoff slot, per_slot model
    payload_len: int = 60
    counter_strategy: str = "increment"
    level: int = 7
    blind: bool = True
    rendezvous: bool = True
    phase: float = 0.0
    jitter: float = 0.0
    start: float = 0.0
    stop: float = math.inf
    spoof: str | int = "parent"  # parent | child | random-neighbor | rotate | node id
    replay_after_reboot: bool = False
    replay_spacing: float = 0.005

    def __post_init__(self):
        self.position = (float(self.position[0]), float(self.position[1]))
        self.targets = [int(t) for t in self.targets]
        if self.rate_model not in RATE_MODELS:
            raise ValidationError(f"unknown rate model {self.rate_model!r}")
        if self.counter_strategy not in STRATEGIES:
            raise ValidationError(f"unknown counter strategy {self.counter_strategy!r}")
        if self.rate < 0 or self.mean_interval <= 0 or not 0 <= self.p_att <= 1:
            raise ValidationError("attack rate parameters out of range")
        if not 0 <= self.payload_len <= 100:
            raise ValidationError("attacker payload_len must be within 0..100")
        if not 0 <= int(self.level) <= 7:
            raise ValidationError("attacker level must be 0..7")
        if self.jitter < 0:
            raise ValidationError("jitter must be non-negative")

    @property
    def mean_rate(self) -> float:
        if self.rate_model == "constant":
            return self.rate
        if self.rate_model == "poisson":
            return 1.0 / self.mean_interval
        return self.p_att / BACKOFF_SLOT


def next_counter(observed: int, strategy: str, rng=None) -> int:
    if strategy == "increment":
        ctr = observed + 1
    elif strategy == "fixed-large":
        ctr = FIXED_LARGE_COUNTER
    elif strategy == "random-increasing":
        rng = np.random.default_rng() if rng is None else rng
        ctr = observed + int(rng.integers(1, 1025))
    else:
        raise ValueError(f"unknown counter strategy {strategy!r}")
    return min(ctr, FIXED_LARGE_COUNTER)


def craft_bogus_frame(victim: bytes, observed_counter: int, strategy: str = "increment", level=7,
                      payload_len: int = 60, *, spoof_src: bytes | None = None, rng=None,
                      seq: int = 0) -> SecuredFrame:
    """Well-formed secured frame whose payload and MIC are random bytes.

    ``spoof_src`` should be an address the victim trusts so the frame clears
    the access-control lookup; the counter is chosen above ``observed_counter``.
    """
    level = as_level(level)
    if level == 0:
        raise ValueError("level 0 frames carry no security processing to exploit")
    rng = np.random.default_rng() if rng is None else rng
    src = spoof_src if spoof_src is not None else bytes(rng.integers(0, 256, 8, dtype=np.uint8))
    ctr = next_counter(observed_counter, strategy, rng)
    payload = bytes(rng.integers(0, 256, payload_len, dtype=np.uint8))
    mic = bytes(rng.integers(0, 256, level.mic_len, dtype=np.uint8))
    header = MacHeader(src=bytes(src), dst=bytes(victim), seq=seq & 0xFF)
    return SecuredFrame(header, AuxSecurityHeader(int(level), ctr), payload, mic)


def ghost_schedule(config: AttackerConfig, duty: DutyCycle | None = None, sim_end: float = math.inf,
                   rng=None, *, victim_phase: float = 0.0) -> Iterator[float]:
    """Lazily yield emission times in ``[start, min(stop, sim_end))``.

    Constant-rate schedules start at the victim's wake-up instant when
    ``rendezvous`` is set, so with one frame per cycle every frame lands at
    the start of an active period.
    """
    rng = np.random.default_rng() if rng is None else rng
    end = min(config.stop, sim_end)
    start = config.start
    if config.rate_model == "constant":
        if config.rate <= 0:
            return
        step = 1.0 / config.rate
        origin = start
        if config.rendezvous and duty is not None:
            k = math.ceil((start - victim_phase) / duty.T - 1e-12)
            origin = victim_phase + k * duty.T
        origin += config.phase
        j = 0
        while True:
            t = origin + j * step
            if config.jitter:
                t += float(rng.uniform(0.0, config.jitter))
            if t >= end:
                return
            yield t
            j += 1
    elif config.rate_model == "poisson":
        t = start + config.phase
        while True:
            t += float(rng.exponential(config.mean_interval))
            if t >= end:
                return
            yield t
    else:
        if config.p_att <= 0:
            return
        slot = math.ceil((start + config.phase) / BACKOFF_SLOT - 1e-9)
        while True:
            slot += int(rng.geometric(config.p_att))
            t = slot * BACKOFF_SLOT
            if t >= end:
                return
            yield t


@dataclass(frozen=True)
class CapturedFrame:
    raw: bytes
    time: float
    src: bytes
    dst: bytes
    frame_counter: int

    @classmethod
    def from_frame(cls, frame: SecuredFrame, time: float) -> "CapturedFrame":
        return cls(frame.to_bytes(), time, frame.src, frame.dst, frame.frame_counter)

    def frame(self) -> SecuredFrame:
        return SecuredFrame.from_bytes(self.raw)


def capture_and_replay(captures: Iterable[CapturedFrame], reboot_time: float,
                       spacing: float = 0.005) -> list[tuple[float, bytes]]:
    """Re-emit every captured frame verbatim, in capture order, after ``reboot_time``."""
    captures = sorted(captures, key=lambda c: c.time)
    if captures and reboot_time <= captures[-1].time:
        raise ValueError("reboot_time must follow the last capture")
    return [(reboot_time + (i + 1) * spacing, c.raw) for i, c in enumerate(captures)]


def xor_recover(c1: bytes, c2: bytes) -> bytes:
    """c1 xor c2; equals p1 xor p2 when both share one keystream."""
    if len(c1) != len(c2):
        raise LengthMismatch(f"{len(c1)} != {len(c2)}")
    return bytes(a ^ b for a, b in zip(c1, c2))


def save_captures(path, captures: Iterable[CapturedFrame]):
    with open(path, "w", encoding="ascii") as fh:
        for c in captures:
            fh.write(f"{c.time!r} {c.raw.hex()}\n")


def load_captures(path) -> list[CapturedFrame]:
    out = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            t, raw = line.split()
            frame = SecuredFrame.from_bytes(bytes.fromhex(raw))
            out.append(CapturedFrame.from_frame(frame, float(t)))
    return out


@dataclass
class AttackerState:
    """Run-time memory of one attacker inside the simulator."""
    config: AttackerConfig
    observed: dict = field(default_factory=dict)  # spoofed address -> highest counter seen or sent
    captures: list = field(default_factory=list)
    sent: int = 0
