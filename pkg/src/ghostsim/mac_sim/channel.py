"""Stateless reference rules for the channel, CSMA/CA and duty cycling.

The event engine applies the same rules incrementally; these functions state
them over whole intervals and are handy for checking a trace after the fact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from ..energy import DutyCycle


@dataclass(frozen=True)
class Transmission:
    sender: int
    start: float
    end: float
    tx_id: int = 0


def channel_resolve(transmissions: Sequence[Transmission], positions: Mapping[int, Sequence[float]],
                    comm_range: float, interference_range: float,
                    listening: Mapping[int, bool]) -> dict[int, list[tuple[int, str]]]:
    """For each listening receiver, ``(tx_id, 'decoded' | 'collision')`` per frame in range.

    A receiver decodes a frame iff it listens, the sender is within
    ``comm_range`` and no other transmission within ``interference_range``
    of the receiver overlaps the frame. Out-of-comm-range senders only occupy
    the channel.
    """
    out: dict[int, list[tuple[int, str]]] = {}
    for r, on in listening.items():
        if not on:
            continue
        heard = [t for t in transmissions if t.sender != r
                 and math.dist(positions[t.sender], positions[r]) <= interference_range]
        results = []
        for t in heard:
            if math.dist(positions[t.sender], positions[r]) > comm_range:
                continue
            clash = any(o is not t and o.start < t.end and t.start < o.end for o in heard)
            clash = clash or any(o.sender == r and o.start < t.end and t.start < o.end for o in transmissions)
            results.append((t.tx_id, "collision" if clash else "decoded"))
        out[r] = results
    return out


@dataclass(frozen=True)
class CsmaState:
    nb: int = 0  # backoffs taken for the current frame
    be: int = 3
    retries: int = 0


def csma_attempt(state: CsmaState, channel_busy: bool, *, min_be=3, max_be=5, max_backoffs=4,
                 fixed_be: int | None = None) -> tuple[str, CsmaState]:
    """Outcome of one CCA: ``transmit``, ``backoff`` or ``failure`` plus the next state."""
    if not channel_busy:
        return "transmit", state
    nb = state.nb + 1
    be = fixed_be if fixed_be is not None else min(state.be + 1, max_be)
    if nb > max_backoffs:
        return "failure", CsmaState(0, fixed_be if fixed_be is not None else min_be, state.retries)
    return "backoff", replace(state, nb=nb, be=be)


def backoff_slots(be: int, rng) -> int:
    return int(rng.integers(0, 2 ** be))


def duty_schedule(duty: DutyCycle | None, t: float, *, phase: float = 0.0, busy: bool = False) -> str:
    """``awake`` in ``[kT + phase, kT + phase + tau)``, while ``busy``, or always without a duty cycle."""
    if duty is None or busy:
        return "awake"
    pos = (t - phase) % duty.T
    if math.isclose(pos, duty.T, abs_tol=1e-12):
        pos = 0.0
    return "awake" if pos < duty.tau else "asleep"
