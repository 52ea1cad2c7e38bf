"""Node-side defences: source blacklisting, keyed challenge-response and
key rotation on reboot."""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass, field

from .errors import SessionAlreadyPending, SessionExpired
from .frame_security import cbc_mac

OUTCOMES = ("integrity_fail", "replay_reject", "ok")


@dataclass
class BlacklistState:
    threshold: int = 5
    persistent: bool = False
    counts: dict = field(default_factory=dict)
    blacklist: set = field(default_factory=set)

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")

    def observe(self, src, outcome: str) -> bool:
        """Record one outcome for ``src``; True when this call blacklists it."""
        if outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {outcome!r}")
        if outcome == "ok":
            self.counts.pop(src, None)
            return False
        if outcome != "integrity_fail" or src in self.blacklist:
            return False
        self.counts[src] = self.counts.get(src, 0) + 1
        if self.counts[src] >= self.threshold:
            self.blacklist.add(src)
            return True
        return False

    def is_blacklisted(self, src) -> bool:
        return src in self.blacklist

    def on_reboot(self):
        self.counts.clear()
        if not self.persistent:
            self.blacklist.clear()


def blacklist_observe(state: BlacklistState, src, outcome: str) -> BlacklistState:
    state.observe(src, outcome)
    return state


RESPONSE_BITS = 64


def challenge_response(key: bytes, nonce: bytes, peer_address: bytes) -> bytes:
    return cbc_mac(key, nonce + peer_address, RESPONSE_BITS)


@dataclass
class ChallengeSession:
    peer: bytes
    nonce: bytes
    issued_at: float
    timeout: float = 1.0
    epoch: int = 0
    state: str = "pending"

    def expired(self, now: float) -> bool:
        return now > self.issued_at + self.timeout


class ChallengeManager:
    """Challenge bookkeeping owned by one node."""

    def __init__(self, timeout: float = 1.0, rng=None):
        self.timeout = timeout
        self.sessions: dict[bytes, ChallengeSession] = {}
        self.verified: set[bytes] = set()
        self._rng = rng

    def _nonce(self) -> bytes:
        if self._rng is None:
            return secrets.token_bytes(16)
        return bytes(self._rng.integers(0, 256, 16, dtype="uint8"))

    def pending(self, peer: bytes, now: float) -> ChallengeSession | None:
        s = self.sessions.get(peer)
        if s is not None and s.state == "pending" and not s.expired(now):
            return s
        return None

    def issue(self, peer: bytes, now: float, epoch: int = 0) -> ChallengeSession:
        if self.pending(peer, now) is not None:
            raise SessionAlreadyPending(peer.hex())
        s = ChallengeSession(peer, self._nonce(), now, self.timeout, epoch)
        self.sessions[peer] = s
        return s

    def verify(self, key: bytes, peer: bytes, response: bytes, now: float) -> str:
        s = self.sessions.get(peer)
        if s is None or s.state != "pending":
            return "failed"
        result = verify_response(key, s, response, now)
        if result == "verified":
            self.verified.add(peer)
        return result

    def expire(self, now: float) -> list[ChallengeSession]:
        out = []
        for s in self.sessions.values():
            if s.state == "pending" and s.expired(now):
                s.state = "failed"
                out.append(s)
        return out

    def reset(self):
        self.sessions.clear()
        self.verified.clear()


def issue_challenge(manager: ChallengeManager, src: bytes, now: float, epoch: int = 0) -> ChallengeSession:
    return manager.issue(src, now, epoch)


def verify_response(key: bytes, session: ChallengeSession, response: bytes, now: float) -> str:
    if session.state != "pending":
        raise ValueError("session is not pending")
    if session.expired(now):
        session.state = "failed"
        raise SessionExpired(session.peer.hex())
    good = hmac.compare_digest(bytes(response), challenge_response(key, session.nonce, session.peer))
    session.state = "verified" if good else "failed"
    return session.state


REKEY_LABEL = b"ghostsim-rekey"


def derive_next_key(old_key: bytes, epoch: int) -> bytes:
    """One link of the key chain: HMAC-SHA256(old_key, label || epoch) truncated to 16 bytes."""
    return hmac.new(old_key, REKEY_LABEL + epoch.to_bytes(4, "big"), hashlib.sha256).digest()[:16]


@dataclass
class KeyStore:
    keys: dict = field(default_factory=dict)  # peer -> 16-byte key
    epoch: int = 0


def rekey_on_reboot(keystore: KeyStore) -> KeyStore:
    epoch = keystore.epoch + 1
    return KeyStore({peer: derive_next_key(k, epoch) for peer, k in keystore.keys.items()}, epoch)
