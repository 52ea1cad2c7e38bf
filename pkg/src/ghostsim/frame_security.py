"""802.15.4 MAC frame security: AES-CTR, AES-CBC-MAC and AES-CCM suites.

Wire layout (all multi-byte integers most-significant byte first)::

    frame control (2) | seq (1) | dst PAN (2) | dst addr (8) | src addr (8)
    | aux security header: security control (1) | frame counter (4) | key id (n)
    | payload | MIC (0/4/8/16) | FCS (2)

The aux header is present only when the security level is nonzero.

Keystream blocks are AES(key, flags | src | counter | security control | index).
Payload blocks use indices 1, 2, ...; index 0 encrypts the MIC.  The MIC is a
CBC-MAC over ``len(a) | a`` zero padded, where ``a`` is the 13-byte nonce followed
by the plaintext payload.
"""

from __future__ import annotations

import binascii
import enum
import functools
from dataclasses import dataclass, replace

from . import _aes
from .errors import (
    BlacklistedSource,
    CounterExhausted,
    FrameFormatError,
    IntegrityFailure,
    ReplayRejected,
    UnknownSource,
    UnsupportedLevel,
)

BLOCK = 16
MAX_MPDU = 127
MAC_HEADER_LEN = 21
FCS_LEN = 2
PHY_OVERHEAD = 6  # preamble 4 + SFD 1 + PHR 1
DEFAULT_FLAGS = b"\x00\x00"
MAX_COUNTER = 0xFFFFFFFF
PAYLOAD_ORIGIN = 1


class SecurityLevel(enum.IntEnum):
    NONE = 0
    MIC_32 = 1
    MIC_64 = 2
    MIC_128 = 3
    ENC = 4
    ENC_MIC_32 = 5
    ENC_MIC_64 = 6
    ENC_MIC_128 = 7

    @property
    def mic_len(self) -> int:
        return (0, 4, 8, 16)[self & 3]

    @property
    def encrypts(self) -> bool:
        return bool(self & 4)

    @property
    def authenticates(self) -> bool:
        return bool(self & 3)

    @property
    def suite(self) -> str:
        """One of ``none``, ``cbc-mac``, ``ctr``, ``ccm``."""
        return ("none", "cbc-mac", "ctr", "ccm")[(self.encrypts << 1) | self.authenticates]

    @property
    def label(self) -> str:
        if self == 0:
            return "None"
        if self == 4:
            return "AES-CTR"
        name = "AES-CCM" if self.encrypts else "AES-CBC-MAC"
        return f"{name}-{self.mic_len * 8}"


def as_level(level) -> SecurityLevel:
    try:
        return SecurityLevel(int(level))
    except ValueError:
        raise UnsupportedLevel(f"security level must be 0-7, got {level!r}") from None


# -- AES primitive -----------------------------------------------------------


@functools.lru_cache(maxsize=1024)
def _schedule(key: bytes):
    return _aes.expand_key(key)


class Aes128:
    """Keyed AES-128 forward cipher that counts block invocations."""

    __slots__ = ("key", "_rk", "calls")

    def __init__(self, key: bytes):
        self.key = bytes(key)
        self._rk = _schedule(self.key)
        self.calls = 0

    def encrypt(self, block: bytes) -> bytes:
        self.calls += 1
        return _aes.encrypt_block(self._rk, block)


def _cipher(key) -> Aes128:
    return key if isinstance(key, Aes128) else Aes128(key)


def aes_encrypt_block(key: bytes, block: bytes) -> bytes:
    """AES-128 forward cipher of one 16-byte block."""
    if len(key) != 16:
        raise ValueError("key must be 16 bytes")
    return _aes.encrypt_block(_schedule(bytes(key)), bytes(block))


def _xor(a: bytes, b: bytes) -> bytes:
    n = len(a)
    return (int.from_bytes(a, "big") ^ int.from_bytes(b[:n], "big")).to_bytes(n, "big")


# -- headers, nonce, counter block -------------------------------------------


@dataclass(frozen=True)
class AuxSecurityHeader:
    security_control: int
    frame_counter: int
    key_id: bytes = b""

    def __post_init__(self):
        if not 0 <= self.security_control <= 0xFF:
            raise ValueError("security_control must fit in one byte")
        if not 0 <= self.frame_counter <= MAX_COUNTER:
            raise ValueError("frame_counter must be a 32-bit unsigned integer")

    @property
    def level(self) -> SecurityLevel:
        return SecurityLevel(self.security_control & 7)

    def __len__(self):
        return 5 + len(self.key_id)

    def to_bytes(self) -> bytes:
        return bytes([self.security_control]) + self.frame_counter.to_bytes(4, "big") + bytes(self.key_id)

    @classmethod
    def from_bytes(cls, data: bytes, key_id_len: int = 0) -> "AuxSecurityHeader":
        if len(data) < 5 + key_id_len:
            raise FrameFormatError("truncated auxiliary security header")
        return cls(data[0], int.from_bytes(data[1:5], "big"), bytes(data[5:5 + key_id_len]))


@dataclass(frozen=True)
class Nonce:
    source_address: bytes
    frame_counter: int
    security_control: int

    def to_bytes(self) -> bytes:
        if len(self.source_address) != 8:
            raise ValueError("source address must be 8 bytes")
        return bytes(self.source_address) + self.frame_counter.to_bytes(4, "big") + bytes([self.security_control])


def build_nonce(src: bytes, ctr: int, security_control: int) -> bytes:
    return Nonce(src, ctr, security_control).to_bytes()


def build_counter_block(flags: bytes, src: bytes, ctr: int, level, index: int) -> bytes:
    """16-byte keystream input: flags | src | ctr | security control | index."""
    if len(flags) != 2:
        raise ValueError("flags field must be 2 bytes")
    if not 0 <= index <= 0xFF:
        raise ValueError("block index must fit in one byte")
    return bytes(flags) + build_nonce(src, ctr, int(level)) + bytes([index])


def keystream(key, src, ctr, level, nblocks, *, flags=DEFAULT_FLAGS, origin=PAYLOAD_ORIGIN) -> bytes:
    aes = _cipher(key)
    return b"".join(aes.encrypt(build_counter_block(flags, src, ctr, level, origin + i)) for i in range(nblocks))


def ctr_transform(key, src: bytes, ctr: int, level, data: bytes, *, flags=DEFAULT_FLAGS,
                  origin=PAYLOAD_ORIGIN) -> bytes:
    """XOR ``data`` with the CTR keystream (encryption and decryption alike)."""
    if not data:
        return b""
    nblocks = -(-len(data) // BLOCK)
    return _xor(bytes(data), keystream(key, src, ctr, level, nblocks, flags=flags, origin=origin))


def _pad(data: bytes) -> bytes:
    return data + bytes(-len(data) % BLOCK)


def cbc_mac(key, auth_input: bytes, mic_bits: int) -> bytes:
    """CBC-MAC over the 2-byte-length-prefixed, zero-padded input, truncated."""
    if mic_bits not in (32, 64, 128):
        raise ValueError("mic_bits must be 32, 64 or 128")
    if len(auth_input) > 0xFFFF:
        raise ValueError("auth input too long for a 2-byte length indicator")
    aes = _cipher(key)
    data = _pad(len(auth_input).to_bytes(2, "big") + bytes(auth_input))
    out = bytes(BLOCK)
    for i in range(0, len(data), BLOCK):
        out = aes.encrypt(_xor(data[i:i + BLOCK], out))
    return out[:mic_bits // 8]


# -- frames ------------------------------------------------------------------


FRAME_TYPE_DATA = 1
FRAME_TYPE_CMD = 3


@dataclass(frozen=True)
class MacHeader:
    src: bytes
    dst: bytes
    seq: int = 0
    dst_pan: int = 0x1A2B
    frame_type: int = FRAME_TYPE_DATA
    ack_request: bool = False

    def control(self, secured: bool) -> int:
        # bits: 0-2 type, 3 security enabled, 5 ack request, 6 PAN compression, 10-11/14-15 extended addressing
        return (self.frame_type & 7) | (secured << 3) | (self.ack_request << 5) | (1 << 6) | (3 << 10) | (3 << 14)

    def to_bytes(self, secured: bool) -> bytes:
        return (self.control(secured).to_bytes(2, "big") + bytes([self.seq & 0xFF])
                + self.dst_pan.to_bytes(2, "big") + bytes(self.dst) + bytes(self.src))

    @classmethod
    def from_bytes(cls, data: bytes):
        if len(data) < MAC_HEADER_LEN:
            raise FrameFormatError("truncated MAC header")
        fcf = int.from_bytes(data[0:2], "big")
        hdr = cls(src=bytes(data[13:21]), dst=bytes(data[5:13]), seq=data[2],
                  dst_pan=int.from_bytes(data[3:5], "big"), frame_type=fcf & 7,
                  ack_request=bool(fcf & (1 << 5)))
        return hdr, bool(fcf & (1 << 3))


@dataclass(frozen=True)
class Frame:
    """Plaintext frame as handed to the security layer."""
    header: MacHeader
    payload: bytes
    frame_counter: int = 0


@dataclass(frozen=True)
class SecuredFrame:
    mac_header: MacHeader
    aux_header: AuxSecurityHeader | None
    payload: bytes
    mic: bytes = b""

    def __post_init__(self):
        level = self.level
        if len(self.mic) != level.mic_len:
            raise FrameFormatError(f"MIC length {len(self.mic)} does not match level {int(level)}")

    @property
    def level(self) -> SecurityLevel:
        return self.aux_header.level if self.aux_header is not None else SecurityLevel.NONE

    @property
    def frame_counter(self) -> int:
        return self.aux_header.frame_counter if self.aux_header is not None else 0

    @property
    def src(self) -> bytes:
        return self.mac_header.src

    @property
    def dst(self) -> bytes:
        return self.mac_header.dst

    def __len__(self):
        """MPDU length in bytes (MAC header through FCS)."""
        aux = len(self.aux_header) if self.aux_header is not None else 0
        return MAC_HEADER_LEN + aux + len(self.payload) + len(self.mic) + FCS_LEN

    def to_bytes(self) -> bytes:
        body = self.mac_header.to_bytes(self.aux_header is not None)
        if self.aux_header is not None:
            body += self.aux_header.to_bytes()
        body += self.payload + self.mic
        return body + binascii.crc_hqx(body, 0).to_bytes(2, "big")

    @classmethod
    def from_bytes(cls, data: bytes, key_id_len: int = 0) -> "SecuredFrame":
        data = bytes(data)
        if len(data) > MAX_MPDU:
            raise FrameFormatError(f"frame of {len(data)} bytes exceeds {MAX_MPDU}")
        if len(data) < MAC_HEADER_LEN + FCS_LEN:
            raise FrameFormatError("frame too short")
        body, fcs = data[:-2], data[-2:]
        if binascii.crc_hqx(body, 0).to_bytes(2, "big") != fcs:
            raise FrameFormatError("FCS mismatch")
        header, secured = MacHeader.from_bytes(body)
        rest = body[MAC_HEADER_LEN:]
        if not secured:
            return cls(header, None, rest, b"")
        aux = AuxSecurityHeader.from_bytes(rest, key_id_len)
        rest = rest[len(aux):]
        mic_len = aux.level.mic_len
        if len(rest) < mic_len:
            raise FrameFormatError("frame shorter than its MIC")
        return cls(header, aux, rest[:len(rest) - mic_len], rest[len(rest) - mic_len:])


def mpdu_length(payload_len: int, level, key_id_len: int = 0) -> int:
    level = as_level(level)
    aux = 5 + key_id_len if level else 0
    return MAC_HEADER_LEN + aux + payload_len + level.mic_len + FCS_LEN


def airtime(mpdu_len: int, data_rate: float = 250_000.0) -> float:
    """Seconds on air for an MPDU including the PHY synchronization header."""
    return (mpdu_len + PHY_OVERHEAD) * 8 / data_rate


# -- secure / unsecure -------------------------------------------------------


def _mic_input(src, ctr, sc, payload):
    return build_nonce(src, ctr, sc) + payload


def secure_frame(key, frame: Frame, level, *, flags=DEFAULT_FLAGS, key_id=b"") -> SecuredFrame:
    """Apply the security suite for ``level`` to a plaintext frame."""
    level = as_level(level)
    if level == SecurityLevel.NONE:
        out = SecuredFrame(frame.header, None, bytes(frame.payload), b"")
    else:
        ctr = frame.frame_counter
        if not 0 <= ctr < MAX_COUNTER:
            raise CounterExhausted(f"frame counter {ctr} would wrap")
        aes = _cipher(key)
        aux = AuxSecurityHeader(int(level), ctr, bytes(key_id))
        src, sc, payload = frame.header.src, aux.security_control, bytes(frame.payload)
        mic = b""
        if level.authenticates:
            mic = cbc_mac(aes, _mic_input(src, ctr, sc, payload), level.mic_len * 8)
        if level.encrypts:
            payload = ctr_transform(aes, src, ctr, sc, payload, flags=flags)
            if mic:
                mic = ctr_transform(aes, src, ctr, sc, mic, flags=flags, origin=0)
        out = SecuredFrame(frame.header, aux, payload, mic)
    if len(out) > MAX_MPDU:
        raise FrameFormatError(f"secured frame of {len(out)} bytes exceeds {MAX_MPDU}")
    return out


@dataclass
class AclEntry:
    source_address: bytes
    key: bytes
    highest_counter: int = 0
    blacklisted: bool = False

    def __post_init__(self):
        if len(self.source_address) != 8 or len(self.key) != 16:
            raise ValueError("ACL entry needs an 8-byte address and a 16-byte key")


AclTable = dict  # source address -> AclEntry


def check_replay(acl: AclEntry | None, secured: SecuredFrame) -> AclEntry:
    """Access-control and freshness checks done before any cryptography."""
    if acl is None or acl.source_address != secured.src:
        raise UnknownSource(secured.src.hex())
    if acl.blacklisted:
        raise BlacklistedSource(secured.src.hex())
    if secured.level and secured.frame_counter <= acl.highest_counter:
        raise ReplayRejected(f"counter {secured.frame_counter} <= stored {acl.highest_counter}")
    return acl


def unsecure_frame(key, acl: AclEntry | None, secured: SecuredFrame, *, flags=DEFAULT_FLAGS) -> Frame:
    """Verify and decrypt; on success advance the ACL counter.

    The replay check runs before decryption, the MIC check only after the full
    decryption and MIC computation, so a rejected bogus frame still costs a
    complete pass of the suite.
    """
    acl = check_replay(acl, secured)
    level = secured.level
    if level == SecurityLevel.NONE:
        return Frame(secured.mac_header, secured.payload, 0)
    aes = _cipher(key if key is not None else acl.key)
    ctr, src, sc = secured.frame_counter, secured.src, secured.aux_header.security_control
    payload = secured.payload
    if level.encrypts:
        payload = ctr_transform(aes, src, ctr, sc, payload, flags=flags)
    if level.authenticates:
        mic = secured.mic
        if level.encrypts:
            mic = ctr_transform(aes, src, ctr, sc, mic, flags=flags, origin=0)
        expected = cbc_mac(aes, _mic_input(src, ctr, sc, payload), level.mic_len * 8)
        if expected != mic:
            raise IntegrityFailure(f"MIC mismatch from {src.hex()} counter {ctr}")
    acl.highest_counter = ctr
    return Frame(secured.mac_header, payload, ctr)


def aes_blocks(level, payload_len: int) -> int:
    """AES invocations needed to unsecure (or secure) a frame."""
    level = as_level(level)
    n = 0
    if level.authenticates:
        n += -(-(2 + 13 + payload_len) // BLOCK)
    if level.encrypts:
        n += -(-payload_len // BLOCK) + (1 if level.authenticates else 0)
    return n


def acl_reset_on_reboot(acl_table: dict, *, keep_counters=False, keep_blacklist=False) -> dict:
    """Fresh ACL table as a rebooted device sees it."""
    return {
        addr: replace(e, highest_counter=e.highest_counter if keep_counters else 0,
                      blacklisted=e.blacklisted and keep_blacklist)
        for addr, e in acl_table.items()
    }


def node_address(node_id: int) -> bytes:
    """Deterministic extended address for a simulated node."""
    return (0x00124B0000000000 + node_id).to_bytes(8, "big")


def address_node(addr: bytes) -> int:
    return int.from_bytes(addr, "big") - 0x00124B0000000000


def dump_frame(frame) -> str:
    """One-line debug view of a frame, fields separated by ``|``.

    Accepts a :class:`SecuredFrame` or its wire bytes. Bytes that do not parse
    come back as ``malformed|<reason>|<hex>``.
    """
    if isinstance(frame, (bytes, bytearray)):
        raw = bytes(frame)
        try:
            frame = SecuredFrame.from_bytes(raw)
        except FrameFormatError as exc:
            return f"malformed|{exc}|{raw.hex()}"
    h = frame.mac_header
    wire = frame.to_bytes()
    fields = [
        f"fcf={h.control(frame.aux_header is not None):04x}",
        f"seq={h.seq}",
        f"pan={h.dst_pan:04x}",
        f"dst={h.dst.hex()}",
        f"src={h.src.hex()}",
    ]
    if frame.aux_header is not None:
        fields += [f"level={int(frame.level)}:{frame.level.label}", f"ctr={frame.frame_counter}"]
        if frame.aux_header.key_id:
            fields.append(f"key_id={frame.aux_header.key_id.hex()}")
    else:
        fields.append("level=0:none")
    fields += [f"payload={frame.payload.hex()}", f"mic={frame.mic.hex()}", f"fcs={wire[-2:].hex()}",
               f"len={len(wire)}"]
    return "|".join(fields)
