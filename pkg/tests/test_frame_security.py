"""Frame security suites against an independent AES (``cryptography``) and hand-built chains."""

import os

import pytest
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from hypothesis import given
from hypothesis import strategies as st

from ghostsim.errors import FrameFormatError, IntegrityFailure, ReplayRejected, UnknownSource
from ghostsim.frame_security import (AclEntry, AuxSecurityHeader, Frame, MacHeader, SecuredFrame, SecurityLevel,
                                     acl_reset_on_reboot, aes_blocks, aes_encrypt_block, build_counter_block,
                                     build_nonce, cbc_mac, ctr_transform, dump_frame, keystream, mpdu_length,
                                     node_address, secure_frame, unsecure_frame)

SRC = bytes.fromhex("1122334455667788")
DST = bytes.fromhex("00124b0000000001")
KEY = bytes.fromhex("c0c1c2c3c4c5c6c7c8c9cacbcccdcecf")

keys = st.binary(min_size=16, max_size=16)
payloads = st.binary(min_size=0, max_size=100)
levels = st.sampled_from(list(SecurityLevel))
auth_levels = st.sampled_from([1, 2, 3, 5, 6, 7])


def ref_aes(key, block):
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def ref_keystream(key, src, ctr, sc, nbytes, first_index=1):
    out = b""
    i = first_index
    while len(out) < nbytes:
        out += ref_aes(key, b"\x00\x00" + src + ctr.to_bytes(4, "big") + bytes([sc, i]))
        i += 1
    return out[:nbytes]


def ref_cbc_mac(key, data, mic_len):
    msg = len(data).to_bytes(2, "big") + data
    msg += bytes(-len(msg) % 16)
    x = bytes(16)
    for i in range(0, len(msg), 16):
        x = ref_aes(key, bytes(a ^ b for a, b in zip(x, msg[i:i + 16])))
    return x[:mic_len]


def make_frame(payload=b"hello ghost", ctr=6, src=SRC):
    return Frame(MacHeader(src=src, dst=DST, seq=3), payload, ctr)


def acl(counter=5, src=SRC, key=KEY):
    return AclEntry(src, key, counter)


# -- AES ------------------------------------------------------------------------

def test_aes_known_answer():
    assert aes_encrypt_block(bytes(range(16)), bytes.fromhex("00112233445566778899aabbccddeeff")).hex() \
        == "69c4e0d86a7b0430d8cdb78070b4c55a"


@given(keys, st.binary(min_size=16, max_size=16))
def test_aes_matches_reference_cipher(key, block):
    assert aes_encrypt_block(key, block) == ref_aes(key, block)


def test_aes_is_deterministic_and_injective():
    blocks = [os.urandom(16) for _ in range(64)]
    outs = [aes_encrypt_block(KEY, b) for b in blocks]
    assert outs == [aes_encrypt_block(KEY, b) for b in blocks]
    assert len(set(outs)) == len(set(blocks))


def test_aes_rejects_short_key():
    with pytest.raises(ValueError):
        aes_encrypt_block(b"short", bytes(16))


# -- counter blocks and CTR -------------------------------------------------------

def test_counter_block_layout():
    blk = build_counter_block(b"\x00\x00", SRC, 0, 5, 0)
    assert blk.hex(" ") == "00 00 11 22 33 44 55 66 77 88 00 00 00 00 05 00"
    assert build_counter_block(b"\x00\x00", SRC, 0, 5, 1) == blk[:-1] + b"\x01"


def test_counter_change_touches_only_counter_field():
    a = build_counter_block(b"\x00\x00", SRC, 0, 5, 0)
    b = build_counter_block(b"\x00\x00", SRC, 1, 5, 0)
    diff = [i for i in range(16) if a[i] != b[i]]
    assert diff and all(10 <= i < 14 for i in diff)


@given(st.integers(0, 2**32 - 1), st.integers(0, 255), st.integers(0, 2**32 - 1), st.integers(0, 255))
def test_counter_blocks_unique(c1, i1, c2, i2):
    b1 = build_counter_block(b"\x00\x00", SRC, c1, 4, i1)
    b2 = build_counter_block(b"\x00\x00", SRC, c2, 4, i2)
    assert (b1 == b2) == ((c1, i1) == (c2, i2))


@given(keys, payloads, st.integers(0, 2**32 - 2), levels)
def test_ctr_involution(key, data, ctr, level):
    assert ctr_transform(key, SRC, ctr, level, ctr_transform(key, SRC, ctr, level, data)) == data


def test_ctr_of_zero_block_is_keystream():
    assert ctr_transform(KEY, SRC, 9, 4, bytes(16)) == keystream(KEY, SRC, 9, 4, 1)


def test_ctr_twenty_bytes_against_scalar_keystream():
    data = bytes(range(20))
    ks = ref_keystream(KEY, SRC, 1, 4, 20)
    assert ctr_transform(KEY, SRC, 1, 4, data) == bytes(a ^ b for a, b in zip(data, ks))


# -- CBC-MAC --------------------------------------------------------------------

def test_cbc_mac_single_block_is_one_aes_call():
    data = bytes(range(14))  # 2-byte length + 14 = exactly one block
    block = len(data).to_bytes(2, "big") + data
    assert cbc_mac(KEY, data, 128) == aes_encrypt_block(KEY, block)


def test_cbc_mac_two_blocks_hand_chained():
    data = bytes(range(30))
    msg = (30).to_bytes(2, "big") + data
    i1, i2 = msg[:16], msg[16:]
    o1 = ref_aes(KEY, i1)
    o2 = ref_aes(KEY, bytes(a ^ b for a, b in zip(i2, o1)))
    assert cbc_mac(KEY, data, 128) == o2


@given(keys, st.binary(max_size=120), st.sampled_from([32, 64, 128]))
def test_cbc_mac_matches_reference(key, data, bits):
    assert cbc_mac(key, data, bits) == ref_cbc_mac(key, data, bits // 8)


@given(st.binary(min_size=1, max_size=60), st.data())
def test_cbc_mac_bit_flip_changes_mic(data, draw):
    pos = draw.draw(st.integers(0, len(data) * 8 - 1))
    flipped = bytearray(data)
    flipped[pos // 8] ^= 1 << (pos % 8)
    assert cbc_mac(KEY, bytes(flipped), 64) != cbc_mac(KEY, data, 64)


def test_cbc_mac_rejects_bad_length():
    with pytest.raises(ValueError):
        cbc_mac(KEY, b"x", 48)


# -- secure / unsecure ----------------------------------------------------------

def test_level_zero_leaves_payload_alone():
    f = make_frame(b"plain")
    s = secure_frame(KEY, f, 0)
    assert s.payload == b"plain" and s.aux_header is None and s.mic == b""


@given(keys, payloads, levels, st.integers(1, 2**32 - 2))
def test_roundtrip_all_levels(key, payload, level, ctr):
    s = secure_frame(key, make_frame(payload, ctr), level)
    entry = AclEntry(SRC, key, 0)
    out = unsecure_frame(key, entry, s)
    assert out.payload == payload
    if level:
        assert entry.highest_counter == ctr


def test_ccm_frame_matches_independent_construction():
    payload = b"sixty bytes of sensor data go here, padded out to sixty....."
    s = secure_frame(KEY, make_frame(payload, 6), 6)
    sc = 6
    nonce = SRC + (6).to_bytes(4, "big") + bytes([sc])
    mic = ref_cbc_mac(KEY, nonce + payload, 8)
    assert s.payload == bytes(a ^ b for a, b in zip(payload, ref_keystream(KEY, SRC, 6, sc, len(payload))))
    assert s.mic == bytes(a ^ b for a, b in zip(mic, ref_keystream(KEY, SRC, 6, sc, 8, first_index=0)))


@given(auth_levels, st.binary(min_size=1, max_size=80), st.data())
def test_any_bit_flip_fails_integrity(level, payload, data):
    s = secure_frame(KEY, make_frame(payload, 6), level)
    body = bytearray(s.payload + s.mic)
    pos = data.draw(st.integers(0, len(body) * 8 - 1))
    body[pos // 8] ^= 1 << (pos % 8)
    bad = SecuredFrame(s.mac_header, s.aux_header, bytes(body[:len(s.payload)]), bytes(body[len(s.payload):]))
    entry = acl(5)
    with pytest.raises(IntegrityFailure):
        unsecure_frame(KEY, entry, bad)
    assert entry.highest_counter == 5


def test_equal_counter_is_replay():
    s = secure_frame(KEY, make_frame(ctr=5), 5)
    with pytest.raises(ReplayRejected):
        unsecure_frame(KEY, acl(5), s)


def test_garbage_mic_costs_full_decrypt_and_keeps_counter():
    from ghostsim.frame_security import Aes128
    s = secure_frame(KEY, make_frame(bytes(60), 6), 7)
    bogus = SecuredFrame(s.mac_header, s.aux_header, s.payload, bytes(16))
    entry, aes = acl(5), Aes128(KEY)
    with pytest.raises(IntegrityFailure):
        unsecure_frame(aes, entry, bogus)
    assert entry.highest_counter == 5
    assert aes.calls == aes_blocks(7, 60)


def test_valid_frame_advances_counter():
    entry = acl(5)
    out = unsecure_frame(KEY, entry, secure_frame(KEY, make_frame(b"ok", 6), 6))
    assert out.payload == b"ok" and entry.highest_counter == 6


def test_unknown_source_rejected():
    s = secure_frame(KEY, make_frame(), 5)
    with pytest.raises(UnknownSource):
        unsecure_frame(KEY, None, s)


@given(st.integers(0, 7), payloads, st.integers(1, 2**32 - 2))
def test_aux_header_and_frame_codec_roundtrip(level, payload, ctr):
    aux = AuxSecurityHeader(level, ctr)
    assert AuxSecurityHeader.from_bytes(aux.to_bytes()) == aux
    s = secure_frame(KEY, make_frame(payload, ctr), level)
    assert SecuredFrame.from_bytes(s.to_bytes()) == s
    assert len(s.to_bytes()) == len(s) == mpdu_length(len(payload), level)


def test_corrupted_wire_bytes_fail_fcs():
    raw = bytearray(secure_frame(KEY, make_frame(), 5).to_bytes())
    raw[25] ^= 0xFF
    with pytest.raises(FrameFormatError):
        SecuredFrame.from_bytes(bytes(raw))


# -- ACL reboot -------------------------------------------------------------------

def test_acl_reset_zeroes_counters():
    a, b = node_address(1), node_address(2)
    table = {a: AclEntry(a, KEY, 12), b: AclEntry(b, KEY, 7)}
    fresh = acl_reset_on_reboot(table)
    assert [e.highest_counter for e in fresh.values()] == [0, 0]
    assert acl_reset_on_reboot({}) == {}


def test_captured_frame_accepted_after_reset():
    table = {SRC: acl(0)}
    old = secure_frame(KEY, make_frame(b"old", 12), 5)
    unsecure_frame(KEY, table[SRC], old)
    with pytest.raises(ReplayRejected):
        unsecure_frame(KEY, table[SRC], old)
    table = acl_reset_on_reboot(table)
    assert unsecure_frame(KEY, table[SRC], old).payload == b"old"


# -- debug dump -------------------------------------------------------------------

def test_dump_frame_fields():
    s = secure_frame(KEY, make_frame(b"\x01\x02", 6), 5)
    line = dump_frame(s)
    assert "\n" not in line
    fields = dict(f.split("=", 1) for f in line.split("|"))
    assert fields["src"] == SRC.hex() and fields["ctr"] == "6" and fields["level"].startswith("5:")
    assert dump_frame(s.to_bytes()) == line
    assert dump_frame(b"\x00\x01").startswith("malformed|")


def test_nonce_layout():
    assert build_nonce(SRC, 0x01020304, 0x05) == SRC + bytes([1, 2, 3, 4, 5])
