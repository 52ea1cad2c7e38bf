"""Blacklisting, challenge-response and reboot rekeying."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ghostsim.countermeasures import (BlacklistState, ChallengeManager, KeyStore, challenge_response,
                                      derive_next_key, rekey_on_reboot, verify_response)
from ghostsim.errors import IntegrityFailure, SessionAlreadyPending, SessionExpired
from ghostsim.frame_security import (AclEntry, Frame, MacHeader, keystream, node_address, secure_frame,
                                     unsecure_frame)

KEY = bytes(range(16))
PEER, ME = node_address(7), node_address(1)


def test_five_failures_blacklist():
    bl = BlacklistState(threshold=5)
    hits = [bl.observe("ghost", "integrity_fail") for _ in range(5)]
    assert hits == [False] * 4 + [True]
    assert bl.is_blacklisted("ghost") and not bl.is_blacklisted("friend")


def test_success_resets_count():
    bl = BlacklistState(threshold=5)
    for _ in range(4):
        bl.observe("a", "integrity_fail")
    bl.observe("a", "ok")
    for _ in range(4):
        bl.observe("a", "integrity_fail")
    assert not bl.is_blacklisted("a")


def test_replay_rejects_do_not_count():
    bl = BlacklistState(threshold=1)
    bl.observe("a", "replay_reject")
    assert not bl.is_blacklisted("a")
    with pytest.raises(ValueError):
        bl.observe("a", "weird")


@pytest.mark.parametrize("persistent,kept", [(False, False), (True, True)])
def test_reboot_and_persistence(persistent, kept):
    bl = BlacklistState(threshold=1, persistent=persistent)
    bl.observe("a", "integrity_fail")
    bl.on_reboot()
    assert bl.is_blacklisted("a") is kept and bl.counts == {}


@given(st.lists(st.sampled_from(["integrity_fail", "replay_reject", "ok"]), max_size=40))
def test_blacklist_matches_run_length_rule(outcomes):
    bl = BlacklistState(threshold=3)
    run = 0
    want = False
    for o in outcomes:
        bl.observe("s", o)
        if not want:
            run = 0 if o == "ok" else run + (o == "integrity_fail")
            want = run >= 3
    assert bl.is_blacklisted("s") == want


def mgr():
    return ChallengeManager(timeout=1.0, rng=np.random.default_rng(4))


def test_honest_peer_verifies():
    m = mgr()
    s = m.issue(PEER, now=0.0)
    assert m.verify(KEY, PEER, challenge_response(KEY, s.nonce, PEER), now=0.5) == "verified"
    assert PEER in m.verified


def test_wrong_key_fails():
    m = mgr()
    s = m.issue(PEER, now=0.0)
    assert m.verify(KEY, PEER, challenge_response(bytes(16), s.nonce, PEER), now=0.1) == "failed"


def test_old_response_does_not_answer_new_nonce():
    m = mgr()
    old = m.issue(PEER, now=0.0)
    stale = challenge_response(KEY, old.nonce, PEER)
    m.verify(KEY, PEER, stale, now=0.1)
    fresh = m.issue(PEER, now=2.0)
    assert fresh.nonce != old.nonce
    assert m.verify(KEY, PEER, stale, now=2.1) == "failed"


def test_response_bound_to_peer_address():
    nonce = bytes(16)
    assert challenge_response(KEY, nonce, PEER) != challenge_response(KEY, nonce, node_address(8))


def test_random_guesses_never_match():
    target = np.frombuffer(challenge_response(KEY, bytes(range(16)), PEER), np.uint8)
    guesses = np.random.default_rng(9).integers(0, 256, (100_000, 8), dtype=np.uint8)
    assert not (guesses == target).all(axis=1).any()


def test_expiry():
    m = mgr()
    s = m.issue(PEER, now=0.0)
    with pytest.raises(SessionAlreadyPending):
        m.issue(PEER, now=0.5)
    assert m.expire(now=0.9) == []
    assert m.expire(now=1.5) == [s] and s.state == "failed"
    s2 = m.issue(PEER, now=2.0)
    with pytest.raises(SessionExpired):
        verify_response(KEY, s2, challenge_response(KEY, s2.nonce, PEER), now=3.5)


def test_reset_forgets_sessions():
    m = mgr()
    s = m.issue(PEER, now=0.0)
    m.verify(KEY, PEER, challenge_response(KEY, s.nonce, PEER), now=0.1)
    m.reset()
    assert not m.verified and not m.sessions


def test_rekey_chain():
    ks = KeyStore({PEER: KEY})
    k1 = rekey_on_reboot(ks)
    k2 = rekey_on_reboot(k1)
    assert k1.epoch == 1 and k2.epoch == 2
    assert k1.keys[PEER] == derive_next_key(KEY, 1) != KEY
    assert len({KEY, k1.keys[PEER], k2.keys[PEER]}) == 3
    assert ks.keys[PEER] == KEY  # input untouched


def test_rekey_gives_independent_keystream():
    new = derive_next_key(KEY, 1)
    a = keystream(KEY, PEER, 1, 4, 1)
    b = keystream(new, PEER, 1, 4, 1)
    assert a != b


def test_pre_reboot_frame_fails_under_new_key():
    old = secure_frame(KEY, Frame(MacHeader(PEER, ME), b"captured", 12), 5)
    new_key = rekey_on_reboot(KeyStore({PEER: KEY})).keys[PEER]
    entry = AclEntry(PEER, new_key, 0)
    with pytest.raises(IntegrityFailure):
        unsecure_frame(new_key, entry, old)
    assert entry.highest_counter == 0
