"""What an attacker gains once the victim's battery dies and it reboots with a clean ACL:
old frames replay, and fresh frames reuse old keystream."""

from ghostsim.attacks import CapturedFrame, capture_and_replay, xor_recover
from ghostsim.countermeasures import KeyStore, rekey_on_reboot
from ghostsim.errors import IntegrityFailure, ReplayRejected
from ghostsim.frame_security import (AclEntry, Frame, MacHeader, SecuredFrame, acl_reset_on_reboot, node_address,
                                     secure_frame, unsecure_frame)

key = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")
parent, victim = node_address(2), node_address(1)
acl = {parent: AclEntry(parent, key)}

# before depletion: the parent sends, the attacker records
sent = [secure_frame(key, Frame(MacHeader(parent, victim), f"valve={v}".encode(), c), 5)
        for c, v in ((1, "open"), (2, "shut"), (3, "open"))]
for f in sent:
    unsecure_frame(key, acl[parent], f)
caps = [CapturedFrame.from_frame(f, time=float(i)) for i, f in enumerate(sent)]
print("counter before reboot:", acl[parent].highest_counter)

try:
    unsecure_frame(key, acl[parent], sent[1])
except ReplayRejected:
    print("replay before reboot: rejected")

# battery dies, node reboots, counters are gone
acl = acl_reset_on_reboot(acl)
for t, raw in capture_and_replay(caps, reboot_time=100.0):
    f = SecuredFrame.from_bytes(raw)
    print(f"t={t:.3f} replayed ctr {f.frame_counter}: accepted as {unsecure_frame(key, acl[parent], f).payload}")

# with a fresh key after reboot the same bytes fail authentication
new_key = rekey_on_reboot(KeyStore({parent: key})).keys[parent]
try:
    unsecure_frame(new_key, AclEntry(parent, new_key), sent[0])
except IntegrityFailure:
    print("after rekey: replayed frame fails its MIC")

# confidentiality-only (CTR) sender restarting at counter 1 repeats its keystream
p1, p2 = b"pin=4071;door=3", b"pin=0000;door=1"
c1 = secure_frame(key, Frame(MacHeader(victim, parent), p1, 1), 4).payload   # before depletion
c2 = secure_frame(key, Frame(MacHeader(victim, parent), p2, 1), 4).payload   # after reboot
leak = xor_recover(c1, c2)
print("\nc1 xor c2 :", leak.hex())
print("p1 xor p2 :", bytes(a ^ b for a, b in zip(p1, p2)).hex())
print("knowing p2 recovers p1:", bytes(a ^ b for a, b in zip(leak, p2)))
