import pytest
from hypothesis import HealthCheck, settings

from ghostsim.frame_security import aes_encrypt_block

# Fixed-seed property runs: same examples every time.
settings.register_profile("ghostsim", derandomize=True, max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ghostsim")

FIPS197_KEY = bytes(range(16))
FIPS197_PLAIN = bytes.fromhex("00112233445566778899aabbccddeeff")
FIPS197_CIPHER = bytes.fromhex("69c4e0d86a7b0430d8cdb78070b4c55a")


def pytest_sessionstart(session):
    # Everything below trusts the block cipher; refuse to run on a broken one.
    if aes_encrypt_block(FIPS197_KEY, FIPS197_PLAIN) != FIPS197_CIPHER:
        pytest.exit("AES-128 known-answer vector failed; cipher is broken", returncode=3)


ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the summary prints them in order."""
    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE[number] = (bool(ok), title, detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  {detail}")
