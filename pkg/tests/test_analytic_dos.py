"""Chain throughput model: an independent scalar oracle, golden values and sweep shape."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ghostsim.analytic_dos import (ChainSpec, chain_from_geometry, fig1_chain, model_residual, solve_fixed_point,
                                   sweep_attack_rate)
from ghostsim.errors import NoConvergence, ValidationError
from ghostsim.scenario import parse_scenario

GRID = [round(0.02 * k, 2) for k in range(11)]

# Recorded from the vectorised solver after it matched fig1_oracle to 5e-11 on the whole grid.
GOLDEN = {
    (1, 0.0): {1: 3.974877367775e-03, 2: 6.215517769212e-03, 3: 1.098809318117e-02, 4: 1.884445786959e-02, 5: 1.915045692945e-02},
    (1, 0.1): {1: 2.152899637032e-03, 2: 5.006242589013e-03, 3: 1.053844967843e-02, 4: 1.894170049515e-02, 5: 1.922627238586e-02},
    (1, 0.2): {1: 6.328568090763e-04, 2: 3.128386562018e-03, 3: 1.001808445782e-02, 4: 1.906082540938e-02, 5: 1.931083461088e-02},
    (2, 0.2): {1: 1.081988276563e-03, 2: 1.612963834989e-03, 3: 1.008516961121e-02, 4: 1.910325003789e-02, 5: 1.933239900949e-02},
}


# Chain 1-2-3-4-gw plus 5-gw; N(1)={2} N(2)={1,3} N(3)={2,4} N(4)={3,5,gw} N(5)={4,gw}.
# Written out node by node and swept Gauss-Seidel style, sharing nothing with the solver.
def fig1_oracle(p_att, case, lam=0.02, L=3, mac_be=3, sweeps=200000, tol=1e-13):
    att = {2, 3} if case == 1 else {3}
    b = (2 ** mac_be - 1) / 2
    a = {i: 1.0 for i in range(1, 6)}
    r = {i: 0.0 for i in range(1, 6)}
    s = {i: 1.0 for i in range(1, 6)}
    A = lambda i: (1 - p_att) if i in att else 1.0
    def tau(i): return 1 / (b + 1 + L * a[i])
    def p(i): return tau(i) * a[i]
    def q(i): return 1 - r[i] * p(i)
    clamp = lambda x: min(max(x, 0.0), 1.0)
    for _ in range(sweeps):
        old = (dict(a), dict(r), dict(s))
        a[1] = clamp(1 - L * (1 - A(1) * q(2)))
        a[2] = clamp(1 - L * (1 - A(2) * q(1) * q(3)))
        a[3] = clamp(1 - L * (1 - A(3) * q(2) * q(4)))
        a[4] = clamp(1 - L * (1 - A(4) * q(3) * q(5)))
        a[5] = clamp(1 - L * (1 - A(5) * q(4)))
        r[1] = min(lam / p(1), 1)
        r[2] = min((lam + r[1] * p(1) * s[1]) / p(2), 1)
        r[3] = min((lam + r[2] * p(2) * s[2]) / p(3), 1)
        r[4] = min((lam + r[3] * p(3) * s[3]) / p(4), 1)
        r[5] = min(lam / p(5), 1)
        hid = lambda k: clamp(1 - L * r[k] * p(k))
        hatt = lambda i, j: max(1 - L * p_att, 0) if (j in att and i not in att) else 1.0
        s[1] = A(1) * hid(3) * hatt(1, 2) * (1 - r[2])
        s[2] = q(1) * A(2) * hid(4) * hatt(2, 3) * (1 - r[3])
        s[3] = q(2) * A(3) * hid(5) * hatt(3, 4) * (1 - r[4])
        s[4] = q(3) * q(5) * A(4)
        s[5] = q(4) * A(5)
        d = max(abs(x[i] - y[i]) for x, y in zip((a, r, s), old) for i in range(1, 6))
        if d < tol:
            break
    S = {
        1: r[1] * p(1) * s[1] * s[2] * s[3] * s[4],
        2: lam / (lam + r[1] * p(1) * s[1]) * r[2] * p(2) * s[2] * s[3] * s[4],
        3: lam / (lam + r[2] * p(2) * s[2]) * r[3] * p(3) * s[3] * s[4],
        4: lam / (lam + r[3] * p(3) * s[3]) * r[4] * p(4) * s[4],
        5: r[5] * p(5) * s[5],
    }
    return S


@pytest.mark.parametrize("case", [1, 2])
def test_solver_matches_scalar_oracle(case):
    for pa in GRID:
        want = fig1_oracle(pa, case)
        got = solve_fixed_point(fig1_chain(case).with_attack_rate(pa)).throughput()
        for n in want:
            assert got[n] == pytest.approx(want[n], abs=1e-9), (case, pa, n)


@pytest.mark.parametrize("key", sorted(GOLDEN))
def test_golden_values(key):
    case, pa = key
    got = solve_fixed_point(fig1_chain(case).with_attack_rate(pa)).throughput()
    for n, s in GOLDEN[key].items():
        assert got[n] == pytest.approx(s, rel=1e-8)


def test_geometry_of_fig1():
    spec = fig1_chain(1)
    assert spec.interfered == {2, 3}
    assert fig1_chain(2).interfered == {3}
    assert spec.next_hop == {1: 2, 2: 3, 3: 4, 4: 0, 5: 0}
    assert spec.path(1) == [1, 2, 3, 4]


def test_shipped_scenario_builds_same_chain():
    sc = parse_scenario("fig1_chain")
    sec = sc.section("analytic")
    spec = chain_from_geometry(sc.topology.positions, sec["radius"], tuple(sec["attacker_case1"]))
    assert spec.neighbors == fig1_chain(1).neighbors and spec.interfered == {2, 3}


@pytest.mark.parametrize("case", [1, 2])
def test_residual_below_tolerance(case):
    for pa in GRID:
        spec = fig1_chain(case).with_attack_rate(pa)
        assert model_residual(spec, solve_fixed_point(spec)) < 1e-9


def test_saturating_attacker_silences_interfered_nodes():
    fp = solve_fixed_point(fig1_chain(1).with_attack_rate(1.0))
    assert fp[2].alpha == 0.0 and fp[3].alpha == 0.0
    assert fp[2].S == 0.0 and fp[3].S == 0.0
    assert 2 in fp.clamped and 3 in fp.clamped


def test_no_load_no_throughput():
    fp = solve_fixed_point(fig1_chain(1, gen_rate=0.0).with_attack_rate(0.1))
    assert all(s == 0.0 for s in fp.throughput().values())


def test_case1_shape():
    sweep = sweep_attack_rate(fig1_chain(1), GRID)
    S = {n: [sweep.throughput[pa][n] for pa in GRID] for n in range(1, 6)}
    for n in (2, 3):
        assert all(b < a for a, b in zip(S[n], S[n][1:]))
    d1 = [sweep.variation[pa][1] for pa in GRID]
    d2 = [sweep.variation[pa][2] for pa in GRID]
    assert all(x < y for x, y in zip(d1[1:], d2[1:]))
    assert S[1][0] - S[1][-1] > S[2][0] - S[2][-1]


def test_case2_far_nodes_gain():
    sweep = sweep_attack_rate(fig1_chain(2), GRID)
    for n in (4, 5):
        s = [sweep.throughput[pa][n] for pa in GRID]
        assert all(b >= a for a, b in zip(s, s[1:]))


@given(st.floats(0, 1), st.floats(0, 0.05), st.sampled_from([1, 2]))
def test_any_solution_is_a_valid_fixed_point(pa, lam, case):
    spec = fig1_chain(case, gen_rate=lam).with_attack_rate(pa)
    fp = solve_fixed_point(spec)
    assert model_residual(spec, fp) < 1e-8
    for s in fp.nodes.values():
        for v in (s.tau, s.alpha, s.rho, s.p, s.p_s):
            assert 0.0 <= v <= 1.0
        assert s.S >= 0.0


def test_random_restart_agrees():
    fp = solve_fixed_point(fig1_chain(1).with_attack_rate(0.1), restart_seed=4)
    assert not fp.alternative


def test_iteration_cap_raises():
    with pytest.raises(NoConvergence):
        solve_fixed_point(fig1_chain(1).with_attack_rate(0.1), max_iter=3)


def test_bad_specs_rejected():
    with pytest.raises(ValidationError):
        ChainSpec({1: {2}, 2: set()}, {1: 2, 2: 0})  # asymmetric
    with pytest.raises(ValidationError):
        fig1_chain(1, gen_rate=1.5)
