"""Suspect identification, disk grouping and centroid estimation."""

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ghostsim.analytic_dos import fig1_chain, solve_fixed_point
from ghostsim.errors import EmptyGroup
from ghostsim.localization import (centroid_weights, covering_disk_exists, estimate_location, group_suspects,
                                   identify_suspects, localize, throughput_variation)

FIG1_PATHS = [[1, 2, 3, 4, 0], [2, 3, 4, 0], [3, 4, 0], [4, 0], [5, 0]]


def test_variation_percentages():
    rep = throughput_variation({1: 2.0, 2: 4.0, 3: 0.0}, {1: 1.0, 2: 4.0})
    assert rep.delta == {1: -50.0, 2: 0.0}
    assert rep.excluded == [3]


def test_unaffected_source_contributes_nothing():
    assert identify_suspects([[1, 2, 3, 0]], {1: -2.0, 2: -40.0, 3: -40.0}) == set()


def test_lockstep_pair_is_suspected():
    # the drop ends after 2; 1 falls in lockstep with 2 so both are flagged
    dS = {1: -30.0, 2: -32.0, 3: -2.0, 4: -1.0}
    assert identify_suspects([[1, 2, 3, 4, 0]], dS) == {1, 2}
    # a drop that keeps deepening flags each step where it jumps
    dS = {1: -30.0, 2: -32.0, 3: -60.0, 4: -1.0}
    assert identify_suspects([[1, 2, 3, 4, 0]], dS) == {1, 2, 3}


def test_bad_thresholds():
    with pytest.raises(ValueError):
        identify_suspects([], {}, delta=0.0)


@pytest.mark.parametrize("case", [1, 2])
def test_analytic_chain_flags_starved_branch(case):
    def S(p):
        return {i: n.S for i, n in solve_fixed_point(fig1_chain(case, p_att=p)).nodes.items()}
    dS = throughput_variation(S(0.0), S(0.2)).delta
    sus = identify_suspects(FIG1_PATHS, dS)
    assert sus == {1, 2}
    assert 5 not in sus and 4 not in sus


def test_blocker_at_midpoint_splits_pair():
    a, b = (0.0, 0.0), (50.0, 0.0)
    assert covering_disk_exists(a, b, [], 30.0)
    assert not covering_disk_exists(a, b, [(25.0, 0.0)], 30.0)
    assert not covering_disk_exists(a, (70.0, 0.0), [], 30.0)


def test_off_axis_blocker_leaves_room():
    # a radius-30 disk centred at (25, -16) covers both endpoints and misses (25, 20)
    assert covering_disk_exists((0.0, 0.0), (50.0, 0.0), [(25.0, 20.0)], 30.0)


def test_grouping_and_singletons():
    pos = {1: (0, 0), 2: (20, 0), 3: (100, 0), 4: (120, 0), 5: (300, 0), 9: (60, 0)}
    groups = group_suspects([1, 2, 3, 4, 5], pos, [9], radius=30.0)
    assert sorted(groups) == [[1, 2], [3, 4]]
    assert group_suspects([1, 2, 3, 4, 5], pos, [9], radius=30.0, min_group_size=1)[-1] == [5]


def test_blocker_can_split_group():
    pos = {1: (0, 0), 2: (50, 0), 9: (25, 0)}
    assert group_suspects([1, 2], pos, [9], radius=30.0) == []
    assert group_suspects([1, 2], pos, [], radius=30.0) == [[1, 2]]


def test_centroid_cases():
    pos = {1: (3.0, 4.0), 2: (10.0, 0.0)}
    assert estimate_location([1], {1: -20.0}, pos) == (3.0, 4.0)
    assert estimate_location([1, 2], {1: -20.0, 2: -20.0}, pos) == pytest.approx((6.5, 2.0))
    assert centroid_weights([1, 2], {1: 0.0, 2: 0.0}) == {1: 0.5, 2: 0.5}
    with pytest.raises(EmptyGroup):
        centroid_weights([], {})


coords = st.floats(-500, 500, allow_nan=False)


@given(st.lists(st.tuples(coords, coords, st.floats(-100, -0.01)), min_size=1, max_size=8))
def test_estimate_is_convex_combination(pts):
    pos = {i: (x, y) for i, (x, y, _) in enumerate(pts)}
    dS = {i: d for i, (_, _, d) in enumerate(pts)}
    w = centroid_weights(list(pos), dS)
    assert math.fsum(w.values()) == pytest.approx(1.0) and min(w.values()) >= 0
    ex, ey = estimate_location(list(pos), dS, pos)
    xs, ys = [p[0] for p in pos.values()], [p[1] for p in pos.values()]
    assert min(xs) - 1e-9 <= ex <= max(xs) + 1e-9
    assert min(ys) - 1e-9 <= ey <= max(ys) + 1e-9


def test_localize_pipeline():
    pos = {1: (10.0, 10.0), 2: (30.0, 10.0), 3: (80.0, 80.0), 4: (90.0, 90.0)}
    dS = {1: -40.0, 2: -40.0, 3: -1.0, 4: 0.0}
    res = localize([[1, 2, 0], [2, 0], [3, 0], [4, 0]], dS, pos)
    assert res.suspects == {1, 2} and res.groups == [[1, 2]]
    assert res.error((20.0, 10.0)) == pytest.approx(0.0, abs=1e-12)
    assert localize([], {}, pos).best is None
