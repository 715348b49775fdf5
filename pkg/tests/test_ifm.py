import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrap.dynamics import AdiabaticityError
from mrap.hamiltonian import PulseSchedule
from mrap.ifm import (
    AllPathsBlockedError,
    MinefieldScenario,
    bomb_neighbourhood,
    consistent_blocked_branches,
    detect_beating,
    forbidden_nodes,
    random_minefield,
    run_ifm,
)
from mrap.topology import NO_OCCLUSION, OcclusionMask, build_tree, parse_address


def _within_sigma(count, n, p, k=4.0):
    return abs(count - n * p) <= k * np.sqrt(n * p * (1 - p))


@pytest.fixture(scope="module")
def fig2_result():
    tree = build_tree(2, True)
    bombs = OcclusionMask.from_pairs(tree, [("1T_i", "1T_j"), ("T1_i", "T1_j")])
    return run_ifm(MinefieldScenario(tree, bombs, trials=1000, rng_seed=5))


def test_two_bomb_scenario(fig2_result):
    c = fig2_result.counts
    assert c[parse_address("1T")] == 0 and c[parse_address("T1")] == 0
    assert sum(c.values()) == 1000
    assert _within_sigma(c[parse_address("11")], 1000, 0.5)
    assert _within_sigma(c[parse_address("TT")], 1000, 0.5)
    assert fig2_result.interaction_probability < 1e-3
    assert fig2_result.forbidden_peak < 1e-3
    assert fig2_result.reconstructed_blocked_branches == {(1, -1), (-1, 1)}


def test_no_bombs_spreads_evenly():
    tree = build_tree(2, True)
    res = run_ifm(MinefieldScenario(tree, NO_OCCLUSION, trials=1000, rng_seed=1))
    assert all(_within_sigma(c, 1000, 0.25) for c in res.counts.values())
    assert res.reconstructed_blocked_branches == frozenset()


def test_whole_subtree_blocked_needs_a_slow_pulse():
    tree = build_tree(2, True)
    downstream = OcclusionMask.from_pairs(tree, [("11_i", "11_j"), ("1T_i", "1T_j")])
    with pytest.raises(AdiabaticityError) as info:
        run_ifm(MinefieldScenario(tree, downstream, trials=10))
    assert info.value.suggested_time == 313156.0


@pytest.mark.slow
def test_one_bomb_upstream_looks_like_two_downstream():
    tree = build_tree(2, True)
    upstream = OcclusionMask.from_pairs(tree, [("0_o", "1_e")])
    downstream = OcclusionMask.from_pairs(tree, [("11_i", "11_j"), ("1T_i", "1T_j")])
    a = run_ifm(MinefieldScenario(tree, upstream, trials=500, rng_seed=2))
    # blocking both leaves of a subtree leaves a slowly closing gap; T is about 3.1e5
    b = run_ifm(MinefieldScenario(tree, downstream, trials=500, rng_seed=2),
                max_total_time=4e5)
    assert a.reconstructed_blocked_branches == b.reconstructed_blocked_branches == {(1,)}
    assert a.interaction_probability < 1e-3 and b.interaction_probability < 1e-3


def test_sampling_is_unbiased():
    tree = build_tree(3, True)
    bombs = OcclusionMask.from_pairs(tree, [("11T_i", "11T_j"), ("T_o", "TT_e")])
    res = run_ifm(MinefieldScenario(tree, bombs, trials=10_000, rng_seed=11))
    n = sum(res.counts.values())
    assert n == 10_000
    for a, c in res.counts.items():
        p = res.receiver_populations[a]
        if p == 0:
            assert c == 0
        else:
            assert _within_sigma(c, n, p / sum(res.receiver_populations.values()))


def test_forbidden_and_neighbourhood_sets(tree2i, two_bombs):
    forb = {n.label for n in forbidden_nodes(tree2i, two_bombs)}
    assert forb == {"0_o", "1_o", "T_o", "11_i", "1T_i", "T1_i", "TT_i", "1T_j", "T1_j"}
    near = {n.label for n in bomb_neighbourhood(tree2i, two_bombs)}
    assert near == {"1T_i", "1T_j", "T1_i", "T1_j"}


def test_scenario_validation():
    with pytest.raises(ValueError):
        MinefieldScenario(build_tree(2), NO_OCCLUSION)
    tree = build_tree(2, True)
    with pytest.raises(ValueError):
        MinefieldScenario(tree, OcclusionMask.from_pairs(tree, [("11_e", "11_i")]))


def test_all_blocked_points_to_beating(tree2i):
    mask = OcclusionMask(frozenset(tree2i.imaging_links))
    with pytest.raises(AllPathsBlockedError, match="detect_beating"):
        run_ifm(MinefieldScenario(tree2i, mask, trials=10))


def test_too_fast_schedule_is_refused(tree2i, two_bombs):
    with pytest.raises(AdiabaticityError) as info:
        run_ifm(MinefieldScenario(tree2i, two_bombs, trials=10), PulseSchedule(100.0))
    assert info.value.suggested_time == 1820.0


def test_beating_when_every_link_is_blocked(tree2i):
    mask = OcclusionMask(frozenset(tree2i.imaging_links))
    rep = detect_beating(tree2i, PulseSchedule(100.0), mask)
    assert rep.final_receiver_population < 1e-12
    assert np.any(np.diff(rep.return_probability) > 1e-3)
    assert np.any(np.diff(rep.return_probability) < -1e-3)
    assert rep.beating


def test_no_beating_without_bombs(tree2i):
    rep = detect_beating(tree2i, PulseSchedule(200.0), NO_OCCLUSION)
    assert rep.final_receiver_population > 0.99
    assert not rep.beating


def test_result_report(fig2_result):
    d = fig2_result.to_dict()
    assert d["counts"]["1T"] == 0
    assert d["reconstructed_blocked_branches"] == ["1T", "T1"]
    assert d["provenance"] == {"rng_seed": 5, "total_time": 1820.0,
                               "metric": fig2_result.metric, "steps": 182000}


@settings(max_examples=8)
@given(st.integers(2, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_random_minefields_with_bombs_anywhere(depth, n_bombs, seed):
    # bombs may sit on any o->e or i->j link; rounds needing T > 2e4 are refused
    tree = build_tree(depth, True)
    bombs = random_minefield(tree, n_bombs, np.random.default_rng(seed), plane_only=False)
    try:
        res = run_ifm(MinefieldScenario(tree, bombs, trials=300, rng_seed=seed),
                      max_total_time=2e4)
    except AdiabaticityError as err:
        assert err.suggested_time > 2e4
        return
    blocked = consistent_blocked_branches(tree, bombs)
    assert res.reconstructed_blocked_branches == blocked
    for r in tree.receivers:
        if any(r.address[: len(b)] == b for b in blocked):
            assert res.counts[r.address] == 0
    assert res.interaction_probability < 1e-3
    assert res.forbidden_peak < 1e-3
