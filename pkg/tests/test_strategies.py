from __future__ import annotations

import pytest

from starfish.network import NetworkState
from starfish.strategies import (
    OpCounter,
    StrategyKind as K,
    capacity_bound,
    plan_setup,
    rebalance,
    revive_cycle,
    setup_ops,
)

# hub-side balances of the four-channel walkthrough, in channel order A, B, C, D
WALKTHROUGH_HUB = [(0, 0), (1, 5), (2, 10), (3, 21)]


def test_opcount_closed_forms_small_n():
    assert [setup_ops(k, 10) for k in (K.STARFISH, K.SHADUF_HL, K.SHADUF_AO, K.SHADUF_AB)] == \
        [10, 10, 18, 90]
    assert {setup_ops(k, 2) for k in (K.STARFISH, K.SHADUF_HL, K.SHADUF_AO, K.SHADUF_AB)} == {2}


@pytest.mark.parametrize("n", range(1, 17))
def test_setup_plans_match_closed_forms(n):
    adjacent = [(c, 10 * c) for c in range(n)]
    for k in K:
        assert plan_setup(k, 0, adjacent).ops == setup_ops(k, n)


def test_hl_pairs_highest_with_lowest():
    plan = plan_setup(K.SHADUF_HL, 0, WALKTHROUGH_HUB)
    assert sorted(tuple(sorted(b.channelPair)) for b in plan.bindings) == [(0, 3), (1, 2)]
    odd = plan_setup(K.SHADUF_HL, 0, WALKTHROUGH_HUB[:3])
    assert len(odd.bindings) == 1 and odd.ops == 2


def test_ao_binds_everything_to_richest():
    plan = plan_setup(K.SHADUF_AO, 0, WALKTHROUGH_HUB)
    assert all(3 in b.channelPair for b in plan.bindings)
    assert plan.partners()[3] == [0, 1, 2]


def test_strategies_without_setup():
    for k in (K.LN, K.CLOSE_OPEN, K.LOOP, K.REVIVE):
        assert plan_setup(k, 0, WALKTHROUGH_HUB).ops == 0


def test_walkthrough_capacity_bounds():
    bounds = {k: capacity_bound(k, WALKTHROUGH_HUB) for k in K}
    assert bounds[K.STARFISH] == 36
    assert bounds[K.SHADUF_AO] == 31
    assert bounds[K.SHADUF_AB] == 31
    assert bounds[K.SHADUF_HL] == 21
    assert bounds[K.LN] == 21


def test_op_counter():
    c = OpCounter()
    c.record(1, "setup", 3)
    c.record(2, "refill")
    other = OpCounter()
    other.record(1, "refill", 2)
    c.merge(other)
    assert c.total == 6
    assert c.perNode[1] == 5 and c.perKind["refill"] == 3


# -- rebalancing ----------------------------------------------------------


def star_state(hub_bal=(0, 5, 10, 21), ledger=0):
    """Hub H with leaves A..D; ``hub_bal`` is H's side of each channel."""
    leaves = "ABCD"[:len(hub_bal)]
    chans = [("H", x, b, 10) for x, b in zip(leaves, hub_bal)]
    return NetworkState.build(["H", *leaves], chans, {"H": ledger})


def test_starfish_pools_every_other_channel():
    s = star_state()
    h, ca = s.index("H"), 0
    plan = rebalance(K.STARFISH, s, h, ca, 36)
    assert plan is not None
    plan.apply(s, 0, 10)
    assert s.balance(ca, h) == 36
    assert s.total() == 76
    assert rebalance(K.STARFISH, star_state(), h, ca, 37) is None


def test_starfish_takes_richest_donors_first():
    s = star_state()
    h = s.index("H")
    plan = rebalance(K.STARFISH, s, h, 0, 25)
    assert plan.shifts == [(3, h, -21), (2, h, -4), (0, h, 25)]


def test_shaduf_needs_a_bound_partner():
    s = star_state()
    h = s.index("H")
    ab = plan_setup(K.SHADUF_AB, h, [(c, s.balance(c, h)) for _, c in s.adj[h]]).partners()
    hl = plan_setup(K.SHADUF_HL, h, [(c, s.balance(c, h)) for _, c in s.adj[h]]).partners()
    assert rebalance(K.SHADUF_AB, s, h, 1, 10, partners=ab).shifts == [(3, h, -10), (1, h, 10)]
    # HL binds B with C only; C holds 10
    assert rebalance(K.SHADUF_HL, s, h, 1, 10, partners=hl).shifts == [(2, h, -10), (1, h, 10)]
    assert rebalance(K.SHADUF_HL, s, h, 1, 11, partners=hl) is None


def test_locked_donor_is_skipped():
    s = star_state()
    h = s.index("H")
    s.lockedUntil[3] = 5
    assert rebalance(K.STARFISH, s, h, 0, 16, now=4) is None
    assert rebalance(K.STARFISH, s, h, 0, 16, now=5) is not None


def test_onchain_refill_tops_up_and_locks():
    s = star_state(ledger=100)
    h = s.index("H")
    s.pay(3, h, 15)  # H's side of HD drops to 6
    plan = rebalance(K.CLOSE_OPEN, s, h, 3, 10, now=7)
    assert plan.ops == 2 and plan.ledger == [(h, -15)]
    plan.apply(s, 7, 10)
    assert s.balance(3, h) == 21 and s.ledger[h] == 85
    assert s.locked(3, 16) and not s.locked(3, 17)
    assert rebalance(K.LOOP, s, h, 3, 1, now=8) is None
    assert rebalance(K.LOOP, star_state(ledger=0), h, 0, 1) is None


def test_revive_finds_shortest_cycle():
    # square H-A-B-C-H: H needs balance on H-C, sends around H->A->B->C
    s = NetworkState.build("HABC", [("H", "A", 10, 10), ("A", "B", 10, 10),
                                    ("B", "C", 10, 10), ("C", "H", 10, 0)])
    h, c_ch = s.index("H"), 3
    hops = revive_cycle(s, h, c_ch, 5, 0)
    names = [(s.names[s.ends[c][0]] + s.names[s.ends[c][1]], s.names[p]) for c, p in hops]
    assert names == [("AH", "H"), ("AB", "A"), ("BC", "B"), ("CH", "C")]
    plan = rebalance(K.REVIVE, s, h, c_ch, 5)
    plan.apply(s, 0, 10)
    assert s.balance(c_ch, h) == 5 and s.balance(0, h) == 5
    assert s.total() == 70


def test_revive_respects_cycle_length():
    s = NetworkState.build("HABC", [("H", "A", 10, 10), ("A", "B", 10, 10),
                                    ("B", "C", 10, 10), ("C", "H", 10, 0)])
    assert revive_cycle(s, s.index("H"), 3, 5, 0, max_cycle=3) is None
    assert revive_cycle(s, s.index("H"), 3, 5, 0, max_cycle=4) is not None


def test_rebalance_rejects_non_positive_need():
    with pytest.raises(ValueError):
        rebalance(K.STARFISH, star_state(), 0, 0, 0)


def test_strategy_names_parse():
    assert K.parse("starfish") is K.STARFISH
    assert K.parse("SHADUF_AB") is K.SHADUF_AB
    with pytest.raises(ValueError):
        K.parse("nope")
