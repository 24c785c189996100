from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import MergeBench
from starfish.contracts import ChannelContract, ContractClock, ContractHost
from starfish.core import (
    ChannelStatus,
    HmacScheme,
    KeyDirectory,
    Ledger,
    MergeStatus,
    Signature,
    SignedState,
    StateKind,
)


def channel_bench(fund_a=20, fund_b=20, delta=10):
    led = Ledger({"A": 50, "B": 50})
    d = KeyDirectory(HmacScheme(b"c"))
    keys = {p: d.register(p) for p in "AB"}
    host = ContractHost(led, d, delta)
    c = ChannelContract(host, "AB", "A", "B", fund_a, fund_b)
    host.add(c)
    return host, c, keys


def signed_c(d, keys, version, values, epoch=0, who="AB"):
    s = SignedState.build(StateKind.MSG_C, "AB", version, values, epoch)
    for p in who:
        s = d.sign(keys[p], s)
    return s


def test_clock_deadlines():
    clk = ContractClock(10, 5)
    assert [clk.deadline(k) for k in (1, 2, 3, 4)] == [15, 25, 35, 45]
    with pytest.raises(ValueError):
        clk.deadline(5)


def test_channel_opens_when_both_fund():
    host, c, _ = channel_bench()
    c.handle("A", "open", {})
    assert c.channel.status is ChannelStatus.PROPOSED
    c.handle("B", "open", {})
    assert c.channel.status is ChannelStatus.OPEN
    assert host.ledger.balances == {"A": 30, "B": 30}


def test_channel_open_refunds_opener_after_delta():
    host, c, _ = channel_bench()
    c.handle("A", "open", {})
    host.advance(11)
    assert c.channel.status is ChannelStatus.CLOSED
    assert host.ledger.balance("A") == 50
    assert any(e.eventName == "not-opened" for e in host.events)


def test_channel_open_with_insufficient_funds():
    host, c, _ = channel_bench(fund_a=60)
    c.handle("A", "open", {})
    assert c.channel.status is ChannelStatus.CLOSED
    assert host.ledger.balance("A") == 50


def test_close_takes_highest_version():
    host, c, keys = channel_bench()
    c.handle("A", "open", {})
    c.handle("B", "open", {})
    d = host.directory
    old = signed_c(d, keys, 1, {"A": 30, "B": 10})
    new = signed_c(d, keys, 2, {"A": 12, "B": 28})
    c.handle("A", "closeC", {"msgC": old})
    assert c.channel.status is ChannelStatus.CLOSING
    c.handle("B", "closeC", {"msgC": new})
    assert c.channel.status is ChannelStatus.CLOSED
    assert host.ledger.balances == {"A": 42, "B": 58}


def test_unanswered_close_settles_at_four_delta():
    host, c, keys = channel_bench()
    c.handle("A", "open", {})
    c.handle("B", "open", {})
    c.handle("A", "closeC", {"msgC": signed_c(host.directory, keys, 1, {"A": 25, "B": 15})})
    host.advance(39)
    assert c.channel.status is ChannelStatus.CLOSING
    host.advance(1)
    assert c.channel.status is ChannelStatus.CLOSED
    assert host.ledger.balances == {"A": 55, "B": 45}


def test_forged_and_unbalanced_closes_are_refused():
    host, c, keys = channel_bench()
    c.handle("A", "open", {})
    c.handle("B", "open", {})
    d = host.directory
    forged = signed_c(d, keys, 9, {"A": 40, "B": 0}, who="A").with_signature(
        Signature("B", b"\x00" * 32))
    c.handle("A", "closeC", {"msgC": forged})
    too_much = signed_c(d, keys, 3, {"A": 41, "B": 0})
    c.handle("A", "closeC", {"msgC": too_much})
    assert c.channel.status is ChannelStatus.OPEN
    assert [e.eventName for e in host.events].count("closeC-invalid") == 2
    assert [o[3] for o in host.outbox].count("closeC-rejected") == 2


def test_version_zero_must_match_funding():
    host, c, keys = channel_bench()
    c.handle("A", "open", {})
    c.handle("B", "open", {})
    fake0 = SignedState.build(StateKind.MSG_C, "AB", 0, {"A": 40, "B": 0})
    c.handle("A", "closeC", {"msgC": fake0})
    assert c.channel.status is ChannelStatus.OPEN
    c.handle("A", "closeC", {"msgC": c.baseline()})
    assert c.channel.status is ChannelStatus.CLOSING


def test_merge_pledges_hub_side_into_escrow():
    b = MergeBench({"A": 0, "B": 5, "C": 10, "D": 21})
    assert b.merge.merge.status is MergeStatus.ACTIVE
    assert b.merge.escrow == 36
    assert b.merge.merge.pooled() == 36
    assert b.host.channel_contract("HD").channel.balanceC == {"H": 0, "D": 10}
    assert b.coins() == b.initial_total


def test_merge_with_bad_signature_is_rejected():
    from starfish.contracts import MergeContract, MergeProposal

    b = MergeBench({"A": 1, "B": 1})
    m = MergeContract(b.host, "M2", "H")
    b.host.add(m)
    p = MergeProposal("M2", "H", 0, (("A", "HA", 0), ("B", "HB", 0)))
    sigs = {q: b.directory.scheme.sign(k, p.message()) for q, k in b.keys.items()}
    sigs["B"] = Signature("B", b"bad")
    m.handle("H", "merge", {"proposal": p, "sigs": sigs})
    assert m.merge.status is MergeStatus.PROPOSED


def test_close_merge_pays_latest_state_after_response():
    b = MergeBench({"A": 0, "B": 5, "C": 10, "D": 21})
    v2 = b.msgM(2, {"A": 17, "B": 9, "C": 6, "D": 4})
    b.merge.handle("D", "closeM", {"user": "D", "msgM": b.msgM(0), "msgE": b.msgE("D")})
    b.merge.handle("H", "closeM", {"user": "D", "msgM": v2, "msgE": b.msgE("D")})
    b.host.advance(10)
    assert b.merge.escrow == 32
    assert b.host.channel_contract("HD").channel.balanceC == {"H": 4, "D": 10}
    assert b.merge.merge.capacities() == {"A": 17, "B": 9, "C": 6}
    assert b.coins() == b.initial_total


def test_close_merge_challenge_overrides_stale_state():
    b = MergeBench({"A": 0, "B": 5, "C": 10, "D": 21})
    v3 = b.msgM(3, {"A": 17, "B": 9, "C": 6, "D": 4})
    b.merge.handle("D", "closeM", {"user": "D", "msgM": b.msgM(0), "msgE": b.msgE("D")})
    b.host.advance(11)
    b.merge.handle("D", "timeout", {"user": "D"})
    b.merge.handle("A", "closeM-challenge", {"user": "D", "msgM": v3})
    b.host.advance(10)
    assert b.merge.finalized_versionM == 3
    assert b.host.channel_contract("HD").channel.balanceC["H"] == 4


def test_challenge_after_window_is_ignored():
    b = MergeBench({"A": 3, "B": 3})
    b.merge.handle("A", "closeM", {"user": "A", "msgM": b.msgM(0), "msgE": b.msgE("A")})
    b.merge.handle("H", "closeM", {"user": "A", "msgM": b.msgM(0), "msgE": b.msgE("A")})
    b.host.advance(10)
    assert "A" in b.merge.closed_users
    b.merge.handle("B", "closeM-challenge", {"user": "A", "msgM": b.msgM(1, {"A": 6, "B": 0})})
    assert b.merge.finalized_versionM == 0


def test_hub_alone_cannot_sign_merge_state():
    b = MergeBench({"A": 3, "B": 3})
    assert not b.merge.valid_M(b.msgM(4, {"A": 6, "B": 0}, signers=["H"]))
    assert b.merge.valid_M(b.msgM(4, {"A": 6, "B": 0}, signers=["H", "B"]))
    assert not b.merge.valid_M(b.msgM(4, {"A": 7, "B": 0}))


def test_stuck_close_advances_on_its_own():
    b = MergeBench({"A": 3, "B": 3})
    b.merge.handle("A", "closeM", {"user": "A", "msgM": b.msgM(0), "msgE": b.msgE("A", 1, 2)})
    b.host.advance(30)
    assert b.merge.pending["A"].phase.value == "challenge-window"
    b.host.advance(10)
    assert b.host.channel_contract("HA").channel.balanceC == {"H": 1, "A": 12}


def test_escrow_never_pays_out_more_than_pledged():
    b = MergeBench({"A": 3, "B": 3})
    # a valid state that gives B the whole pool, then one that gives A the whole pool
    b.merge.handle("B", "closeM", {"user": "B", "msgM": b.msgM(1, {"A": 0, "B": 6}),
                                   "msgE": b.msgE("B")})
    b.host.advance(40)
    b.merge.handle("A", "closeM", {"user": "A", "msgM": b.msgM(2, {"A": 6, "B": 0}),
                                   "msgE": b.msgE("A")})
    b.host.advance(40)
    assert b.merge.escrow == 0
    assert b.merge.merge.status is MergeStatus.CLOSED
    assert b.coins() == b.initial_total


def close_merge_interleaving(rng: random.Random) -> tuple[int, int, MergeBench]:
    """One randomized close: random stale/fresh submissions from the caller,
    the counterparty and a random challenger subset, in random order, plus
    forged high-version states that must be ignored."""
    n = rng.randint(2, 5)
    users = [chr(ord("A") + i) for i in range(n)]
    b = MergeBench({u: rng.randint(0, 20) for u in users}, seed=bytes([rng.randrange(256)]))
    total = sum(b.caps.values())
    top = rng.randint(1, 12)
    states = {0: b.msgM(0)}
    for v in range(1, top + 1):
        cut = sorted(rng.randint(0, total) for _ in range(n - 1))
        caps = dict(zip(users, [hi - lo for lo, hi in zip([0, *cut], [*cut, total])]))
        states[v] = b.msgM(v, caps)
    target = rng.choice(users)
    caller = rng.choice([b.hub, target])
    counter = target if caller == b.hub else b.hub
    submitted = []

    v = rng.randint(0, top)
    b.merge.handle(caller, "closeM", {"user": target, "msgM": states[v], "msgE": b.msgE(target)})
    submitted.append(v)
    if rng.random() < 0.6:
        b.host.advance(rng.randint(0, b.delta))
        v = rng.randint(0, top)
        b.merge.handle(counter, "closeM", {"user": target, "msgM": states[v],
                                           "msgE": b.msgE(target)})
        submitted.append(v)
    else:
        b.host.advance(b.delta + 1)
        b.merge.handle(caller, "timeout", {"user": target})
    window_end = b.merge.pending[target].deadline
    participants = [b.hub, *users]
    challengers = rng.sample(participants, rng.randint(0, len(participants)))
    moves = []
    for p in challengers:
        for _ in range(rng.randint(1, 3)):
            moves.append((rng.randint(b.host.now, window_end - 1), p, rng.randint(0, top), False))
    for _ in range(rng.randint(0, 2)):
        # forged: only the hub's signature, and a bogus one for a user
        fake = b.msgM(top + 5, states[top].values, signers=[b.hub])
        fake = fake.with_signature(Signature(users[0], b"\x01" * 32))
        moves.append((rng.randint(b.host.now, window_end - 1), rng.choice(participants), fake, True))
    rng.shuffle(moves)
    moves.sort(key=lambda m: m[0])
    for when, p, v, forged in moves:
        if when > b.host.now:
            b.host.advance(when - b.host.now)
        msg = v if forged else states[v]
        b.merge.handle(p, "closeM-challenge", {"user": target, "msgM": msg})
        if not forged:
            submitted.append(v)
    b.host.advance(2 * b.delta)
    assert target in b.merge.closed_users
    closed = [e for e in b.host.events if e.eventName == "closedM"][-1]
    assert closed.payload["capacity"] == states[max(submitted)].values[target]
    return b.merge.finalized_versionM, max(submitted), b


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_close_merge_finalizes_max_submitted_version(seed):
    final, best, bench = close_merge_interleaving(random.Random(seed))
    assert final == best
    assert bench.coins() == bench.initial_total
