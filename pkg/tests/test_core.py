from __future__ import annotations

import pytest

from starfish.core import (
    Channel,
    Edge,
    HmacScheme,
    InvalidAmount,
    InvariantViolation,
    KeyDirectory,
    Ledger,
    Merge,
    MergeStatus,
    SignedState,
    StateKind,
    apply_channel_payment,
    apply_edge_payment,
    apply_merge_update,
    check_non_negative,
    encode,
    ledger_add,
    ledger_remove,
    total_coins,
    transfer,
)


def test_ledger_add_then_remove():
    led = Ledger({"A": 10})
    led.add("A", 5)
    assert led.balance("A") == 15
    assert led.remove("A", 15)
    assert led.balance("A") == 0


def test_ledger_remove_more_than_held_is_ignored():
    led = Ledger({"A": 3})
    assert not led.remove("A", 4)
    assert led.balance("A") == 3


@pytest.mark.parametrize("bad", [-1, 1.5, True, "3"])
def test_ledger_rejects_bad_amounts(bad):
    with pytest.raises(InvalidAmount):
        Ledger().add("A", bad)


def test_functional_ledger_ops_leave_input_untouched():
    led = Ledger({"A": 4})
    assert ledger_add(led, "A", 1).balance("A") == 5
    assert ledger_remove(led, "A", 5) is None
    assert ledger_remove(led, "A", 4).balance("A") == 0
    assert led.balance("A") == 4


def test_channel_payment_and_overdraft():
    ch = Channel("c", ("A", "B"), {"A": 5, "B": 5})
    assert apply_channel_payment(ch, transfer("A", "B", 5)) == {"A": 0, "B": 10}
    with pytest.raises(ValueError):
        apply_channel_payment(ch, transfer("A", "B", 6))
    with pytest.raises(ValueError):
        apply_channel_payment(ch, {"A": -1, "B": 2})


def test_edge_payment_keeps_capacity():
    e = Edge.fresh("c", "H", "A", 21)
    bal = apply_edge_payment(e, transfer("H", "A", 2))
    assert bal == {"H": 19, "A": 2}
    assert sum(bal.values()) == e.capacity


def test_merge_update_moves_capacity_between_edges():
    caps = {"A": 0, "B": 5, "C": 10, "D": 21}
    caps = apply_merge_update(caps, "D", "A", 17)
    caps = apply_merge_update(caps, "C", "A", 4)
    assert caps == {"A": 21, "B": 5, "C": 6, "D": 4}
    with pytest.raises(ValueError):
        apply_merge_update(caps, "D", "A", 5)
    with pytest.raises(ValueError):
        apply_merge_update(caps, "A", "A", 1)


def test_encode_is_unambiguous():
    assert encode("ab", "c") != encode("a", "bc")
    assert encode(1) != encode("1")
    assert encode({"b": 1, "a": 2}) == encode({"a": 2, "b": 1})


def test_signatures_verify_and_reject_tampering():
    d = KeyDirectory(HmacScheme(b"seed"))
    ka, kb = d.register("A"), d.register("B")
    st = SignedState.build(StateKind.MSG_C, "c", 1, {"A": 3, "B": 7})
    st = d.sign(kb, d.sign(ka, st))
    assert d.valid(st, ["A", "B"])
    assert not d.valid(SignedState.build(StateKind.MSG_C, "c", 1, {"A": 3, "B": 7}), ["A"])
    tampered = SignedState(st.kind, st.subject, st.version, (("A", 4), ("B", 6)), st.epoch,
                           st.signatures)
    assert not d.valid(tampered, ["A", "B"])


def test_signature_from_other_seed_fails():
    d1, d2 = KeyDirectory(HmacScheme(b"one")), KeyDirectory(HmacScheme(b"two"))
    d1.register("A")
    ka2 = d2.register("A")
    st = d2.sign(ka2, SignedState.build(StateKind.MSG_M, "M", 2, {"A": 1}))
    assert not d1.valid(st, ["A"])


def test_ed25519_scheme_round_trip():
    pytest.importorskip("cryptography")
    from starfish.core import Ed25519Scheme

    d = KeyDirectory(Ed25519Scheme())
    k = d.register("A")
    st = d.sign(k, SignedState.build(StateKind.MSG_E, "M/A", 1, {"A": 1, "H": 2}))
    assert d.valid(st, ["A"])
    assert not d.valid(st, ["A", "H"])


def test_total_coins_and_non_negative_audit():
    led = Ledger({"X": 4})
    ch = Channel("c", ("A", "B"), {"A": 3, "B": 2})
    m = Merge("M", "H", ["A"], [Edge.fresh("c", "H", "A", 5)], status=MergeStatus.ACTIVE)
    assert total_coins(led, [ch], [m]) == 14
    check_non_negative(led, [ch], [m])
    ch.balanceC["A"] = -1
    with pytest.raises(InvariantViolation):
        check_non_negative(led, [ch], [m])


def test_edge_check_catches_capacity_mismatch():
    e = Edge.fresh("c", "H", "A", 5)
    e.balanceE["A"] = 1
    with pytest.raises(InvariantViolation):
        e.check()
