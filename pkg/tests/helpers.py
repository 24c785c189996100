"""Shared scenario helpers for the test suite."""
from __future__ import annotations

from starfish.engine import World, bundled_scenario
from starfish.engine.behaviors import Behavior


def run_bundled(name: str, adversary: dict | None = None, until: int | None = None,
                extra: list | None = None, **world_kwargs) -> World:
    """Run a bundled scenario, optionally cut at round ``until`` and with
    extra adversaries or scheduled commands ``(round, party, op, args)``."""
    sc = bundled_scenario(name)
    if until is not None:
        sc.schedule = [s for s in sc.schedule if s[0] <= until]
    for pid, spec in (adversary or {}).items():
        sc.adversary[pid] = Behavior.parse(spec)
    world = sc.build(**world_kwargs)
    for round_, party, op, args in extra or []:
        world.at(round_, party, op, **args)
    world.run_until_idle()
    return world


def results(world: World, party: str | None = None, op: str | None = None) -> list:
    return [c for p, c in world.completions(party) if op is None or c.op == op]


class MergeBench:
    """A hub with one opened channel per user, all pledged into one merge,
    driven directly against the contracts (no parties, no message bus)."""

    def __init__(self, caps: dict[str, int], hub: str = "H", delta: int = 10, seed: bytes = b"t"):
        from starfish.contracts import ChannelContract, ContractHost, MergeContract, MergeProposal
        from starfish.core import HmacScheme, KeyDirectory, Ledger

        self.hub, self.delta = hub, delta
        self.users = sorted(caps)
        self.caps = dict(caps)
        self.ledger = Ledger({hub: sum(caps.values()), **{u: 10 for u in self.users}})
        self.directory = KeyDirectory(HmacScheme(seed))
        self.keys = {p: self.directory.register(p) for p in [hub, *self.users]}
        self.host = ContractHost(self.ledger, self.directory, delta)
        for u in self.users:
            c = ChannelContract(self.host, f"{hub}{u}", hub, u, caps[u], 10)
            self.host.add(c)
            c.handle(hub, "open", {})
            c.handle(u, "open", {})
        self.merge = MergeContract(self.host, "M", hub)
        self.host.add(self.merge)
        proposal = MergeProposal("M", hub, 0, tuple((u, f"{hub}{u}", caps[u]) for u in self.users))
        sigs = {p: self.directory.scheme.sign(k, proposal.message()) for p, k in self.keys.items()}
        self.merge.handle(hub, "merge", {"proposal": proposal, "sigs": sigs})
        self.initial_total = self.coins()

    def coins(self) -> int:
        total = self.ledger.total() + self.merge.escrow
        for c in self.host.contracts.values():
            if hasattr(c, "channel"):
                total += c.channel.total()
        return total

    def msgM(self, version: int, caps: dict[str, int] | None = None, signers=None):
        from starfish.core import SignedState, StateKind

        st = SignedState.build(StateKind.MSG_M, "M", version, caps or self.caps)
        if version == 0:
            return st
        for p in signers or [self.hub, *self.users]:
            st = self.directory.sign(self.keys[p], st)
        return st

    def msgE(self, user: str, version: int = 0, paid: int = 0):
        from starfish.contracts import edge_subject
        from starfish.core import SignedState, StateKind

        cap = self.caps[user]
        st = SignedState.build(StateKind.MSG_E, edge_subject("M", user), version,
                               {self.hub: cap - paid, user: paid})
        if version:
            st = self.directory.sign(self.keys[user], self.directory.sign(self.keys[self.hub], st))
        return st


def honest_timings(delta: int = 10) -> dict[str, list[int]]:
    """Rounds taken by every procedure on honest paths, keyed by operation."""
    out: dict[str, list[int]] = {}
    worlds = [
        run_bundled("fig2", extra=[(70, "H", "close_channel", {"channel": "HB"})]),
        run_bundled("stale-close", adversary={"A": "honest"}),
    ]
    for i, w in enumerate(worlds):
        assert w.delta == delta
        for c in results(w):
            assert not c.result.startswith("not-"), (c.op, c.result)
            op = c.op
            if op == "close_channel":
                op = "close_channel_merged" if i == 0 else "close_channel"
            out.setdefault(op, []).append(c.rounds)
    return out


WALKTHROUGH_EXPECTED = {
    "pledged": {"A": 0, "B": 5, "C": 10, "D": 21},
    "reallocated": {"A": 21, "B": 5, "C": 6, "D": 4},
    "final_caps": {"A": 17, "B": 9, "C": 6, "D": 4},
    "pooled_before": 36,
    "pooled_after": 32,
}
