"""Channel and merge contracts.

Both contracts are passive, deterministic state machines. A host (the
engine's :class:`~starfish.engine.world.World`, or :class:`ContractHost`
in tests) delivers transactions to ``handle`` and calls ``tick`` once per
round so deadlines can fire. Outgoing notifications go through
``host.emit`` and every state transition is appended to the host's
contract event log.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Iterable

from .core import (
    Channel,
    ChannelStatus,
    Coin,
    Edge,
    KeyDirectory,
    Ledger,
    Merge,
    MergeStatus,
    PartyId,
    SignedState,
    StateKind,
    encode,
)

DEFAULT_DELTA = 10


@dataclass
class ContractClock:
    delta: int = DEFAULT_DELTA
    currentRound: int = 0

    def __post_init__(self) -> None:
        if self.delta < 1:
            raise ValueError("delta must be a positive number of rounds")

    def deadline(self, k: int, start: int | None = None) -> int:
        if k not in (1, 2, 3, 4):
            raise ValueError("contract deadlines are 1..4 multiples of delta")
        base = self.currentRound if start is None else start
        return base + k * self.delta


@dataclass(frozen=True)
class ContractEvent:
    round: int
    contractId: str
    eventName: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {"round": self.round, "contract": self.contractId, "event": self.eventName,
             "payload": self.payload},
            sort_keys=True,
        )


class ContractHost:
    """Minimal host: a ledger, a key directory, a clock and an outbox.

    The engine world provides the same attributes; this class lets the
    contracts run stand-alone in tests.
    """

    def __init__(self, ledger: Ledger, directory: KeyDirectory, delta: int = DEFAULT_DELTA) -> None:
        self.ledger = ledger
        self.directory = directory
        self.clock = ContractClock(delta)
        self.contracts: dict[str, ChannelContract | MergeContract] = {}
        self.outbox: list[tuple[int, str, PartyId, str, dict]] = []
        self.events: list[ContractEvent] = []

    @property
    def now(self) -> int:
        return self.clock.currentRound

    @property
    def delta(self) -> int:
        return self.clock.delta

    def emit(self, contract_id: str, recipient: PartyId, kind: str, payload: dict) -> None:
        self.outbox.append((self.now, contract_id, recipient, kind, payload))

    def log(self, contract_id: str, event: str, payload: dict) -> None:
        self.events.append(ContractEvent(self.now, contract_id, event, payload))

    def channel_contract(self, channel_id: str) -> "ChannelContract | None":
        c = self.contracts.get(channel_id)
        return c if isinstance(c, ChannelContract) else None

    def add(self, contract: "ChannelContract | MergeContract") -> None:
        self.contracts[contract.id] = contract

    def advance(self, rounds: int = 1) -> None:
        for _ in range(rounds):
            self.clock.currentRound += 1
            for cid in sorted(self.contracts):
                self.contracts[cid].tick()


def _jsonable_state(state: SignedState | None) -> dict | None:
    if state is None:
        return None
    return {"kind": state.kind.value, "subject": state.subject, "version": state.version,
            "epoch": state.epoch, "values": state.values}


# ---------------------------------------------------------------------------
# Channel contract
# ---------------------------------------------------------------------------


class ClosePhase(str, enum.Enum):
    AWAITING_COUNTERPARTY = "awaiting-counterparty"
    CHALLENGE_WINDOW = "challenge-window"
    FINALIZING = "finalizing"


@dataclass
class PendingClose:
    contractId: str
    caller: PartyId
    started: int
    deadline: int
    phase: ClosePhase
    bestMsgC: SignedState | None = None
    bestMsgM: SignedState | None = None
    bestMsgE: SignedState | None = None
    submitted: list[SignedState] = field(default_factory=list)


class ChannelContract:
    """On-chain record of one channel.

    Off-chain states carry an ``epoch``: the number of contract-side
    adjustments (merge debits, close-merge credits) the signers had already
    applied. A payout adds every adjustment the submitted state predates.
    """

    def __init__(self, host, channel_id: str, opener: PartyId, peer: PartyId,
                 fund_opener: Coin, fund_peer: Coin) -> None:
        self.host = host
        self.id = channel_id
        self.opener = opener
        self.peer = peer
        self.funding = {opener: fund_opener, peer: fund_peer}
        self.channel = Channel(channel_id, (opener, peer), {opener: 0, peer: 0})
        self.adjustments: list[dict[PartyId, Coin]] = []
        self.open_deadline: int | None = None
        self.pending: PendingClose | None = None

    # -- helpers ---------------------------------------------------------

    @property
    def epoch(self) -> int:
        return len(self.adjustments)

    @property
    def users(self) -> tuple[PartyId, PartyId]:
        return self.channel.users

    def baseline(self) -> SignedState:
        """Version-0 state both parties implicitly agreed to when funding."""
        return SignedState.build(StateKind.MSG_C, self.id, 0, self.funding, epoch=0)

    def payout_of(self, state: SignedState) -> dict[PartyId, Coin]:
        out = state.values
        for adj in self.adjustments[state.epoch:]:
            for p, d in adj.items():
                out[p] = out.get(p, 0) + d
        return out

    def valid_state(self, state: SignedState) -> bool:
        if state.kind is not StateKind.MSG_C or state.subject != self.id:
            return False
        if set(state.values) != set(self.users) or state.epoch > self.epoch:
            return False
        if state.version == 0:
            if not state.same_content(self.baseline()):
                return False
        elif not self.host.directory.valid(state, self.users):
            return False
        payout = self.payout_of(state)
        return all(v >= 0 for v in payout.values()) and sum(payout.values()) == self.channel.total()

    def _log(self, event: str, **payload: Any) -> None:
        self.host.log(self.id, event, payload)

    # -- dispatch --------------------------------------------------------

    def handle(self, sender: PartyId, kind: str, payload: dict) -> None:
        if kind == "open":
            self.on_open(sender)
        elif kind == "closeC":
            self.on_close(sender, payload["msgC"])

    def on_open(self, sender: PartyId) -> None:
        ch = self.channel
        if ch.status is not ChannelStatus.PROPOSED:
            return
        if sender == self.opener and self.open_deadline is None:
            amount = self.funding[self.opener]
            if not self.host.ledger.remove(self.opener, amount):
                ch.status = ChannelStatus.CLOSED
                self._log("not-opened", reason="insufficient-funds", party=self.opener)
                self.host.emit(self.id, self.opener, "not-opened", {"channel": self.id})
                return
            ch.balanceC[self.opener] = amount
            self.open_deadline = self.host.now + self.host.delta
            self._log("opening", opener=self.opener, amount=amount)
            self.host.emit(self.id, self.peer, "opening", {"channel": self.id,
                                                           "funding": dict(self.funding)})
        elif sender == self.peer and self.open_deadline is not None:
            if self.host.now > self.open_deadline:
                return
            amount = self.funding[self.peer]
            if not self.host.ledger.remove(self.peer, amount):
                return
            ch.balanceC[self.peer] = amount
            ch.status = ChannelStatus.OPEN
            self._log("opened", balances=dict(ch.balanceC))
            for u in self.users:
                self.host.emit(self.id, u, "opened", {"channel": self.id})

    # -- merge hooks (called synchronously by merge contracts) ----------

    def chan_merge(self, merge_id: str, hub: PartyId, capacity: Coin) -> bool:
        ch = self.channel
        if ch.status is not ChannelStatus.OPEN or hub not in self.users:
            return False
        if merge_id in ch.mergeSet or ch.balanceC[hub] < capacity:
            return False
        ch.balanceC[hub] -= capacity
        ch.mergeSet.add(merge_id)
        self.adjustments.append({hub: -capacity})
        self._log("chan-merge", merge=merge_id, hub=hub, capacity=capacity, epoch=self.epoch)
        return True

    def can_merge(self, hub: PartyId, capacity: Coin) -> bool:
        ch = self.channel
        return ch.status is ChannelStatus.OPEN and hub in self.users and ch.balanceC[hub] >= capacity

    def chan_closeM(self, merge_id: str, balances: dict[PartyId, Coin]) -> bool:
        ch = self.channel
        if merge_id not in ch.mergeSet:
            return False
        ch.mergeSet.discard(merge_id)
        for p, v in balances.items():
            ch.balanceC[p] += v
        self.adjustments.append(dict(balances))
        self._log("chan-closeM", merge=merge_id, credit=dict(balances), epoch=self.epoch)
        return True

    # -- close -----------------------------------------------------------

    def on_close(self, sender: PartyId, state: SignedState) -> None:
        ch = self.channel
        if sender not in self.users or ch.status not in (ChannelStatus.OPEN, ChannelStatus.CLOSING):
            return
        if ch.mergeSet:
            self._log("closeC-rejected", reason="merged", caller=sender)
            self.host.emit(self.id, sender, "closeC-rejected", {"channel": self.id, "reason": "merged"})
            return
        if not self.valid_state(state):
            self._log("closeC-invalid", caller=sender, state=_jsonable_state(state))
            self.host.emit(self.id, sender, "closeC-rejected", {"channel": self.id, "reason": "invalid"})
            return
        pending = self.pending
        if pending is None:
            self.pending = PendingClose(
                self.id, sender, self.host.now, self.host.now + 4 * self.host.delta,
                ClosePhase.AWAITING_COUNTERPARTY, bestMsgC=state, submitted=[state],
            )
            ch.status = ChannelStatus.CLOSING
            self._log("closingC", caller=sender, state=_jsonable_state(state))
            self.host.emit(self.id, ch.other(sender), "closingC", {"channel": self.id})
            return
        if sender == pending.caller:
            return
        pending.submitted.append(state)
        if state.version > pending.bestMsgC.version:
            pending.bestMsgC = state
        self._log("closeC-response", party=sender, state=_jsonable_state(state))
        self._finalize()

    def tick(self) -> None:
        now = self.host.now
        ch = self.channel
        if ch.status is ChannelStatus.PROPOSED and self.open_deadline is not None \
                and now > self.open_deadline:
            amount = ch.balanceC[self.opener]
            ch.balanceC[self.opener] = 0
            self.host.ledger.add(self.opener, amount)
            ch.status = ChannelStatus.CLOSED
            self._log("not-opened", reason="timeout", refund=amount)
            self.host.emit(self.id, self.opener, "not-opened", {"channel": self.id})
        elif self.pending is not None and now >= self.pending.deadline:
            self._finalize()

    def _finalize(self) -> None:
        ch = self.channel
        pending = self.pending
        pending.phase = ClosePhase.FINALIZING
        payout = self.payout_of(pending.bestMsgC)
        for u in self.users:
            self.host.ledger.add(u, payout[u])
            ch.balanceC[u] = 0
        ch.status = ChannelStatus.CLOSED
        self.pending = None
        self._log("closedC", version=pending.bestMsgC.version, payout=payout)
        for u in self.users:
            self.host.emit(self.id, u, "closedC", {"channel": self.id, "payout": payout})


# ---------------------------------------------------------------------------
# Merge contract
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MergeProposal:
    """The ``(φ, t)`` message every merge participant signs."""

    merge_id: str
    hub: PartyId
    round: int
    edges: tuple[tuple[PartyId, str, Coin], ...]  # (user, channel id, capacity)

    def message(self) -> bytes:
        return encode("merge", self.merge_id, self.hub, self.round, self.edges)

    @property
    def users(self) -> list[PartyId]:
        return [u for u, _, _ in self.edges]

    def capacities(self) -> dict[PartyId, Coin]:
        return {u: c for u, _, c in self.edges}

    def to_json(self) -> dict:
        return {"merge": self.merge_id, "hub": self.hub, "t": self.round,
                "edges": [list(e) for e in self.edges]}


def edge_subject(merge_id: str, user: PartyId) -> str:
    return f"{merge_id}/{user}"


class MergeContract:
    """On-chain record of one merge (a hub-centred pool of edges).

    The contract only learns the off-chain capacity vector when an edge is
    closed. It holds ``escrow`` coins; every edge payout is taken from the
    escrow so the pool can never pay out more than was pledged.
    """

    def __init__(self, host, merge_id: str, hub: PartyId) -> None:
        self.host = host
        self.id = merge_id
        self.hub = hub
        self.merge = Merge(merge_id, hub, [], [])
        self.proposal: MergeProposal | None = None
        self.initial_caps: dict[PartyId, Coin] = {}
        self.channel_of: dict[PartyId, str] = {}
        self.escrow: Coin = 0
        self.closed_users: set[PartyId] = set()
        self.pending: dict[PartyId, PendingClose] = {}
        self.finalized_versionM = 0

    def _log(self, event: str, **payload: Any) -> None:
        self.host.log(self.id, event, payload)

    def participants(self) -> list[PartyId]:
        return [self.hub] + list(self.merge.users)

    def _broadcast(self, kind: str, payload: dict, to: Iterable[PartyId] | None = None) -> None:
        for p in (self.participants() if to is None else to):
            self.host.emit(self.id, p, kind, payload)

    # -- validation ------------------------------------------------------

    def baseline_M(self) -> SignedState:
        return SignedState.build(StateKind.MSG_M, self.id, 0, self.initial_caps)

    def baseline_E(self, user: PartyId) -> SignedState:
        cap = self.initial_caps[user]
        return SignedState.build(StateKind.MSG_E, edge_subject(self.id, user), 0,
                                 {self.hub: cap, user: 0})

    def valid_M(self, state: SignedState) -> bool:
        if state.kind is not StateKind.MSG_M or state.subject != self.id:
            return False
        caps = state.values
        if set(caps) != set(self.initial_caps) or any(v < 0 for v in caps.values()):
            return False
        if sum(caps.values()) != sum(self.initial_caps.values()):
            return False
        if state.version == 0:
            return state.same_content(self.baseline_M())
        if not self.host.directory.valid(state, [self.hub]):
            return False
        return len(state.signers() - {self.hub}) >= 1

    def valid_E(self, state: SignedState, user: PartyId) -> bool:
        if state.kind is not StateKind.MSG_E or state.subject != edge_subject(self.id, user):
            return False
        bal = state.values
        if set(bal) != {self.hub, user} or any(v < 0 for v in bal.values()):
            return False
        if state.version == 0:
            return state.same_content(self.baseline_E(user))
        return self.host.directory.valid(state, [self.hub, user])

    # -- dispatch --------------------------------------------------------

    def handle(self, sender: PartyId, kind: str, payload: dict) -> None:
        if kind == "merge":
            self.on_merge(sender, payload["proposal"], payload["sigs"])
        elif kind == "closeM":
            self.on_close(sender, payload["user"], payload["msgM"], payload["msgE"])
        elif kind == "timeout":
            self.on_timeout(sender, payload["user"])
        elif kind == "closeM-challenge":
            self.on_challenge(sender, payload["user"], payload["msgM"])

    def on_merge(self, sender: PartyId, proposal: MergeProposal, sigs: dict) -> None:
        if self.merge.status is not MergeStatus.PROPOSED or sender != self.hub:
            return
        users = proposal.users
        notify = [self.hub] + users
        if proposal.merge_id != self.id or proposal.hub != self.hub or len(set(users)) != len(users) \
                or self.hub in users:
            self._log("merge-rejected", reason="malformed")
            self._broadcast("not-merged", {"merge": self.id}, notify)
            return
        msg = proposal.message()
        directory: KeyDirectory = self.host.directory
        for p in notify:
            sig = sigs.get(p)
            pk = directory.public.get(p)
            if sig is None or pk is None or sig.signer != p or not directory.scheme.verify(pk, msg, sig):
                self._log("merge-rejected", reason="signature", party=p)
                self._broadcast("not-merged", {"merge": self.id}, notify)
                return
        for user, cid, cap in proposal.edges:
            chan = self.host.channel_contract(cid)
            if chan is None or set(chan.users) != {self.hub, user} or cap < 0 \
                    or not chan.can_merge(self.hub, cap):
                self._log("not-merged", reason="capacity", channel=cid)
                self._broadcast("not-merged", {"merge": self.id}, notify)
                return
        for user, cid, cap in proposal.edges:
            assert self.host.channel_contract(cid).chan_merge(self.id, self.hub, cap)
            self.merge.edges.append(Edge.fresh(cid, self.hub, user, cap))
            self.merge.users.append(user)
            self.channel_of[user] = cid
        self.proposal = proposal
        self.initial_caps = proposal.capacities()
        self.escrow = sum(self.initial_caps.values())
        self.merge.status = MergeStatus.ACTIVE
        self._log("merged", capacities=self.initial_caps, pooled=self.escrow)
        self._broadcast("merged", {"merge": self.id, "proposal": proposal})

    # -- close merge -----------------------------------------------------

    def on_close(self, sender: PartyId, user: PartyId, msgM: SignedState, msgE: SignedState) -> None:
        if self.merge.status is not MergeStatus.ACTIVE or user not in self.merge.users:
            return
        if sender not in (self.hub, user):
            return
        if not (self.valid_M(msgM) and self.valid_E(msgE, user)):
            self._log("closeM-invalid", caller=sender, user=user)
            self.host.emit(self.id, sender, "closeM-rejected", {"merge": self.id, "user": user})
            return
        pending = self.pending.get(user)
        now = self.host.now
        if pending is None:
            self.pending[user] = PendingClose(
                self.id, sender, now, now + self.host.delta, ClosePhase.AWAITING_COUNTERPARTY,
                bestMsgM=msgM, bestMsgE=msgE, submitted=[msgM],
            )
            self._log("closingM", caller=sender, user=user, versionM=msgM.version,
                      versionE=msgE.version)
            other = user if sender == self.hub else self.hub
            self.host.emit(self.id, other, "closingM", {"merge": self.id, "user": user})
            return
        if pending.phase is not ClosePhase.AWAITING_COUNTERPARTY or sender == pending.caller:
            return
        if now > pending.deadline:
            return
        pending.submitted.append(msgM)
        # the merge and edge evidence are ranked independently
        if msgM.version > pending.bestMsgM.version:
            pending.bestMsgM = msgM
        if msgE.version > pending.bestMsgE.version:
            pending.bestMsgE = msgE
        self._log("closeM-response", party=sender, user=user, versionM=msgM.version,
                  versionE=msgE.version)
        self._open_challenge(user)

    def on_timeout(self, sender: PartyId, user: PartyId) -> None:
        pending = self.pending.get(user)
        if pending is None or sender != pending.caller:
            return
        if pending.phase is ClosePhase.AWAITING_COUNTERPARTY and self.host.now > pending.deadline:
            self._log("closeM-timeout", user=user)
            self._open_challenge(user)

    def _open_challenge(self, user: PartyId) -> None:
        pending = self.pending[user]
        pending.phase = ClosePhase.CHALLENGE_WINDOW
        pending.deadline = self.host.now + self.host.delta
        self._log("closeM-check", user=user, versionM=pending.bestMsgM.version,
                  deadline=pending.deadline)
        self._broadcast("closeM-check", {"merge": self.id, "user": user,
                                         "versionM": pending.bestMsgM.version})

    def on_challenge(self, sender: PartyId, user: PartyId, msgM: SignedState) -> None:
        pending = self.pending.get(user)
        if pending is None or pending.phase is not ClosePhase.CHALLENGE_WINDOW:
            return
        if sender not in self.participants() or self.host.now > pending.deadline:
            return
        if not self.valid_M(msgM):
            self._log("closeM-challenge-invalid", party=sender, user=user)
            return
        pending.submitted.append(msgM)
        if msgM.version > pending.bestMsgM.version:
            pending.bestMsgM = msgM
            self._log("closeM-challenge", party=sender, user=user, versionM=msgM.version)

    def tick(self) -> None:
        now = self.host.now
        for user in sorted(self.pending):
            pending = self.pending[user]
            if pending.phase is ClosePhase.CHALLENGE_WINDOW and now >= pending.deadline:
                self._finalize(user)
            elif pending.phase is ClosePhase.AWAITING_COUNTERPARTY \
                    and now >= pending.started + 3 * self.host.delta:
                # neither edge party advanced the close; proceed on the stored state
                self._open_challenge(user)

    def _finalize(self, user: PartyId) -> None:
        pending = self.pending.pop(user)
        pending.phase = ClosePhase.FINALIZING
        caps = pending.bestMsgM.values
        others = [u for u in self.merge.users if u != user]
        # whatever the winning vector leaves unexplained is absorbed on the hub side
        cap = self.escrow - sum(caps[u] for u in others)
        cap = max(0, min(cap, self.escrow))
        bal = pending.bestMsgE.values
        user_bal = min(bal[user], cap)
        credit = {self.hub: cap - user_bal, user: user_bal}
        self.escrow -= cap

        self.merge.users.remove(user)
        self.merge.edges = [e for e in self.merge.edges if e.user != user]
        self._rebase(caps)
        self.finalized_versionM = max(self.finalized_versionM, pending.bestMsgM.version)
        self.closed_users.add(user)
        chan = self.host.channel_contract(self.channel_of[user])
        chan.chan_closeM(self.id, credit)
        self._log("closedM", user=user, versionM=pending.bestMsgM.version,
                  versionE=pending.bestMsgE.version, capacity=cap, credit=credit)
        self._broadcast("closedM", {"merge": self.id, "user": user, "credit": credit,
                                    "versionM": pending.bestMsgM.version},
                        [self.hub, user] + self.merge.users)
        if not self.merge.edges:
            self.merge.status = MergeStatus.CLOSED
            self._log("merge-closed")

    def _rebase(self, caps: dict[PartyId, Coin]) -> None:
        """Refresh the on-chain view of the remaining edges so it sums to escrow."""
        left = self.escrow
        for e in self.merge.edges:
            c = min(caps.get(e.user, 0), left)
            e.capacity = c
            e.balanceE = {e.hub: c, e.user: 0}
            left -= c
        if self.merge.edges and left:
            e = self.merge.edges[0]
            e.capacity += left
            e.balanceE[e.hub] += left
