"""Round-synchronous world: parties, contracts, a message bus and a ledger.

Each round runs in a fixed order so traces are reproducible:

1. deliver every due message (sender, recipient, seq order), repeating
   while contract notifications cascade within the round;
2. inject the environment commands scheduled for this round;
3. tick contracts (sorted by id) and deliver their notifications;
4. tick parties (response timeouts, broadcast verdicts);
5. audit views against contract state.

Coin conservation and non-negativity are audited after every delivery.
"""
from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass
from typing import IO, Any, Iterable

from ..contracts import DEFAULT_DELTA, ChannelContract, MergeContract
from ..core import (
    ChannelStatus,
    Coin,
    InvariantViolation,
    KeyDirectory,
    Ledger,
    MergeStatus,
    PartyId,
)
from .behaviors import HONEST, Behavior
from .messages import RoundMessage, jsonable
from .party import Party

log = logging.getLogger(__name__)

CONTRACT = "contract:"


@dataclass
class LogEntry:
    round: int
    source: str
    event: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps({"round": self.round, "source": self.source, "event": self.event,
                           "payload": jsonable(self.payload)}, sort_keys=True)


class World:
    def __init__(self, delta: int = DEFAULT_DELTA, tx_delay: int | None = None,
                 scheme=None, trace_messages: bool = False, sink: IO[str] | None = None,
                 tick_events: bool = False) -> None:
        if delta < 1:
            raise ValueError("delta must be at least 1")
        self._delta = delta
        self.tx_delay = delta if tx_delay is None else tx_delay
        if not 1 <= self.tx_delay <= delta:
            raise ValueError("transaction delay must lie in [1, delta]")
        self._now = 0
        self.ledger = Ledger()
        self.directory = KeyDirectory(scheme)
        self.parties: dict[PartyId, Party] = {}
        self.contracts: dict[str, ChannelContract | MergeContract] = {}
        self.bus: list[RoundMessage] = []
        self.schedule: list[tuple[int, int, PartyId, str, dict]] = []
        self.events: list[LogEntry] = []
        self.trace_messages = trace_messages
        self.tick_events = tick_events
        self.sink = sink
        self._seq = 0
        self._initial_total: Coin = 0

    # -- host interface used by contracts -------------------------------

    @property
    def now(self) -> int:
        return self._now

    @property
    def delta(self) -> int:
        return self._delta

    def emit(self, contract_id: str, recipient: PartyId, kind: str, payload: dict) -> None:
        self._push(self._now, CONTRACT + contract_id, recipient, kind, payload)

    def log(self, contract_id: str, event: str, payload: dict) -> None:
        self._record(CONTRACT + contract_id, event, payload)

    def channel_contract(self, channel_id: str) -> ChannelContract | None:
        c = self.contracts.get(channel_id)
        return c if isinstance(c, ChannelContract) else None

    def merge_contract(self, merge_id: str) -> MergeContract | None:
        c = self.contracts.get(merge_id)
        return c if isinstance(c, MergeContract) else None

    # -- setup -----------------------------------------------------------

    def add_party(self, pid: PartyId, funds: Coin = 0, behavior: Behavior | str | None = HONEST) -> Party:
        if pid in self.parties:
            raise ValueError(f"duplicate party {pid!r}")
        if pid.startswith(CONTRACT):
            raise ValueError(f"reserved party id {pid!r}")
        if not isinstance(behavior, Behavior):
            behavior = Behavior.parse(behavior)
        keys = self.directory.register(pid)
        party = Party(self, pid, keys, behavior)
        self.parties[pid] = party
        if funds:
            self.ledger.add(pid, funds)
            self._initial_total += funds
        return party

    def at(self, round_: int, party: PartyId, op: str, **args: Any) -> None:
        """Schedule an environment command."""
        if party not in self.parties:
            raise ValueError(f"unknown party {party!r}")
        if round_ < self._now:
            raise ValueError(f"round {round_} is in the past")
        self.schedule.append((round_, len(self.schedule), party, op, args))
        self.schedule.sort()

    # -- party interface -------------------------------------------------

    def send(self, sender: PartyId, recipient: PartyId, kind: str, payload: dict) -> None:
        if recipient not in self.parties:
            return
        self._push(self._now + 1, sender, recipient, kind, payload)

    def submit(self, sender: PartyId, contract_id: str, kind: str, payload: dict) -> None:
        self._push(self._now + self.tx_delay, sender, CONTRACT + contract_id, kind, payload)

    def create_channel_contract(self, cid: str, opener: PartyId, peer: PartyId,
                                fund: Coin, peer_fund: Coin) -> bool:
        if cid in self.contracts or peer not in self.parties or peer == opener:
            return False
        if fund < 0 or peer_fund < 0:
            return False
        self.contracts[cid] = ChannelContract(self, cid, opener, peer, fund, peer_fund)
        self._record(CONTRACT + cid, "deployed", {"opener": opener, "peer": peer})
        return True

    def create_merge_contract(self, mid: str, hub: PartyId) -> bool:
        existing = self.contracts.get(mid)
        if existing is not None:
            return isinstance(existing, MergeContract) and existing.hub == hub
        self.contracts[mid] = MergeContract(self, mid, hub)
        self._record(CONTRACT + mid, "deployed", {"hub": hub})
        return True

    def merge_hub(self, mid: str) -> PartyId | None:
        c = self.merge_contract(mid)
        return c.hub if c else None

    def output(self, party: PartyId, event: str, payload: dict) -> None:
        self._record(party, event, payload)

    # -- internals -------------------------------------------------------

    def _push(self, when: int, sender: str, recipient: str, kind: str, payload: dict) -> None:
        self._seq += 1
        heapq.heappush(self.bus, RoundMessage(when, sender, recipient, self._seq, self._now,
                                              kind, payload))

    def _record(self, source: str, event: str, payload: dict) -> None:
        entry = LogEntry(self._now, source, event, payload)
        self.events.append(entry)
        if self.sink is not None:
            self.sink.write(entry.to_json() + "\n")
        log.debug("r%d %s %s", self._now, source, event)

    def _due(self) -> list[RoundMessage]:
        out = []
        while self.bus and self.bus[0].deliverRound <= self._now:
            out.append(heapq.heappop(self.bus))
        return sorted(out, key=RoundMessage.sort_key)

    def _deliver_all(self) -> None:
        while True:
            batch = self._due()
            if not batch:
                return
            for msg in batch:
                self._deliver(msg)
                self.audit_coins()

    def _deliver(self, msg: RoundMessage) -> None:
        if self.trace_messages:
            self._record(msg.sender, "msg:" + msg.kind, {"to": msg.recipient, **msg.payload})
        if msg.recipient.startswith(CONTRACT):
            contract = self.contracts.get(msg.recipient[len(CONTRACT):])
            if contract is not None:
                contract.handle(msg.sender, msg.kind, msg.payload)
            return
        party = self.parties[msg.recipient]
        from_contract = msg.sender.startswith(CONTRACT)
        sender = msg.sender[len(CONTRACT):] if from_contract else msg.sender
        party.receive(sender, msg.kind, msg.payload, from_contract)

    # -- round loop ------------------------------------------------------

    def run_round(self) -> None:
        if self.tick_events:
            self._record("world", "round", {})
        self._deliver_all()
        while self.schedule and self.schedule[0][0] <= self._now:
            _, _, pid, op, args = self.schedule.pop(0)
            self._record(pid, "command:" + op, args)
            self.parties[pid].command(op, dict(args))
            self._deliver_all()
        for cid in sorted(self.contracts):
            self.contracts[cid].tick()
            self._deliver_all()
        for pid in sorted(self.parties):
            self.parties[pid].tick()
            self._deliver_all()
        self.audit_coins()
        self.audit_views()
        self._now += 1

    def idle(self) -> bool:
        if self.bus or self.schedule:
            return False
        for p in self.parties.values():
            if p.pending or p.broadcasts or p.queue:
                return False
        for c in self.contracts.values():
            if isinstance(c, ChannelContract):
                if c.pending is not None:
                    return False
                if c.channel.status is ChannelStatus.PROPOSED and c.open_deadline is not None:
                    return False
            elif c.pending:
                return False
        return True

    def run_until_idle(self, max_rounds: int = 100_000) -> int:
        start = self._now
        while not self.idle():
            if self._now - start >= max_rounds:
                raise RuntimeError(f"world still busy after {max_rounds} rounds")
            self.run_round()
        return self._now

    def run_until(self, round_: int) -> None:
        while self._now <= round_:
            self.run_round()

    # -- audits ----------------------------------------------------------

    def coins_in_system(self) -> Coin:
        total = self.ledger.total()
        for c in self.contracts.values():
            if isinstance(c, ChannelContract):
                total += c.channel.total()
            else:
                total += c.escrow
        return total

    def audit_coins(self) -> None:
        total = self.coins_in_system()
        if total != self._initial_total:
            raise InvariantViolation(
                f"round {self._now}: {total} coins in system, expected {self._initial_total}")
        negative = [p for p in self.ledger.balances if self.ledger.balance(p) < 0]
        for c in self.contracts.values():
            if isinstance(c, ChannelContract):
                negative += [f"{c.id}:{u}" for u, v in c.channel.balanceC.items() if v < 0]
            elif c.escrow < 0:
                negative.append(c.id)
        if negative:
            raise InvariantViolation(f"round {self._now}: negative balances {negative}")

    def audit_views(self) -> None:
        """Honest views must agree with what the contracts would pay out."""
        problems = []
        for p in self.parties.values():
            if not p.honest:
                continue
            for v in p.channels.values():
                c = self.channel_contract(v.id)
                if c is None or v.status != "open" or c.channel.status is not ChannelStatus.OPEN:
                    continue
                if v.total() != c.channel.total():
                    problems.append(f"{p.id}/{v.id}: view total {v.total()} != {c.channel.total()}")
                if min(v.balances.values()) < 0:
                    problems.append(f"{p.id}/{v.id}: negative view balance")
            for m in p.merges.values():
                for e in m.edges.values():
                    if sum(e.balances.values()) != e.capacity or min(e.balances.values()) < 0:
                        problems.append(f"{p.id}/{m.id}/{e.user}: edge balances off")
                c = self.merge_contract(m.id)
                if m.hub == p.id and c is not None and c.merge.status is MergeStatus.ACTIVE \
                        and not c.pending and m.pooled() != c.escrow:
                    problems.append(f"{p.id}/{m.id}: pooled {m.pooled()} != escrow {c.escrow}")
        if problems:
            raise InvariantViolation(f"round {self._now}: " + "; ".join(problems))

    # -- inspection helpers ---------------------------------------------

    def completions(self, party: PartyId | None = None) -> list:
        parties: Iterable[Party] = (
            self.parties.values() if party is None else [self.parties[party]])
        out = []
        for p in parties:
            out.extend((p.id, c) for c in p.completions)
        return out

    def events_of(self, event: str) -> list[LogEntry]:
        return [e for e in self.events if e.event == event]
