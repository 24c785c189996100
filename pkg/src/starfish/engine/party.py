"""Party-side state machines for the seven Starfish procedures.

Each party keeps its own view of channels, merges and edges and the
latest signed states that back them. Environment commands start a
procedure; protocol messages and contract notifications advance it;
``tick`` closes procedures whose response window has passed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from ..contracts import MergeProposal, edge_subject
from ..core import (
    Coin,
    KeyPair,
    PartyId,
    Signature,
    SignedState,
    StateKind,
)
from .behaviors import HONEST, Behavior, Deviation
from .broadcast import ACCEPT, REJECT, AtomicBroadcastInstance, digest

if TYPE_CHECKING:
    from .world import World


@dataclass
class ChannelView:
    id: str
    users: tuple[PartyId, PartyId]
    balances: dict[PartyId, Coin]
    funding: dict[PartyId, Coin]
    version: int = 0
    epoch: int = 0
    status: str = "proposed"
    mergeSet: set[str] = field(default_factory=set)
    latest: SignedState | None = None
    history: list[SignedState] = field(default_factory=list)

    def other(self, party: PartyId) -> PartyId:
        a, b = self.users
        return b if party == a else a

    def total(self) -> Coin:
        return sum(self.balances.values())


@dataclass
class EdgeView:
    user: PartyId
    hub: PartyId
    channel_id: str
    capacity: Coin
    balances: dict[PartyId, Coin]
    version: int = 0
    latest: SignedState | None = None
    history: list[SignedState] = field(default_factory=list)


@dataclass
class MergeView:
    id: str
    hub: PartyId
    users: list[PartyId]
    caps: dict[PartyId, Coin]
    versionM: int = 0
    latestM: SignedState | None = None
    historyM: list[SignedState] = field(default_factory=list)
    edges: dict[PartyId, EdgeView] = field(default_factory=dict)
    status: str = "active"

    def pooled(self) -> Coin:
        return sum(self.caps[u] for u in self.users)


@dataclass
class Pending:
    op: str
    key: tuple
    start: int
    data: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Completion:
    op: str
    key: tuple
    start: int
    end: int
    result: str

    @property
    def rounds(self) -> int:
        return self.end - self.start


class Party:
    def __init__(self, world: "World", pid: PartyId, keys: KeyPair, behavior: Behavior = HONEST):
        self.world = world
        self.id = pid
        self.keys = keys
        self.script = behavior
        self.channels: dict[str, ChannelView] = {}
        self.merges: dict[str, MergeView] = {}
        self.pending: dict[tuple, Pending] = {}
        self.queue: list[tuple[str, dict]] = []
        self.completions: list[Completion] = []
        self.signed_merges: set[str] = set()
        self.broadcasts: dict[str, AtomicBroadcastInstance] = {}
        self.sent_merge_requests: list[tuple[PartyId, dict]] = []

    def __repr__(self) -> str:
        return f"Party({self.id}, {'/'.join(self.script.names())})"

    @property
    def behavior(self) -> Behavior:
        return self.script.at(self.world.now)

    @property
    def honest(self) -> bool:
        return self.script.honest

    # ------------------------------------------------------------------
    # plumbing
    # ------------------------------------------------------------------

    def _send(self, to: PartyId, kind: str, **payload: Any) -> None:
        self.world.send(self.id, to, kind, payload)

    def _submit(self, contract_id: str, kind: str, **payload: Any) -> None:
        self.world.submit(self.id, contract_id, kind, payload)

    def _sign(self, state: SignedState) -> SignedState:
        return self.world.directory.sign(self.keys, state)

    def _valid(self, state: SignedState, required) -> bool:
        return self.world.directory.valid(state, required)

    def _complete(self, key: tuple, result: str) -> None:
        p = self.pending.pop(key, None)
        if p is None:
            return
        self.completions.append(Completion(p.op, key, p.start, self.world.now, result))
        self.world.output(self.id, result, {"op": p.op, "key": list(key), "start": p.start})
        self._drain_queue()

    def _output(self, event: str, **payload: Any) -> None:
        self.world.output(self.id, event, payload)

    def _busy(self, keys) -> bool:
        return any(k in self.pending for k in keys)

    def _drain_queue(self) -> None:
        queued, self.queue = self.queue, []
        for op, args in queued:
            self.command(op, args)

    def _silent(self) -> bool:
        return Deviation.SILENT in self.behavior

    # ------------------------------------------------------------------
    # environment commands
    # ------------------------------------------------------------------

    def command(self, op: str, args: dict) -> None:
        if self._silent():
            return
        handler = getattr(self, f"cmd_{op}", None)
        if handler is None:
            raise ValueError(f"unknown operation {op!r}")
        keys = self._keys_for(op, args)
        if self._busy(keys):
            self.queue.append((op, args))
            return
        handler(**args)

    def _keys_for(self, op: str, args: dict) -> list[tuple]:
        if op in ("open_channel", "update_channel", "close_channel"):
            return [("chan", args["channel"])]
        if op == "update_edge":
            user = args.get("user", self.id)
            return [("edge", args["merge"], user)]
        if op == "update_merge":
            return [("merge", args["merge"]), ("edge", args["merge"], args["src"]),
                    ("edge", args["merge"], args["dst"])]
        if op == "close_merge":
            return [("merge", args["merge"]), ("edge", args["merge"], args["user"])]
        if op == "open_merge":
            return [("merge", args["merge"])]
        return []

    # -- (A) open channel ------------------------------------------------

    def cmd_open_channel(self, channel: str, peer: PartyId, fund: Coin, peer_fund: Coin = 0) -> None:
        key = ("chan", channel)
        self.pending[key] = Pending("open_channel", key, self.world.now)
        if self.world.ledger.balance(self.id) < fund or channel in self.channels:
            self._complete(key, "not-opened")
            return
        if not self.world.create_channel_contract(channel, self.id, peer, fund, peer_fund):
            self._complete(key, "not-opened")
            return
        funding = {self.id: fund, peer: peer_fund}
        self.channels[channel] = ChannelView(channel, (self.id, peer), dict(funding), funding)
        self._submit(channel, "open")

    def on_opening(self, contract: str, channel: str, funding: dict) -> None:
        if self._silent() or Deviation.WITHHOLD in self.behavior:
            return
        users = tuple(funding)
        self.channels[channel] = ChannelView(channel, users, dict(funding), dict(funding))
        self._submit(channel, "open")

    def on_opened(self, contract: str, channel: str) -> None:
        view = self.channels[channel]
        view.status = "open"
        view.latest = SignedState.build(StateKind.MSG_C, channel, 0, view.funding)
        view.history.append(view.latest)
        self._complete(("chan", channel), "opened")

    def on_not_opened(self, contract: str, channel: str) -> None:
        view = self.channels.pop(channel, None)
        if view is not None:
            view.status = "closed"
        self._complete(("chan", channel), "not-opened")

    # -- (B) update channel ----------------------------------------------

    def cmd_update_channel(self, channel: str, pay: Coin | None = None, theta: dict | None = None) -> None:
        key = ("chan", channel)
        self.pending[key] = p = Pending("update_channel", key, self.world.now)
        view = self.channels.get(channel)
        if view is None or view.status != "open":
            self._complete(key, "not-updatedC")
            return
        other = view.other(self.id)
        delta = theta if theta is not None else {self.id: -pay, other: pay}
        new = {u: view.balances[u] + delta.get(u, 0) for u in view.users}
        if sum(delta.values()) != 0 or (min(new.values()) < 0 and Deviation.OVERDRAFT not in self.behavior):
            self._complete(key, "not-updatedC")
            return
        msg = self._sign(SignedState.build(StateKind.MSG_C, channel, view.version + 1, new, view.epoch))
        p.data["msgC"] = msg
        self._send(other, "updateC", channel=channel, msgC=msg)

    def on_updateC(self, sender: PartyId, channel: str, msgC: SignedState) -> None:
        view = self.channels.get(channel)
        if view is None or view.status != "open" or self._silent():
            return
        if Deviation.WITHHOLD in self.behavior:
            return
        own = self.pending.get(("chan", channel))
        if own is not None:
            # concurrent proposals: the lower party id wins
            if own.op == "update_channel" and sender < self.id:
                self._complete(own.key, "not-updatedC")
            else:
                return
        if msgC.version != view.version + 1 or msgC.epoch != view.epoch:
            return
        new = msgC.values
        if set(new) != set(view.users) or min(new.values()) < 0 or sum(new.values()) != view.total():
            return
        if not self._valid(msgC, [sender]):
            return
        signed = self._sign(msgC)
        self._commit_channel(view, signed)
        self._output("updatedC", channel=channel, version=signed.version)
        self._send(sender, "updateC-ok", channel=channel, msgC=signed)

    def on_updateC_ok(self, sender: PartyId, channel: str, msgC: SignedState) -> None:
        key = ("chan", channel)
        p = self.pending.get(key)
        if p is None or p.op != "update_channel" or "msgC" not in p.data:
            return
        if not msgC.same_content(p.data["msgC"]):
            return
        view = self.channels[channel]
        if not self._valid(msgC, view.users):
            return
        self._commit_channel(view, msgC)
        self._complete(key, "updatedC")

    def _commit_channel(self, view: ChannelView, msgC: SignedState) -> None:
        view.balances = msgC.values
        view.version = msgC.version
        view.latest = msgC
        view.history.append(msgC)

    # -- (C) open merge --------------------------------------------------

    def cmd_open_merge(self, merge: str, channels: list[str], capacities: list[Coin]) -> None:
        key = ("merge", merge)
        self.pending[key] = p = Pending("open_merge", key, self.world.now)
        edges = []
        for cid, cap in zip(channels, capacities):
            view = self.channels.get(cid)
            if view is None or view.status != "open" or merge in view.mergeSet:
                self._complete(key, "not-merged")
                return
            if view.balances[self.id] < cap and Deviation.OVERDRAFT not in self.behavior:
                self._complete(key, "not-merged")
                return
            edges.append((view.other(self.id), cid, cap))
        if len(channels) != len(capacities) or not edges or merge in self.merges:
            self._complete(key, "not-merged")
            return
        proposal = MergeProposal(merge, self.id, self.world.now, tuple(edges))
        sig = self.world.directory.scheme.sign(self.keys, proposal.message())
        p.data.update(proposal=proposal, sigs={self.id: sig})
        for user in proposal.users:
            payload = {"merge": merge, "proposal": proposal, "sig": sig}
            self.sent_merge_requests.append((user, payload))
            self._send(user, "merge-req", **payload)

    def cmd_replay_merge(self, merge: str) -> None:
        """Re-send previously issued merge requests unchanged."""
        for user, payload in self.sent_merge_requests:
            if payload["merge"] == merge:
                self._send(user, "merge-req", **payload)

    def on_merge_req(self, sender: PartyId, merge: str, proposal: MergeProposal, sig: Signature) -> None:
        if self._silent() or Deviation.WITHHOLD in self.behavior:
            return
        if sender != proposal.hub or proposal.merge_id != merge:
            return
        if proposal.round != self.world.now - 1 or merge in self.signed_merges:
            self._output("merge-replay-rejected", merge=merge, t=proposal.round)
            return
        directory = self.world.directory
        pk = directory.public.get(sender)
        if pk is None or sig.signer != sender or not directory.scheme.verify(pk, proposal.message(), sig):
            return
        mine = [(cid, cap) for u, cid, cap in proposal.edges if u == self.id]
        if len(mine) != 1:
            return
        cid, cap = mine[0]
        view = self.channels.get(cid)
        if view is None or view.status != "open" or set(view.users) != {self.id, sender}:
            return
        if view.balances[sender] < cap:
            return
        self.signed_merges.add(merge)
        own = self.world.directory.scheme.sign(self.keys, proposal.message())
        self._send(sender, "merge-ok", merge=merge, sig=own)

    def on_merge_ok(self, sender: PartyId, merge: str, sig: Signature) -> None:
        key = ("merge", merge)
        p = self.pending.get(key)
        if p is None or p.op != "open_merge" or "submitted" in p.data:
            return
        proposal: MergeProposal = p.data["proposal"]
        if sender not in proposal.users:
            return
        p.data["sigs"][sender] = sig
        if set(p.data["sigs"]) >= set(proposal.users) | {self.id}:
            p.data["submitted"] = True
            self.world.create_merge_contract(merge, self.id)
            self._submit(merge, "merge", proposal=proposal, sigs=dict(p.data["sigs"]))

    def on_merged(self, contract: str, merge: str, proposal: MergeProposal) -> None:
        caps = proposal.capacities()
        base_m = SignedState.build(StateKind.MSG_M, merge, 0, caps)
        mview = MergeView(merge, proposal.hub, list(proposal.users), dict(caps), 0, base_m, [base_m])
        for user, cid, cap in proposal.edges:
            if self.id not in (proposal.hub, user):
                continue
            base_e = SignedState.build(StateKind.MSG_E, edge_subject(merge, user), 0,
                                       {proposal.hub: cap, user: 0})
            mview.edges[user] = EdgeView(user, proposal.hub, cid, cap,
                                         {proposal.hub: cap, user: 0}, 0, base_e, [base_e])
            cview = self.channels[cid]
            cview.balances[proposal.hub] -= cap
            cview.epoch += 1
            cview.mergeSet.add(merge)
        self.merges[merge] = mview
        if self.id == proposal.hub:
            self._complete(("merge", merge), "merged")
        else:
            self._output("merged", merge=merge)

    def on_not_merged(self, contract: str, merge: str) -> None:
        if self.id == self.world.merge_hub(merge):
            self._complete(("merge", merge), "not-merged")
        else:
            self._output("not-merged", merge=merge)

    # -- (D) update edge -------------------------------------------------

    def cmd_update_edge(self, merge: str, pay: Coin, user: PartyId | None = None) -> None:
        user = user or self.id
        key = ("edge", merge, user)
        self.pending[key] = p = Pending("update_edge", key, self.world.now)
        mview = self.merges.get(merge)
        edge = mview.edges.get(user) if mview else None
        if edge is None or self.id not in (edge.hub, edge.user):
            self._complete(key, "not-updatedE")
            return
        other = edge.user if self.id == edge.hub else edge.hub
        new = {self.id: edge.balances[self.id] - pay, other: edge.balances[other] + pay}
        if min(new.values()) < 0 and Deviation.OVERDRAFT not in self.behavior:
            self._complete(key, "not-updatedE")
            return
        msg = self._sign(SignedState.build(StateKind.MSG_E, edge_subject(merge, user),
                                           edge.version + 1, new))
        p.data["msgE"] = msg
        self._send(other, "updateE", merge=merge, user=user, msgE=msg)

    def on_updateE(self, sender: PartyId, merge: str, user: PartyId, msgE: SignedState) -> None:
        if self._silent() or Deviation.WITHHOLD in self.behavior:
            return
        mview = self.merges.get(merge)
        edge = mview.edges.get(user) if mview else None
        if edge is None or sender not in (edge.hub, edge.user) or sender == self.id:
            return
        own = self.pending.get(("edge", merge, user))
        if own is not None:
            if own.op == "update_edge" and sender < self.id:
                self._complete(own.key, "not-updatedE")
            else:
                return
        new = msgE.values
        if msgE.subject != edge_subject(merge, user) or msgE.version != edge.version + 1:
            return
        if set(new) != {edge.hub, edge.user} or min(new.values()) < 0 \
                or sum(new.values()) != edge.capacity:
            self._output("updateE-rejected", merge=merge, user=user, reason="overdraft")
            return
        if not self._valid(msgE, [sender]):
            return
        signed = self._sign(msgE)
        self._commit_edge(edge, signed)
        self._output("updatedE", merge=merge, user=user, version=signed.version)
        self._send(sender, "updateE-ok", merge=merge, user=user, msgE=signed)

    def on_updateE_ok(self, sender: PartyId, merge: str, user: PartyId, msgE: SignedState) -> None:
        key = ("edge", merge, user)
        p = self.pending.get(key)
        if p is None or p.op != "update_edge" or not msgE.same_content(p.data["msgE"]):
            return
        edge = self.merges[merge].edges[user]
        if not self._valid(msgE, [edge.hub, edge.user]):
            return
        self._commit_edge(edge, msgE)
        self._complete(key, "updatedE")

    def _commit_edge(self, edge: EdgeView, msgE: SignedState) -> None:
        edge.balances = msgE.values
        edge.capacity = sum(edge.balances.values())
        edge.version = msgE.version
        edge.latest = msgE
        edge.history.append(msgE)

    # -- (E) update merge ------------------------------------------------

    def _merge_update_states(self, mview: MergeView, src: PartyId, dst: PartyId, amount: Coin):
        caps = dict(mview.caps)
        caps[src] -= amount
        caps[dst] += amount
        msgM = SignedState.build(StateKind.MSG_M, mview.id, mview.versionM + 1, caps)
        msgEs = []
        for user, d in ((src, -amount), (dst, amount)):
            e = mview.edges[user]
            bal = dict(e.balances)
            bal[self.id] += d
            msgEs.append(SignedState.build(StateKind.MSG_E, edge_subject(mview.id, user),
                                           e.version + 1, bal))
        return msgM, msgEs

    def cmd_update_merge(self, merge: str, src: PartyId, dst: PartyId, amount: Coin) -> None:
        key = ("merge", merge)
        self.pending[key] = p = Pending("update_merge", key, self.world.now)
        mview = self.merges.get(merge)
        if mview is None or mview.hub != self.id or src == dst \
                or src not in mview.users or dst not in mview.users:
            self._complete(key, "not-updatedM")
            return
        msgM, msgEs = self._merge_update_states(mview, src, dst, amount)
        ok = min(msgM.values.values()) >= 0 and all(min(m.values.values()) >= 0 for m in msgEs)
        if not ok and Deviation.OVERDRAFT not in self.behavior:
            self._complete(key, "not-updatedM")
            return
        msgM = self._sign(msgM)
        msgEs = [self._sign(m) for m in msgEs]
        p.data.update(msgM=msgM, msgEs=msgEs, src=src, dst=dst, oks={})
        for user in (src, dst):
            self._send(user, "updateM", merge=merge, msgM=msgM, msgEs=msgEs)

    def _check_update(self, mview: MergeView, msgM: SignedState, msgEs: list[SignedState]) -> bool:
        """Validation shared by the edge users and every broadcast voter."""
        if msgM.subject != mview.id or msgM.version != mview.versionM + 1 or len(msgEs) != 2:
            return False
        new = msgM.values
        if set(new) != set(mview.caps) or min(new.values()) < 0:
            return False
        changed = [u for u in mview.caps if new[u] != mview.caps[u]]
        if len(changed) > 2 or sum(new.values()) != sum(mview.caps.values()):
            return False
        subjects = {edge_subject(mview.id, u): u for u in mview.users}
        touched = []
        for m in msgEs:
            user = subjects.get(m.subject)
            if user is None or sum(m.values.values()) != new[user] or min(m.values.values()) < 0:
                return False
            touched.append(user)
        if len(set(touched)) != 2 or not set(changed) <= set(touched):
            return False
        for m in msgEs:
            user = subjects[m.subject]
            edge = mview.edges.get(user)
            if edge is not None:
                if m.version != edge.version + 1 or m.values[user] != edge.balances[user]:
                    return False
        return True

    def on_updateM(self, sender: PartyId, merge: str, msgM: SignedState, msgEs: list[SignedState]) -> None:
        if self._silent() or Deviation.WITHHOLD in self.behavior:
            return
        mview = self.merges.get(merge)
        if mview is None or sender != mview.hub or self.id not in mview.edges:
            return
        if not self._check_update(mview, msgM, msgEs):
            return
        if not self._valid(msgM, [sender]) or not all(self._valid(m, [sender]) for m in msgEs):
            return
        self._send(sender, "updateM-ok", merge=merge, msgM=self._sign(msgM),
                   msgEs=[self._sign(m) for m in msgEs])

    def on_updateM_ok(self, sender: PartyId, merge: str, msgM: SignedState, msgEs: list[SignedState]) -> None:
        key = ("merge", merge)
        p = self.pending.get(key)
        if p is None or p.op != "update_merge" or sender not in (p.data["src"], p.data["dst"]):
            return
        if not msgM.same_content(p.data["msgM"]):
            return
        p.data["oks"][sender] = (msgM, msgEs)
        if set(p.data["oks"]) == {p.data["src"], p.data["dst"]}:
            self._start_broadcast(p)

    def _start_broadcast(self, p: Pending) -> None:
        merge = p.key[1]
        mview = self.merges[merge]
        msgM, msgEs = p.data["msgM"], list(p.data["msgEs"])
        for m, es in p.data["oks"].values():
            for sig in m.signatures:
                msgM = msgM.with_signature(sig)
            for i, e in enumerate(es):
                for sig in e.signatures:
                    msgEs[i] = msgEs[i].with_signature(sig)
        p.data["final"] = (msgM, msgEs)
        users = tuple(sorted(mview.users))
        inst = AtomicBroadcastInstance(self.id, users, self.world.now + 2)
        inst.payload = (msgM, msgEs)
        inst.own_digest = digest(msgM.message() + b"".join(m.message() for m in msgEs))
        self.broadcasts[merge] = inst
        equivocate = Deviation.EQUIVOCATE in self.behavior
        for i, user in enumerate(users):
            payload = (msgM, msgEs)
            if equivocate and i % 2 == 1:
                # a conflicting proposal: same version, capacities untouched
                alt = SignedState.build(StateKind.MSG_M, merge, msgM.version, mview.caps)
                payload = (self._sign(alt), msgEs)
            self._send(user, "ab-propose", merge=merge, msgM=payload[0], msgEs=payload[1])

    def on_ab_propose(self, sender: PartyId, merge: str, msgM: SignedState, msgEs: list[SignedState]) -> None:
        mview = self.merges.get(merge)
        if mview is None or sender != mview.hub or self._silent():
            return
        users = tuple(sorted(mview.users))
        inst = self.broadcasts.setdefault(merge, AtomicBroadcastInstance(sender, users, self.world.now + 1))
        inst.own_digest = digest(msgM.message() + b"".join(m.message() for m in msgEs))
        inst.payload = (msgM, msgEs)
        ok = self._check_update(mview, msgM, msgEs)
        touched = [u for u in users if any(m.subject == edge_subject(merge, u) for m in msgEs)]
        ok = ok and self._valid(msgM, [sender] + touched)
        ok = ok and all(self._valid(m, [sender, u]) for m, u in zip(msgEs, touched))
        vote = ACCEPT if ok and Deviation.WITHHOLD not in self.behavior else REJECT
        if vote == REJECT:
            self._output("updateM-pending", merge=merge, version=msgM.version)
        inst.record(self.id, vote, inst.own_digest)
        for p in [mview.hub] + list(users):
            if p != self.id:
                self._send(p, "ab-vote", merge=merge, vote=vote, digest=inst.own_digest)

    def on_ab_vote(self, sender: PartyId, merge: str, vote: str, digest: str) -> None:
        mview = self.merges.get(merge)
        if mview is None:
            return
        users = tuple(sorted(mview.users))
        inst = self.broadcasts.setdefault(merge, AtomicBroadcastInstance(mview.hub, users, self.world.now))
        inst.record(sender, vote, digest)

    def _settle_broadcast(self, merge: str, inst: AtomicBroadcastInstance) -> None:
        del self.broadcasts[merge]
        mview = self.merges.get(merge)
        ok = inst.verdict() and inst.payload is not None and mview is not None
        if ok:
            msgM, msgEs = inst.payload
            mview.caps = msgM.values
            mview.versionM = msgM.version
            mview.latestM = msgM
            mview.historyM.append(msgM)
            for m in msgEs:
                user = m.subject.split("/", 1)[1]
                if user in mview.edges:
                    self._commit_edge(mview.edges[user], m)
        result = "updatedM" if ok else "not-updatedM"
        key = ("merge", merge)
        p = self.pending.get(key)
        if p is not None and p.op == "update_merge":
            self._complete(key, result)
        else:
            self._output(result, merge=merge)

    # -- (F) close merge -------------------------------------------------

    def _pick_M(self, mview: MergeView, user: PartyId) -> SignedState:
        if Deviation.STALE in self.behavior:
            # the merge state granting the closing edge the largest share
            return max(mview.historyM, key=lambda s: (s.values[user], -s.version))
        return mview.latestM

    def _pick_E(self, edge: EdgeView) -> SignedState:
        if Deviation.STALE in self.behavior:
            # the signed state most favourable to this party, oldest first
            return max(edge.history, key=lambda s: (s.values[self.id], -s.version))
        return edge.latest

    def cmd_close_merge(self, merge: str, user: PartyId) -> None:
        key = ("edge", merge, user)
        mkey = ("merge", merge)
        mview = self.merges.get(merge)
        self.pending[key] = Pending("close_merge", key, self.world.now, {"checked": False})
        self.pending[mkey] = Pending("close_merge-lock", mkey, self.world.now)
        if mview is None or user not in mview.edges or self.id not in (mview.hub, user):
            self.pending.pop(mkey, None)
            self._complete(key, "not-closedM")
            return
        self._submit(merge, "closeM", user=user, msgM=self._pick_M(mview, user),
                     msgE=self._pick_E(mview.edges[user]))

    def on_closingM(self, contract: str, merge: str, user: PartyId) -> None:
        if self._silent():
            return
        mview = self.merges.get(merge)
        if mview is None or user not in mview.edges:
            return
        self._submit(merge, "closeM", user=user, msgM=self._pick_M(mview, user),
                     msgE=self._pick_E(mview.edges[user]))

    def on_closeM_check(self, contract: str, merge: str, user: PartyId, versionM: int) -> None:
        p = self.pending.get(("edge", merge, user))
        if p is not None and p.op == "close_merge":
            p.data["checked"] = True
        if self._silent() or Deviation.STALE in self.behavior:
            return
        mview = self.merges.get(merge)
        if mview is not None and mview.versionM > versionM:
            self._submit(merge, "closeM-challenge", user=user, msgM=mview.latestM)

    def on_closeM_rejected(self, contract: str, merge: str, user: PartyId) -> None:
        key = ("edge", merge, user)
        p = self.pending.get(key)
        if p is None or p.op != "close_merge":
            return
        if self.world.merge_contract(merge).pending.get(user) is not None:
            return  # someone else's close of this edge is already under way
        self.pending.pop(("merge", merge), None)
        self._complete(key, "not-closedM")
        for q in list(self.pending.values()):
            if q.op == "close_channel" and q.data.get("waiting") == merge:
                self.channels[q.key[1]].status = "open"
                self._complete(q.key, "not-closedC")

    def on_closedM(self, contract: str, merge: str, user: PartyId, credit: dict, versionM: int) -> None:
        mview = self.merges.get(merge)
        if mview is None:
            return
        edge = mview.edges.pop(user, None)
        if edge is not None:
            cview = self.channels[edge.channel_id]
            for p, v in credit.items():
                cview.balances[p] += v
            cview.epoch += 1
            cview.mergeSet.discard(merge)
        if user in mview.users:
            mview.users.remove(user)
        if not mview.users:
            mview.status = "closed"
        self.pending.pop(("merge", merge), None)
        key = ("edge", merge, user)
        if key in self.pending:
            self._complete(key, "closedM")
        elif self.id in (mview.hub, user):
            self._output("closedM", merge=merge, user=user)
        for p in list(self.pending.values()):
            if p.op == "close_channel" and p.data.get("waiting") == merge:
                self._continue_close_channel(p)

    # -- (G) close channel -----------------------------------------------

    def _pick_C(self, view: ChannelView) -> SignedState:
        if Deviation.FORGE in self.behavior:
            other = view.other(self.id)
            fake = SignedState.build(StateKind.MSG_C, view.id, view.version + 5,
                                     {self.id: view.total(), other: 0}, view.epoch)
            fake = self._sign(fake)
            return fake.with_signature(Signature(other, b"\x00" * 32))
        if Deviation.STALE in self.behavior:
            return max(view.history, key=lambda s: (s.values[self.id], -s.version))
        return view.latest

    def cmd_close_channel(self, channel: str) -> None:
        key = ("chan", channel)
        self.pending[key] = p = Pending("close_channel", key, self.world.now, {"merges": []})
        view = self.channels.get(channel)
        if view is None or view.status != "open":
            self._complete(key, "not-closedC")
            return
        p.data["merges"] = sorted(view.mergeSet)
        self._continue_close_channel(p)

    def _continue_close_channel(self, p: Pending) -> None:
        channel = p.key[1]
        view = self.channels[channel]
        while p.data["merges"]:
            merge = p.data["merges"][0]
            if merge not in view.mergeSet:
                p.data["merges"].pop(0)
                continue
            p.data["waiting"] = merge
            user = view.other(self.id) if self.merges[merge].hub == self.id else self.id
            key = ("edge", merge, user)
            if key not in self.pending:
                self.cmd_close_merge(merge, user)
            return
        p.data.pop("waiting", None)
        view.status = "closing"
        self._submit(channel, "closeC", msgC=self._pick_C(view))

    def on_closingC(self, contract: str, channel: str) -> None:
        if self._silent():
            return
        view = self.channels.get(channel)
        if view is None:
            return
        view.status = "closing"
        self._submit(channel, "closeC", msgC=self._pick_C(view))

    def on_closeC_rejected(self, contract: str, channel: str, reason: str) -> None:
        key = ("chan", channel)
        p = self.pending.get(key)
        view = self.channels.get(channel)
        if p is None or p.op != "close_channel" or view is None or view.status != "closing":
            return
        c = self.world.channel_contract(channel)
        if c is not None and c.pending is not None:
            return  # our submission was a response to a close already in progress
        view.status = "open"
        self._complete(key, "not-closedC")

    def on_closedC(self, contract: str, channel: str, payout: dict) -> None:
        view = self.channels.get(channel)
        if view is None:
            return
        view.status = "closed"
        key = ("chan", channel)
        if key in self.pending:
            self._complete(key, "closedC")
        else:
            self._output("closedC", channel=channel, payout=payout)

    # ------------------------------------------------------------------
    # message dispatch and timeouts
    # ------------------------------------------------------------------

    def receive(self, sender: str, kind: str, payload: dict, from_contract: bool) -> None:
        name = "on_" + kind.replace("-", "_")
        handler = getattr(self, name, None)
        if handler is None:
            return
        if from_contract:
            handler(sender, **payload)
        else:
            if self._silent():
                return
            handler(sender, **payload)

    def tick(self) -> None:
        now = self.world.now
        for merge, inst in list(self.broadcasts.items()):
            if now >= inst.deadlineRound:
                self._settle_broadcast(merge, inst)
        for key, p in list(self.pending.items()):
            if key not in self.pending:
                continue
            age = now - p.start
            if p.op == "update_channel" and age >= 2:
                self._complete(key, "not-updatedC")
            elif p.op == "update_edge" and age >= 2:
                self._complete(key, "not-updatedE")
            elif p.op == "open_merge" and age >= 2 and "submitted" not in p.data:
                self._complete(key, "not-merged")
            elif p.op == "update_merge" and age >= 2 and "final" not in p.data:
                self._complete(key, "not-updatedM")
            elif p.op == "update_merge" and "final" in p.data and p.key[1] not in self.broadcasts:
                self._complete(key, "not-updatedM")
            elif p.op == "close_merge" and age == 2 * self.world.delta and not p.data["checked"]:
                self._submit(key[1], "timeout", user=key[2])

