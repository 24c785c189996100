"""Rebalancing strategies and their on-chain operation costs.

Every strategy is a pure planner over a :class:`NetworkState`: setup
plans decide which channels a node binds or merges, and ``rebalance``
returns the balance shifts (plus on-chain effects) that would restore a
node's spendable balance on one channel, or ``None`` when it cannot.
"""
from __future__ import annotations

import enum
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Sequence

from .core import Coin
from .network import NetworkState

DEFAULT_MAX_CYCLE = 6


class StrategyKind(str, enum.Enum):
    LN = "LN"
    CLOSE_OPEN = "CloseOpen"
    LOOP = "Loop"
    REVIVE = "Revive"
    SHADUF_HL = "ShadufHL"
    SHADUF_AO = "ShadufAO"
    SHADUF_AB = "ShadufAB"
    STARFISH = "Starfish"

    @classmethod
    def parse(cls, name: str) -> "StrategyKind":
        for k in cls:
            if k.value.lower() == name.lower() or k.name.lower() == name.lower():
                return k
        raise ValueError(f"unknown strategy {name!r}")

    @property
    def shaduf(self) -> bool:
        return self in (StrategyKind.SHADUF_HL, StrategyKind.SHADUF_AO, StrategyKind.SHADUF_AB)

    @property
    def onchain_refill(self) -> bool:
        return self in (StrategyKind.CLOSE_OPEN, StrategyKind.LOOP)


ALL_STRATEGIES = tuple(StrategyKind)


@dataclass
class OpCounter:
    perNode: Counter = field(default_factory=Counter)
    perKind: Counter = field(default_factory=Counter)

    def record(self, node, kind: str, count: int = 1) -> None:
        if count < 0:
            raise ValueError("operation counts only grow")
        self.perNode[node] += count
        self.perKind[kind] += count

    @property
    def total(self) -> int:
        return sum(self.perKind.values())

    def merge(self, other: "OpCounter") -> None:
        self.perNode.update(other.perNode)
        self.perKind.update(other.perKind)


@dataclass(frozen=True)
class Binding:
    channelPair: tuple[int, int]
    live: bool = True


@dataclass
class SetupPlan:
    kind: StrategyKind
    node: int
    bindings: list[Binding] = field(default_factory=list)
    merged: list[int] = field(default_factory=list)
    ops: int = 0

    def partners(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for b in self.bindings:
            x, y = b.channelPair
            out.setdefault(x, []).append(y)
            out.setdefault(y, []).append(x)
        return out


def _by_balance(adjacent: Sequence[tuple[int, Coin]]) -> list[int]:
    """Channels ordered richest first; earlier position breaks ties."""
    order = sorted(range(len(adjacent)), key=lambda i: (-adjacent[i][1], i))
    return [adjacent[i][0] for i in order]


def plan_setup(kind: StrategyKind, node: int, adjacent: Sequence[tuple[int, Coin]]) -> SetupPlan:
    """``adjacent`` lists ``(channel, node's balance)`` in neighbour order."""
    plan = SetupPlan(kind, node)
    n = len(adjacent)
    if n == 0:
        return plan
    ranked = _by_balance(adjacent)
    if kind is StrategyKind.STARFISH:
        plan.merged = [c for c, _ in adjacent]
        plan.ops = n
    elif kind is StrategyKind.SHADUF_HL:
        for i in range(n // 2):
            plan.bindings.append(Binding((ranked[i], ranked[n - 1 - i])))
    elif kind is StrategyKind.SHADUF_AO:
        centre = ranked[0]
        plan.bindings = [Binding((centre, c)) for c, _ in adjacent if c != centre]
    elif kind is StrategyKind.SHADUF_AB:
        chans = [c for c, _ in adjacent]
        plan.bindings = [Binding((chans[i], chans[j])) for i in range(n) for j in range(i + 1, n)]
    if kind.shaduf:
        plan.ops = 2 * len(plan.bindings)
    return plan


def setup_ops(kind: StrategyKind, n: int) -> int:
    """Closed-form setup cost for a node with ``n`` channels."""
    if n <= 0:
        return 0
    return {
        StrategyKind.STARFISH: n,
        StrategyKind.SHADUF_HL: 2 * (n // 2),
        StrategyKind.SHADUF_AO: 2 * (n - 1),
        StrategyKind.SHADUF_AB: n * (n - 1),
    }.get(kind, 0)


def capacity_bound(kind: StrategyKind, adjacent: Sequence[tuple[int, Coin]]) -> Coin:
    """Largest single payment the node can source toward one channel."""
    if not adjacent:
        return 0
    balances = dict(adjacent)
    if kind is StrategyKind.STARFISH:
        return sum(balances.values())
    best = max(balances.values())
    if kind.shaduf:
        for b in plan_setup(kind, -1, adjacent).bindings:
            x, y = b.channelPair
            best = max(best, balances[x] + balances[y])
    return best


# ---------------------------------------------------------------------------
# rebalancing
# ---------------------------------------------------------------------------


@dataclass
class RebalancePlan:
    kind: StrategyKind
    node: int
    target: int
    shifts: list[tuple[int, int, Coin]] = field(default_factory=list)  # (channel, node, delta)
    ledger: list[tuple[int, Coin]] = field(default_factory=list)
    ops: int = 0
    lock: list[int] = field(default_factory=list)

    def apply(self, state: NetworkState, now: int, delta: int) -> None:
        for c, node, d in self.shifts:
            state.shift(c, node, d)
        for node, d in self.ledger:
            state.ledger[node] += d
        for c in self.lock:
            state.lockedUntil[c] = now + delta


def _starfish(state: NetworkState, node: int, target: int, need: Coin, now: int):
    donors = [(state.balance(c, node), nbr, c) for nbr, c in state.adj[node]
              if c != target and not state.locked(c, now) and state.balance(c, node) > 0]
    if sum(d[0] for d in donors) < need:
        return None
    shifts, left = [], need
    for b, _, c in sorted(donors, key=lambda d: (-d[0], d[1])):
        take = min(b, left)
        shifts.append((c, node, -take))
        left -= take
        if left == 0:
            break
    shifts.append((target, node, need))
    return shifts


def _shaduf(state: NetworkState, node: int, target: int, need: Coin, now: int,
            partners: dict[int, list[int]]):
    best = None
    for c in partners.get(target, []):
        if state.locked(c, now):
            continue
        b = state.balance(c, node)
        key = (-b, state.other(c, node))
        if b >= need and (best is None or key < best[0]):
            best = (key, c)
    if best is None:
        return None
    return [(best[1], node, -need), (target, node, need)]


def revive_cycle(state: NetworkState, node: int, target: int, need: Coin, now: int,
                 max_cycle: int = DEFAULT_MAX_CYCLE) -> list[tuple[int, int]] | None:
    """Shortest cycle ``node -> w -> ... -> v -> node`` closing over ``target``.

    Returns the hops as ``(channel, payer)`` pairs, or ``None``.
    """
    v = state.other(target, node)
    if state.locked(target, now) or state.balance(target, v) < need:
        return None
    max_hops = max_cycle - 2  # hops strictly between the source and target channels
    parent: dict[int, tuple[int, int]] = {}
    depth: dict[int, int] = {}
    queue: deque[int] = deque()
    for w, c in state.adj[node]:
        if c == target or state.locked(c, now) or state.balance(c, node) < need:
            continue
        parent[w] = (node, c)
        depth[w] = 0
        queue.append(w)
    found = v in depth
    while queue and not found:
        x = queue.popleft()
        if depth[x] >= max_hops:
            continue
        for y, c in state.adj[x]:
            if y == node or y in depth or state.locked(c, now) or state.balance(c, x) < need:
                continue
            parent[y] = (x, c)
            depth[y] = depth[x] + 1
            if y == v:
                found = True
                break
            queue.append(y)
    if not found:
        return None
    hops = [(target, v)]
    y = v
    while y != node:
        x, c = parent[y]
        hops.append((c, x))
        y = x
    hops.reverse()
    return hops


def _revive(state: NetworkState, node: int, target: int, need: Coin, now: int, max_cycle: int):
    hops = revive_cycle(state, node, target, need, now, max_cycle)
    if hops is None:
        return None
    shifts = []
    for c, payer in hops:
        shifts.append((c, payer, -need))
        shifts.append((c, state.other(c, payer), need))
    return shifts


def rebalance(kind: StrategyKind, state: NetworkState, node: int, target: int, need: Coin,
              now: int = 0, partners: dict[int, list[int]] | None = None,
              delta: int = 10, max_cycle: int = DEFAULT_MAX_CYCLE) -> RebalancePlan | None:
    """Plan to raise ``node``'s balance on ``target`` by at least ``need``."""
    if need <= 0:
        raise ValueError("need must be positive")
    plan = RebalancePlan(kind, node, target)
    if kind is StrategyKind.LN:
        return None
    if kind.onchain_refill:
        if state.locked(target, now):
            return None
        k = state.side(target, node)
        topup = state.initial[target][k] - state.bal[target][k]
        if topup <= 0 or state.ledger[node] < topup:
            return None
        plan.shifts = [(target, node, topup)]
        plan.ledger = [(node, -topup)]
        plan.ops = 2 if kind is StrategyKind.CLOSE_OPEN else 1
        plan.lock = [target]
        return plan
    if kind is StrategyKind.STARFISH:
        shifts = _starfish(state, node, target, need, now)
    elif kind is StrategyKind.REVIVE:
        shifts = _revive(state, node, target, need, now, max_cycle)
    else:
        shifts = _shaduf(state, node, target, need, now, partners or {})
    if shifts is None:
        return None
    plan.shifts = shifts
    return plan
