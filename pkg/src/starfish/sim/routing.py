"""Reference (pure Python) routing and payment execution.

The compiled kernel in :mod:`starfish.sim.kernel` implements the same
rules for the large sweeps; tests check both give identical metrics.
"""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field

from ..core import Coin
from ..network import NetworkState
from ..strategies import (
    DEFAULT_MAX_CYCLE,
    OpCounter,
    StrategyKind,
    plan_setup,
    rebalance,
)
from .topology import Topology
from .workload import Workload

Path = list[tuple[int, int]]  # (channel, payer) per hop


@dataclass
class RunMetrics:
    attempted: int = 0
    succeeded: int = 0
    onChainOps: OpCounter = field(default_factory=OpCounter)
    lockedRounds: Counter = field(default_factory=Counter)
    failedHops: Counter = field(default_factory=Counter)

    @property
    def failed(self) -> int:
        return self.attempted - self.succeeded

    @property
    def successRatio(self) -> float:
        return self.succeeded / self.attempted if self.attempted else 0.0


def route_payment(state: NetworkState, sender: int, receiver: int, amount: Coin,
                  now: int = 0, check_balance: bool = True) -> Path | None:
    """Fewest hops; among those the lexicographically smallest node sequence."""
    if sender == receiver:
        return []
    parent: dict[int, tuple[int, int]] = {sender: (-1, -1)}
    queue = deque([sender])
    while queue:
        x = queue.popleft()
        for y, c in state.adj[x]:
            if y in parent or state.locked(c, now):
                continue
            if check_balance and state.balance(c, x) < amount:
                continue
            parent[y] = (x, c)
            if y == receiver:
                path = []
                while y != sender:
                    x, c = parent[y]
                    path.append((c, x))
                    y = x
                return path[::-1]
            queue.append(y)
    return None


def apply_path(state: NetworkState, path: Path, amount: Coin) -> None:
    for c, payer in path:
        state.pay(c, payer, amount)


class Simulator:
    """One experiment cell: a network, a strategy and a payment stream."""

    def __init__(self, state: NetworkState, kind: StrategyKind, delta: int = 10,
                 max_cycle: int = DEFAULT_MAX_CYCLE, audit: bool = False) -> None:
        self.state = state
        self.kind = kind
        self.delta = delta
        self.max_cycle = max_cycle
        self.audit = audit
        self.metrics = RunMetrics()
        self.partners: list[dict[int, list[int]]] = []
        for node in range(state.n):
            adjacent = [(c, state.balance(c, node)) for _, c in state.adj[node]]
            plan = plan_setup(kind, node, adjacent)
            self.partners.append(plan.partners())
            if plan.ops:
                self.metrics.onChainOps.record(node, "setup", plan.ops)
        self.expected_total = state.total()

    @classmethod
    def from_topology(cls, topology: Topology, kind: StrategyKind, multiplier: int = 1,
                      **kwargs) -> "Simulator":
        return cls(topology.to_network(multiplier), kind, **kwargs)

    def execute(self, sender: int, receiver: int, amount: Coin, now: int) -> bool:
        state = self.state
        path = route_payment(state, sender, receiver, amount, now)
        if path is not None:
            apply_path(state, path, amount)
            return True
        if self.kind is StrategyKind.LN:
            return False
        topo = route_payment(state, sender, receiver, amount, now, check_balance=False)
        if topo is None:
            return False
        saved = state.snapshot()
        offchain = not self.kind.onchain_refill
        for c, payer in topo:
            have = state.balance(c, payer)
            if have >= amount:
                continue
            plan = rebalance(self.kind, state, payer, c, amount - have, now,
                             self.partners[payer], self.delta, self.max_cycle)
            if plan is None:
                self.metrics.failedHops[c] += 1
                if offchain:
                    self._restore(saved)
                return False
            plan.apply(state, now, self.delta)
            if plan.ops:
                self.metrics.onChainOps.record(payer, "refill", plan.ops)
                for ch in plan.lock:
                    self.metrics.lockedRounds[ch] += self.delta
        path = route_payment(state, sender, receiver, amount, now)
        if path is None:
            if offchain:
                self._restore(saved)
            return False
        apply_path(state, path, amount)
        return True

    def _restore(self, saved: tuple) -> None:
        bal, ledger, locked = saved
        self.state.bal = [list(b) for b in bal]
        self.state.ledger = list(ledger)
        self.state.lockedUntil = list(locked)

    def run(self, workload: Workload) -> RunMetrics:
        for now, (s, r, amount) in enumerate(workload):
            self.metrics.attempted += 1
            if self.execute(s, r, amount, now):
                self.metrics.succeeded += 1
            if self.audit:
                self.state.audit(self.expected_total)
        return self.metrics
