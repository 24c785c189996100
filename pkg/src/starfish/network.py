"""Balance-level view of a payment channel network.

Nodes are indexed in sorted-id order so that index order is the
tie-breaking order everywhere. Channel ``c`` joins ``ends[c] = (a, b)``
with ``a < b``; ``bal[c] = [balance of a, balance of b]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import Coin, InvariantViolation


@dataclass
class NetworkState:
    names: list[str]
    ends: list[tuple[int, int]]
    bal: list[list[Coin]]
    ledger: list[Coin]
    initial: list[tuple[Coin, Coin]] = field(default_factory=list)
    lockedUntil: list[int] = field(default_factory=list)
    adj: list[list[tuple[int, int]]] = field(default_factory=list)  # node -> sorted (nbr, channel)

    def __post_init__(self) -> None:
        n = len(self.names)
        if not self.initial:
            self.initial = [(b[0], b[1]) for b in self.bal]
        if not self.lockedUntil:
            self.lockedUntil = [0] * len(self.ends)
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for c, (a, b) in enumerate(self.ends):
            if a == b:
                raise ValueError("self-loop channel")
            if a > b:
                raise ValueError("channel ends must be ordered")
            adj[a].append((b, c))
            adj[b].append((a, c))
        self.adj = [sorted(x) for x in adj]

    @classmethod
    def build(cls, names: Sequence[str], channels: Iterable[tuple[str, str, Coin, Coin]],
              ledger: dict[str, Coin] | None = None) -> "NetworkState":
        """``channels`` holds ``(u, v, balance of u, balance of v)``."""
        names = sorted(names)
        index = {x: i for i, x in enumerate(names)}
        ends, bal = [], []
        for u, v, bu, bv in channels:
            a, b = index[u], index[v]
            if a > b:
                a, b, bu, bv = b, a, bv, bu
            ends.append((a, b))
            bal.append([bu, bv])
        led = [0] * len(names)
        for x, amount in (ledger or {}).items():
            led[index[x]] = amount
        return cls(list(names), ends, bal, led)

    # -- queries ---------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def side(self, c: int, node: int) -> int:
        a, b = self.ends[c]
        if node == a:
            return 0
        if node == b:
            return 1
        raise ValueError(f"node {node} is not on channel {c}")

    def balance(self, c: int, node: int) -> Coin:
        return self.bal[c][self.side(c, node)]

    def other(self, c: int, node: int) -> int:
        a, b = self.ends[c]
        return b if node == a else a

    def channels_of(self, node: int) -> list[int]:
        return [c for _, c in self.adj[node]]

    def locked(self, c: int, now: int) -> bool:
        return self.lockedUntil[c] > now

    def total(self) -> Coin:
        return sum(sum(b) for b in self.bal) + sum(self.ledger)

    def copy(self) -> "NetworkState":
        return NetworkState(list(self.names), list(self.ends), [list(b) for b in self.bal],
                            list(self.ledger), list(self.initial), list(self.lockedUntil))

    def snapshot(self) -> tuple:
        return (tuple(tuple(b) for b in self.bal), tuple(self.ledger), tuple(self.lockedUntil))

    # -- mutation --------------------------------------------------------

    def shift(self, c: int, node: int, delta: Coin) -> None:
        self.bal[c][self.side(c, node)] += delta

    def pay(self, c: int, payer: int, amount: Coin) -> None:
        k = self.side(c, payer)
        self.bal[c][k] -= amount
        self.bal[c][1 - k] += amount

    def audit(self, expected_total: Coin) -> None:
        if any(v < 0 for b in self.bal for v in b) or any(v < 0 for v in self.ledger):
            raise InvariantViolation("negative balance in network state")
        if self.total() != expected_total:
            raise InvariantViolation(f"network holds {self.total()} coins, expected {expected_total}")
