"""Network topologies: CSV ingestion and synthetic generation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import networkx as nx

from ..core import Coin
from ..network import NetworkState


class TopologyError(ValueError):
    """Malformed topology input."""


@dataclass
class Topology:
    nodes: list[str]
    channels: list[tuple[str, str, Coin]]

    def __post_init__(self) -> None:
        self.nodes = sorted(self.nodes)
        known = set(self.nodes)
        seen = set()
        for a, b, cap in self.channels:
            if a == b:
                raise TopologyError(f"self-loop on {a!r}")
            if a not in known or b not in known:
                raise TopologyError(f"channel {a}-{b} names an unknown node")
            key = frozenset((a, b))
            if key in seen:
                raise TopologyError(f"duplicate channel {a}-{b}")
            if cap <= 0:
                raise TopologyError(f"channel {a}-{b} has non-positive capacity")
            seen.add(key)

    def degrees(self) -> dict[str, int]:
        deg = {x: 0 for x in self.nodes}
        for a, b, _ in self.channels:
            deg[a] += 1
            deg[b] += 1
        return deg

    def to_network(self, multiplier: int = 1, endowment: str = "funding") -> NetworkState:
        """Split each scaled capacity 50/50 (the odd unit goes to the first end).

        With ``endowment="funding"`` every node also holds on-chain as many
        coins as it put into its channels; on-chain refill strategies draw
        on this reserve.
        """
        if multiplier < 1:
            raise ValueError("capacity multiplier must be >= 1")
        chans = []
        reserve = {x: 0 for x in self.nodes}
        for a, b, cap in self.channels:
            total = cap * multiplier
            ba = total - total // 2
            bb = total // 2
            chans.append((a, b, ba, bb))
            reserve[a] += ba
            reserve[b] += bb
        ledger = reserve if endowment == "funding" else {}
        return NetworkState.build(self.nodes, chans, ledger)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["nodeA", "nodeB", "capacity"])
        for a, b, cap in self.channels:
            w.writerow([a, b, cap])
        return out.getvalue()


def parse_topology_csv(text: str, source: str = "<csv>") -> Topology:
    lines = text.splitlines()
    if not lines or [h.strip() for h in lines[0].split(",")] != ["nodeA", "nodeB", "capacity"]:
        raise TopologyError(f"{source}:1: header must be 'nodeA,nodeB,capacity'")
    nodes: set[str] = set()
    channels = []
    seen: dict[frozenset, int] = {}
    for lineno, row in enumerate(csv.reader(lines[1:]), start=2):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != 3:
            raise TopologyError(f"{source}:{lineno}: expected 3 fields, got {len(row)}")
        a, b, raw = (f.strip() for f in row)
        if not a or not b:
            raise TopologyError(f"{source}:{lineno}: empty node name")
        if a == b:
            raise TopologyError(f"{source}:{lineno}: self-loop on {a!r}")
        try:
            cap = int(raw)
        except ValueError:
            raise TopologyError(f"{source}:{lineno}: capacity {raw!r} is not an integer") from None
        if cap <= 0:
            raise TopologyError(f"{source}:{lineno}: capacity must be positive")
        key = frozenset((a, b))
        if key in seen:
            raise TopologyError(f"{source}:{lineno}: duplicate channel {a}-{b} (first on line {seen[key]})")
        seen[key] = lineno
        nodes.update((a, b))
        channels.append((a, b, cap))
    if not channels:
        raise TopologyError(f"{source}: no channels")
    return Topology(sorted(nodes), channels)


def load_topology(source: str | Path | dict) -> Topology:
    """Load a CSV edge list, or synthesise from a spec dict."""
    if isinstance(source, dict):
        return synthesize(**source)
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise TopologyError(f"no such topology file: {path}") from None
    return parse_topology_csv(text, str(path))


def synthesize(model: str = "scale-free", nodes: int = 200, attach: int = 2, seed: int = 7,
               capacity: Coin = 1000) -> Topology:
    """Deterministic synthetic topology with equal channel capacities."""
    if model not in ("scale-free", "barabasi-albert"):
        raise TopologyError(f"unknown topology model {model!r}")
    if nodes < 2 or not 1 <= attach < nodes:
        raise TopologyError("need nodes >= 2 and 1 <= attach < nodes")
    if capacity <= 0:
        raise TopologyError("capacity must be positive")
    g = nx.barabasi_albert_graph(nodes, attach, seed=seed)
    width = len(str(nodes - 1))
    name = [f"n{i:0{width}d}" for i in range(nodes)]
    chans = sorted((name[min(u, v)], name[max(u, v)], capacity) for u, v in g.edges())
    return Topology(name, chans)


def star(hub: str, leaves: dict[str, Coin]) -> Topology:
    return Topology([hub, *leaves], [(hub, x, cap) for x, cap in leaves.items()])
