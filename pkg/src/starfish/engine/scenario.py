"""Scenario files: parties, funding, a command schedule and adversaries.

A scenario is a JSON object::

    {"delta": 10,
     "parties": ["H", "A"],
     "funding": {"H": 50, "A": 10},
     "adversary": {"A": "stale"},
     "schedule": [{"round": 0, "party": "H", "op": "open_channel",
                   "args": {"channel": "hA", "peer": "A", "fund": 5}}]}

Inputs that cannot describe a valid run are rejected before anything is
simulated.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from ..contracts import DEFAULT_DELTA
from .behaviors import Behavior
from .world import World


class ScenarioError(ValueError):
    """The scenario cannot be run as written."""


# op -> (required args, optional args, args holding coin amounts)
OPS: dict[str, tuple[set[str], set[str], set[str]]] = {
    "open_channel": ({"channel", "peer", "fund"}, {"peer_fund"}, {"fund", "peer_fund"}),
    "update_channel": ({"channel"}, {"pay", "theta"}, {"pay"}),
    "open_merge": ({"merge", "channels", "capacities"}, set(), set()),
    "update_edge": ({"merge", "pay"}, {"user"}, {"pay"}),
    "update_merge": ({"merge", "from", "to", "amount"}, set(), {"amount"}),
    "close_merge": ({"merge", "user"}, set(), set()),
    "close_channel": ({"channel"}, set(), set()),
    "replay_merge": ({"merge"}, set(), set()),
}


@dataclass
class Scenario:
    delta: int = DEFAULT_DELTA
    tx_delay: int | None = None
    funding: dict[str, int] = field(default_factory=dict)
    adversary: dict[str, Behavior] = field(default_factory=dict)
    schedule: list[tuple[int, str, str, dict]] = field(default_factory=list)
    name: str = "scenario"

    def build(self, **world_kwargs: Any) -> World:
        world = World(self.delta, self.tx_delay, **world_kwargs)
        for pid in sorted(self.funding):
            world.add_party(pid, self.funding[pid], self.adversary.get(pid))
        for round_, party, op, args in self.schedule:
            world.at(round_, party, op, **args)
        return world


def _is_coin(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def parse_scenario(data: Any, name: str = "scenario") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    unknown = set(data) - {"delta", "tx_delay", "parties", "funding", "adversary", "schedule",
                           "description", "name"}
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    delta = data.get("delta", DEFAULT_DELTA)
    if not isinstance(delta, int) or isinstance(delta, bool) or delta < 1:
        raise ScenarioError("delta must be a positive integer")
    tx_delay = data.get("tx_delay")
    if tx_delay is not None and (not isinstance(tx_delay, int) or not 1 <= tx_delay <= delta):
        raise ScenarioError("tx_delay must be an integer in [1, delta]")

    parties = data.get("parties", [])
    funding_in = data.get("funding", {})
    if not isinstance(parties, list) or not all(isinstance(p, str) and p for p in parties):
        raise ScenarioError("parties must be a list of non-empty names")
    if len(set(parties)) != len(parties):
        raise ScenarioError("duplicate party names")
    if not isinstance(funding_in, dict):
        raise ScenarioError("funding must map party names to amounts")
    funding = {p: 0 for p in parties}
    for p, v in funding_in.items():
        if parties and p not in funding:
            raise ScenarioError(f"funding for unknown party {p!r}")
        if not _is_coin(v):
            raise ScenarioError(f"funding for {p!r} must be a non-negative integer")
        funding[p] = v
    if not funding:
        raise ScenarioError("scenario has no parties")

    adversary = {}
    for p, spec in (data.get("adversary") or {}).items():
        if p not in funding:
            raise ScenarioError(f"adversary entry for unknown party {p!r}")
        try:
            adversary[p] = Behavior.parse(spec)
        except ValueError as exc:
            raise ScenarioError(f"bad behaviour for {p!r}: {exc}") from None

    schedule = []
    for i, item in enumerate(data.get("schedule", [])):
        where = f"schedule[{i}]"
        if not isinstance(item, dict):
            raise ScenarioError(f"{where}: must be an object")
        round_, party, op = item.get("round"), item.get("party"), item.get("op")
        args = item.get("args", {})
        if not _is_coin(round_):
            raise ScenarioError(f"{where}: round must be a non-negative integer")
        if party not in funding:
            raise ScenarioError(f"{where}: unknown party {party!r}")
        if op not in OPS:
            raise ScenarioError(f"{where}: unknown op {op!r}")
        if not isinstance(args, dict):
            raise ScenarioError(f"{where}: args must be an object")
        required, optional, coins = OPS[op]
        missing = required - set(args)
        extra = set(args) - required - optional
        if missing:
            raise ScenarioError(f"{where}: missing args {sorted(missing)}")
        if extra:
            raise ScenarioError(f"{where}: unexpected args {sorted(extra)}")
        for k in coins & set(args):
            if not _is_coin(args[k]):
                raise ScenarioError(f"{where}: {k} must be a non-negative integer")
        args = dict(args)
        if op == "open_channel" and args["peer"] not in funding:
            raise ScenarioError(f"{where}: unknown peer {args['peer']!r}")
        if op == "open_channel" and args["peer"] == party:
            raise ScenarioError(f"{where}: a channel needs two distinct parties")
        if op == "update_channel" and ("pay" in args) == ("theta" in args):
            raise ScenarioError(f"{where}: give exactly one of pay or theta")
        if op == "update_channel" and "theta" in args:
            theta = args["theta"]
            if not isinstance(theta, dict) or not all(isinstance(v, int) for v in theta.values()) \
                    or sum(theta.values()) != 0:
                raise ScenarioError(f"{where}: theta must be integer deltas summing to zero")
        if op == "open_merge":
            chans, caps = args["channels"], args["capacities"]
            if not isinstance(chans, list) or not isinstance(caps, list) or len(chans) != len(caps) \
                    or not chans:
                raise ScenarioError(f"{where}: channels and capacities must be equal-length lists")
            if len(set(chans)) != len(chans):
                raise ScenarioError(f"{where}: a channel may join a merge once")
            if not all(_is_coin(c) for c in caps):
                raise ScenarioError(f"{where}: capacities must be non-negative integers")
        if op == "update_merge":
            if args["from"] == args["to"]:
                raise ScenarioError(f"{where}: from and to must differ")
            args["src"], args["dst"] = args.pop("from"), args.pop("to")
        schedule.append((round_, party, op, args))
    return Scenario(delta, tx_delay, funding, adversary, schedule, data.get("name", name))


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"no such scenario file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    return parse_scenario(data, path.stem)


def bundled_scenarios() -> list[str]:
    root = resources.files("starfish") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_scenario(name: str) -> Scenario:
    root = resources.files("starfish") / "scenarios"
    target = root / f"{name}.json"
    if not target.is_file():
        raise ScenarioError(f"no bundled scenario {name!r}; have {bundled_scenarios()}")
    return parse_scenario(json.loads(target.read_text()), name)
