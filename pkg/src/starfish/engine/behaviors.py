"""Scripted deviations available to corrupt parties."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable


class Deviation(str, enum.Enum):
    SILENT = "silent"              # never answers, votes, confirms or challenges
    STALE = "stale"                # submits old signed states to contracts
    WITHHOLD = "withhold"          # refuses to sign requests, votes reject
    REPLAY = "replay"              # may replay an old merge request
    FORGE = "forge"                # closes with a forged counterparty signature
    OVERDRAFT = "overdraft"        # skips its own balance checks when proposing
    EQUIVOCATE = "equivocate"      # as hub, broadcasts conflicting proposals


@dataclass(frozen=True)
class Behavior:
    deviations: frozenset[Deviation] = frozenset()
    since: int = 0  # first round in which the deviations apply

    @classmethod
    def parse(cls, spec: str | Iterable[str] | dict | None) -> "Behavior":
        """Accepts ``"stale"``, ``["stale", "withhold"]`` or
        ``{"deviations": [...], "from": 30}``."""
        if spec is None or spec == "honest":
            return cls()
        since = 0
        if isinstance(spec, dict):
            since = spec.get("from", 0)
            if not isinstance(since, int) or since < 0:
                raise ValueError("'from' must be a non-negative round")
            spec = spec.get("deviations", [])
        if isinstance(spec, str):
            spec = [spec]
        return cls(frozenset(Deviation(s) for s in spec if s != "honest"), since)

    def at(self, round_: int) -> "Behavior":
        """The behaviour in force during ``round_``."""
        return self if round_ >= self.since else HONEST_NOW

    @property
    def honest(self) -> bool:
        return not self.deviations

    def __contains__(self, item: Deviation) -> bool:
        return item in self.deviations

    def names(self) -> list[str]:
        return sorted(d.value for d in self.deviations) or ["honest"]


HONEST = Behavior()
HONEST_NOW = HONEST
