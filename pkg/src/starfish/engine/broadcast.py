"""Two-round unanimous echo vote used to commit merge updates.

Round 1: the hub sends its proposal to every merge user. Round 2: each
user validates it and echoes ``(digest, accept|reject)`` to the hub and
all other users. A participant declares success iff it holds an accept
vote from every merge user, each carrying the digest of the proposal it
saw itself. Silence, a reject, or a digest mismatch (equivocation) makes
every honest participant declare failure.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

ACCEPT = "accept"
REJECT = "reject"
SILENT = "silent"


def digest(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


@dataclass
class AtomicBroadcastInstance:
    proposer: str
    users: tuple[str, ...]
    deadlineRound: int
    own_digest: str | None = None
    payload: object = None
    votes: dict[str, tuple[str, str]] = field(default_factory=dict)  # user -> (vote, digest)

    def record(self, voter: str, vote: str, vote_digest: str) -> None:
        if voter in self.users and voter not in self.votes:
            self.votes[voter] = (vote, vote_digest)

    def verdict(self) -> bool:
        if self.own_digest is None:
            return not self.users
        for u in self.users:
            vote = self.votes.get(u)
            if vote is None or vote[0] != ACCEPT or vote[1] != self.own_digest:
                return False
        return True

    def tally(self) -> dict[str, str]:
        return {u: self.votes.get(u, (SILENT, ""))[0] for u in self.users}


@dataclass(frozen=True)
class BroadcastOutcome:
    success: bool
    rounds: int
    verdicts: dict[str, bool]
    votes: dict[str, str]


def atomic_broadcast(
    hub: str,
    users: Iterable[str],
    payload: bytes,
    validate: Callable[[str, bytes], bool] | None = None,
    behaviors: Mapping[str, str] | None = None,
    payload_for: Mapping[str, bytes] | None = None,
) -> BroadcastOutcome:
    """Stand-alone run of the echo vote.

    ``validate(user, payload)`` is each honest user's local check;
    ``behaviors`` maps a user to ``"silent"`` or ``"reject"``;
    ``payload_for`` lets a corrupt hub send different payloads to
    different users.
    """
    users = tuple(sorted(users))
    behaviors = dict(behaviors or {})
    validate = validate or (lambda _u, _p: True)
    seen = {u: (payload_for or {}).get(u, payload) for u in users}
    instances = {p: AtomicBroadcastInstance(hub, users, 2) for p in (hub,) + users}
    instances[hub].own_digest = digest(payload)
    for u in users:
        instances[u].own_digest = digest(seen[u])
    # round 2: echoes
    for u in users:
        mode = behaviors.get(u)
        if mode == SILENT:
            continue
        vote = REJECT if mode == REJECT or not validate(u, seen[u]) else ACCEPT
        for inst in instances.values():
            inst.record(u, vote, digest(seen[u]))
    verdicts = {p: inst.verdict() for p, inst in instances.items()}
    honest = [p for p in verdicts if behaviors.get(p) is None]
    return BroadcastOutcome(
        success=all(verdicts[p] for p in honest),
        rounds=2,
        verdicts=verdicts,
        votes=instances[hub].tally(),
    )
