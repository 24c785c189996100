from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass(order=True)
class RoundMessage:
    """One message on the bus.

    Party-to-party messages arrive one round after sending; transactions
    to contracts are confirmed ``tx_delay`` (at most delta) rounds later;
    contract notifications reach parties in the round they are emitted.
    """

    deliverRound: int
    sender: str
    recipient: str
    seq: int
    sendRound: int = field(compare=False)
    kind: str = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)

    def sort_key(self) -> tuple:
        return (self.sender, self.recipient, self.seq)


def jsonable(value: Any) -> Any:
    """Best-effort conversion of protocol payloads for the event log."""
    from ..core import Signature, SignedState
    from ..contracts import MergeProposal

    if isinstance(value, SignedState):
        return {"kind": value.kind.value, "subject": value.subject, "version": value.version,
                "epoch": value.epoch, "values": value.values,
                "signers": sorted(value.signers())}
    if isinstance(value, MergeProposal):
        return value.to_json()
    if isinstance(value, Signature):
        return {"signer": value.signer, "tag": value.tag.hex()[:16]}
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        seq = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [jsonable(v) for v in seq]
    return value
