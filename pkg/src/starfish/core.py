"""Domain types, the ledger, signatures and the conservation auditor.

Coin amounts are plain Python integers (satoshi-like units) so that every
conservation check is exact.
"""
from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping

PartyId = str
Coin = int


class InvalidAmount(ValueError):
    """A negative or non-integer coin amount was supplied."""


class InvariantViolation(AssertionError):
    """Raised by the auditor when a conservation or sign check fails."""


def _check_amount(amount: Coin) -> None:
    if isinstance(amount, bool) or not isinstance(amount, int):
        raise InvalidAmount(f"amount must be an integer, got {amount!r}")
    if amount < 0:
        raise InvalidAmount(f"amount must be non-negative, got {amount}")


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------


@dataclass
class Ledger:
    """Trusted on-chain balance table.

    ``add`` always succeeds for a non-negative amount. ``remove`` only
    succeeds when the party holds enough coins; otherwise the request is
    ignored and ``False`` is returned.
    """

    balances: dict[PartyId, Coin] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for party, amount in self.balances.items():
            _check_amount(amount)

    def balance(self, party: PartyId) -> Coin:
        return self.balances.get(party, 0)

    def add(self, party: PartyId, amount: Coin) -> None:
        _check_amount(amount)
        self.balances[party] = self.balance(party) + amount

    def remove(self, party: PartyId, amount: Coin) -> bool:
        _check_amount(amount)
        current = self.balance(party)
        if current < amount:
            return False
        self.balances[party] = current - amount
        return True

    def total(self) -> Coin:
        return sum(self.balances.values())

    def copy(self) -> "Ledger":
        return Ledger(dict(self.balances))


def ledger_add(ledger: Ledger, party: PartyId, amount: Coin) -> Ledger:
    """Functional form of :meth:`Ledger.add`; the input is left untouched."""
    out = ledger.copy()
    out.add(party, amount)
    return out


def ledger_remove(ledger: Ledger, party: PartyId, amount: Coin) -> Ledger | None:
    """Functional form of :meth:`Ledger.remove`; ``None`` signals rejection."""
    out = ledger.copy()
    if not out.remove(party, amount):
        return None
    return out


# ---------------------------------------------------------------------------
# Channels, merges, edges
# ---------------------------------------------------------------------------


class ChannelStatus(str, enum.Enum):
    PROPOSED = "proposed"
    OPEN = "open"
    CLOSING = "closing"
    CLOSED = "closed"


class MergeStatus(str, enum.Enum):
    PROPOSED = "proposed"
    ACTIVE = "active"
    CLOSED = "closed"


@dataclass
class Channel:
    id: str
    users: tuple[PartyId, PartyId]
    balanceC: dict[PartyId, Coin]
    versionC: int = 0
    mergeSet: set[str] = field(default_factory=set)
    status: ChannelStatus = ChannelStatus.PROPOSED
    lockedUntil: int = 0

    def __post_init__(self) -> None:
        a, b = self.users
        if a == b:
            raise ValueError("a channel needs two distinct users")
        for u in self.users:
            self.balanceC.setdefault(u, 0)

    def other(self, party: PartyId) -> PartyId:
        a, b = self.users
        if party == a:
            return b
        if party == b:
            return a
        raise KeyError(f"{party} is not a user of channel {self.id}")

    def total(self) -> Coin:
        return sum(self.balanceC.values())

    def check(self) -> None:
        for u, v in self.balanceC.items():
            if v < 0:
                raise InvariantViolation(f"channel {self.id}: negative balance for {u}")


@dataclass
class Edge:
    channelId: str
    users: tuple[PartyId, PartyId]  # (hub, user)
    capacity: Coin
    balanceE: dict[PartyId, Coin]
    versionE: int = 0

    @property
    def hub(self) -> PartyId:
        return self.users[0]

    @property
    def user(self) -> PartyId:
        return self.users[1]

    @classmethod
    def fresh(cls, channel_id: str, hub: PartyId, user: PartyId, capacity: Coin) -> "Edge":
        return cls(channel_id, (hub, user), capacity, {hub: capacity, user: 0})

    def check(self) -> None:
        hub, user = self.users
        if self.balanceE[hub] < 0 or self.balanceE[user] < 0:
            raise InvariantViolation(f"edge {self.users}: negative balance")
        if self.balanceE[hub] + self.balanceE[user] != self.capacity:
            raise InvariantViolation(
                f"edge {self.users}: balances {self.balanceE} do not sum to {self.capacity}"
            )


@dataclass
class Merge:
    id: str
    hub: PartyId
    users: list[PartyId]
    edges: list[Edge]
    versionM: int = 0
    status: MergeStatus = MergeStatus.PROPOSED

    def edge_of(self, user: PartyId) -> Edge:
        for e in self.edges:
            if e.user == user:
                return e
        raise KeyError(f"merge {self.id} has no edge for {user}")

    def capacities(self) -> dict[PartyId, Coin]:
        return {e.user: e.capacity for e in self.edges}

    def pooled(self) -> Coin:
        return sum(e.capacity for e in self.edges)

    def check(self) -> None:
        for e in self.edges:
            if e.hub != self.hub:
                raise InvariantViolation(f"merge {self.id}: edge {e.users} not rooted at hub")
            e.check()


# ---------------------------------------------------------------------------
# Payment deltas
# ---------------------------------------------------------------------------


def _apply(balances: Mapping[PartyId, Coin], delta: Mapping[PartyId, Coin]) -> dict[PartyId, Coin]:
    if sum(delta.values()) != 0:
        raise ValueError(f"delta {dict(delta)} is not zero-sum")
    unknown = set(delta) - set(balances)
    if unknown:
        raise KeyError(f"delta names unknown parties {sorted(unknown)}")
    out = dict(balances)
    for party, d in delta.items():
        out[party] += d
    if any(v < 0 for v in out.values()):
        raise ValueError(f"delta {dict(delta)} overdraws {dict(balances)}")
    return out


def apply_channel_payment(channel: Channel, delta: Mapping[PartyId, Coin]) -> dict[PartyId, Coin]:
    """Return the balances after a channel payment; raises on overdraft."""
    return _apply(channel.balanceC, delta)


def apply_edge_payment(edge: Edge, delta: Mapping[PartyId, Coin]) -> dict[PartyId, Coin]:
    return _apply(edge.balanceE, delta)


def transfer(payer: PartyId, payee: PartyId, amount: Coin) -> dict[PartyId, Coin]:
    """Two-party zero-sum delta moving ``amount`` from payer to payee."""
    return {payer: -amount, payee: amount}


def apply_merge_update(
    capacities: Mapping[PartyId, Coin], donor: PartyId, recipient: PartyId, amount: Coin
) -> dict[PartyId, Coin]:
    """Capacity vector after moving ``amount`` from ``donor``'s edge to ``recipient``'s.

    Edges are keyed by their end user. ``amount`` may be negative (reverse
    direction); zero is a legal no-op update.
    """
    if donor == recipient:
        raise ValueError("a merge update needs two distinct edges")
    return _apply(capacities, {donor: -amount, recipient: amount})


# ---------------------------------------------------------------------------
# Canonical encoding and signatures
# ---------------------------------------------------------------------------


def encode(*fields) -> bytes:
    """Length-prefixed canonical bytes; integers are 8-byte big-endian.

    Nested tuples/lists are encoded recursively, mappings as sorted
    key/value pairs.
    """
    out = bytearray()
    for f in fields:
        if isinstance(f, bool):
            raw = b"\x01" if f else b"\x00"
        elif isinstance(f, int):
            raw = struct.pack(">q", f)
        elif isinstance(f, str):
            raw = f.encode("utf-8")
        elif isinstance(f, bytes):
            raw = f
        elif isinstance(f, Mapping):
            raw = encode(*[(k, f[k]) for k in sorted(f)])
        elif isinstance(f, (tuple, list)):
            raw = encode(*f)
        elif isinstance(f, enum.Enum):
            raw = encode(f.value)
        else:
            raise TypeError(f"cannot encode {type(f).__name__}")
        out += struct.pack(">I", len(raw)) + raw
    return bytes(out)


@dataclass(frozen=True)
class KeyPair:
    party: PartyId
    secret: bytes
    public: bytes


@dataclass(frozen=True)
class Signature:
    signer: PartyId
    tag: bytes


class HmacScheme:
    """Deterministic keyed-tag signatures.

    Secrets are derived from a scenario seed. Verification needs the
    secret, so the scheme doubles as the trusted key directory of the
    simulation: ``public`` is an opaque handle looked up here.
    """

    def __init__(self, seed: bytes | str = b"starfish") -> None:
        self._seed = seed.encode() if isinstance(seed, str) else seed
        self._secrets: dict[bytes, bytes] = {}

    def keygen(self, party: PartyId) -> KeyPair:
        secret = hashlib.sha256(self._seed + b"/sk/" + party.encode()).digest()
        public = hashlib.sha256(b"pk/" + secret).digest()
        self._secrets[public] = secret
        return KeyPair(party, secret, public)

    def sign(self, keys: KeyPair, message: bytes) -> Signature:
        return Signature(keys.party, hmac.new(keys.secret, message, hashlib.sha256).digest())

    def verify(self, public: bytes, message: bytes, signature: Signature) -> bool:
        secret = self._secrets.get(public)
        if secret is None:
            return False
        expected = hmac.new(secret, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature.tag)


class Ed25519Scheme:
    """Asymmetric drop-in for :class:`HmacScheme` (needs ``cryptography``)."""

    def __init__(self, seed: bytes | str = b"starfish") -> None:
        self._seed = seed.encode() if isinstance(seed, str) else seed

    def keygen(self, party: PartyId) -> KeyPair:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
        from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

        secret = hashlib.sha256(self._seed + b"/sk/" + party.encode()).digest()
        sk = Ed25519PrivateKey.from_private_bytes(secret)
        public = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return KeyPair(party, secret, public)

    def sign(self, keys: KeyPair, message: bytes) -> Signature:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        return Signature(keys.party, Ed25519PrivateKey.from_private_bytes(keys.secret).sign(message))

    def verify(self, public: bytes, message: bytes, signature: Signature) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(public).verify(signature.tag, message)
        except (InvalidSignature, ValueError):
            return False
        return True


class StateKind(str, enum.Enum):
    MSG_C = "msgC"
    MSG_E = "msgE"
    MSG_M = "msgM"


@dataclass(frozen=True)
class SignedState:
    """Versioned state plus the signatures that endorse it.

    ``subject`` names the channel (msgC), the merge and edge user
    (msgE, as ``"<merge>/<user>"``) or the merge (msgM). ``payload`` is a
    sorted tuple of ``(party, amount)`` pairs: channel balances, edge
    balances, or the capacity vector keyed by edge user. ``epoch`` counts
    contract-side adjustments already folded into a channel state.
    """

    kind: StateKind
    subject: str
    version: int
    payload: tuple[tuple[PartyId, Coin], ...]
    epoch: int = 0
    signatures: tuple[Signature, ...] = ()

    @classmethod
    def build(
        cls,
        kind: StateKind,
        subject: str,
        version: int,
        values: Mapping[PartyId, Coin],
        epoch: int = 0,
    ) -> "SignedState":
        return cls(kind, subject, version, tuple(sorted(values.items())), epoch)

    @property
    def values(self) -> dict[PartyId, Coin]:
        return dict(self.payload)

    def message(self) -> bytes:
        return encode(self.kind.value, self.subject, self.version, self.epoch, self.payload)

    def signers(self) -> set[PartyId]:
        return {s.signer for s in self.signatures}

    def with_signature(self, sig: Signature) -> "SignedState":
        kept = tuple(s for s in self.signatures if s.signer != sig.signer)
        return SignedState(
            self.kind, self.subject, self.version, self.payload, self.epoch,
            tuple(sorted(kept + (sig,), key=lambda s: s.signer)),
        )

    def same_content(self, other: "SignedState") -> bool:
        return self.message() == other.message()


class KeyDirectory:
    """Party → public key map plus the scheme used to check signatures."""

    def __init__(self, scheme=None) -> None:
        self.scheme = scheme if scheme is not None else HmacScheme()
        self.public: dict[PartyId, bytes] = {}

    def register(self, party: PartyId) -> KeyPair:
        keys = self.scheme.keygen(party)
        self.public[party] = keys.public
        return keys

    def sign(self, keys: KeyPair, state: SignedState) -> SignedState:
        return state.with_signature(self.scheme.sign(keys, state.message()))

    def valid(self, state: SignedState, required: Iterable[PartyId]) -> bool:
        """True iff every attached signature verifies and ``required`` all signed."""
        msg = state.message()
        for sig in state.signatures:
            pk = self.public.get(sig.signer)
            if pk is None or not self.scheme.verify(pk, msg, sig):
                return False
        return set(required) <= state.signers()


# ---------------------------------------------------------------------------
# Conservation auditor
# ---------------------------------------------------------------------------


def total_coins(
    ledger: Ledger,
    channels: Iterable[Channel] = (),
    merges: Iterable[Merge] = (),
) -> Coin:
    """Ledger balances plus every coin locked in channels and merge edges."""
    total = ledger.total()
    total += sum(c.total() for c in channels if c.status is not ChannelStatus.CLOSED)
    for m in merges:
        if m.status is MergeStatus.ACTIVE:
            total += sum(sum(e.balanceE.values()) for e in m.edges)
    return total


def check_non_negative(
    ledger: Ledger, channels: Iterable[Channel] = (), merges: Iterable[Merge] = ()
) -> None:
    for party, v in ledger.balances.items():
        if v < 0:
            raise InvariantViolation(f"ledger: negative balance for {party}")
    for c in channels:
        c.check()
    for m in merges:
        if m.status is MergeStatus.ACTIVE:
            m.check()
