"""Identities, signed caching messages, transactions and the hash-chained block store.

Every structure serializes through one canonical byte encoding (fixed field
order, big-endian length prefixes), so hashes and signatures are stable across
platforms and any single-byte change is detectable. Signatures are Ed25519
(deterministic); content confidentiality is modeled by recipient-checked
envelopes rather than actual payload encryption, which keeps the integrity
and authenticity surface intact without affecting any measured quantity.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

HASH_BYTES = 32
ADDRESS_BYTES = 20
SIGNATURE_BYTES = 64
PUBLIC_KEY_BYTES = 32
DEFAULT_FRESHNESS_WINDOW_S = 60.0


class LedgerError(ValueError):
    """Base class for ledger rule violations."""


class BadSignatureError(LedgerError):
    pass


class StaleMessageError(LedgerError):
    pass


class InsufficientBalanceError(LedgerError):
    pass


class ChainIntegrityError(LedgerError):
    pass


class EncodingError(LedgerError):
    pass


# --- canonical byte encoding -------------------------------------------------

def enc_bytes(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b

def enc_str(s: str) -> bytes:
    return enc_bytes(s.encode("utf-8"))

def enc_f64(v: float) -> bytes:
    return struct.pack(">d", v)

def enc_u64(v: int) -> bytes:
    return struct.pack(">Q", v)


class Reader:
    """Strict cursor over a canonical byte string; any overrun is an error."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise EncodingError("truncated encoding")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def bytes_(self) -> bytes:
        (n,) = struct.unpack(">I", self.take(4))
        return self.take(n)

    def str_(self) -> str:
        return self.bytes_().decode("utf-8")

    def f64(self) -> float:
        return struct.unpack(">d", self.take(8))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def finish(self):
        if self._pos != len(self._data):
            raise EncodingError(f"{len(self._data) - self._pos} trailing bytes")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# --- keys, signatures, identities -------------------------------------------

def keypair_from_seed(seed: bytes) -> tuple[bytes, Ed25519PrivateKey]:
    """Deterministic keypair from 32 seed bytes; returns (raw public key, private)."""
    if len(seed) != 32:
        raise ValueError("key seed must be 32 bytes")
    sk = Ed25519PrivateKey.from_private_bytes(seed)
    pk = sk.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return pk, sk


def sign(sk: Ed25519PrivateKey, message: bytes) -> bytes:
    return sk.sign(message)


def verify(pk: bytes, message: bytes, signature: bytes) -> bool:
    """True iff the signature is valid for the message under the raw public key."""
    try:
        Ed25519PublicKey.from_public_bytes(pk).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


def batch_verify(items) -> bool:
    """All-or-nothing verification of (public key, message, signature) triples."""
    return all(verify(pk, msg, sig) for pk, msg, sig in items)


def wallet_address(pk: bytes) -> bytes:
    return sha256(pk)[:ADDRESS_BYTES]


@dataclass(frozen=True)
class Identity:
    """A registered participant: keys, CA certificate and derived wallet address.

    The certificate binds the public key to a hash of the registration record,
    so serialized artifacts never carry registration data in plaintext.
    """

    public_key: bytes
    private_key: Ed25519PrivateKey = field(repr=False)
    certificate: bytes
    registration_hash: bytes
    address: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "address", wallet_address(self.public_key))

    def sign(self, message: bytes) -> bytes:
        return sign(self.private_key, message)


class CertificateAuthority:
    """In-process CA issuing certificates over (public key, registration hash)."""

    def __init__(self, seed: bytes):
        self.public_key, self._private = keypair_from_seed(seed)

    def issue(self, key_seed: bytes, registration_info: bytes) -> Identity:
        pk, sk = keypair_from_seed(key_seed)
        reg_hash = sha256(registration_info)
        cert = sign(self._private, pk + reg_hash)
        return Identity(pk, sk, cert, reg_hash)

    def check_certificate(self, ident: Identity) -> bool:
        return verify(self.public_key,
                      ident.public_key + ident.registration_hash,
                      ident.certificate)


# --- envelopes and signed messages -------------------------------------------

@dataclass(frozen=True)
class Envelope:
    """Recipient-addressed wrapper standing in for public-key encryption."""

    recipient: bytes
    payload: bytes

    def open(self, ident: Identity) -> bytes:
        if ident.public_key != self.recipient:
            raise LedgerError("envelope addressed to a different recipient")
        return self.payload


def check_freshness(ts: float, now: float,
                    window: float = DEFAULT_FRESHNESS_WINDOW_S):
    if abs(now - ts) > window:
        raise StaleMessageError(f"timestamp {ts} outside {window}s window of {now}")


@dataclass(frozen=True)
class CachingRequest:
    """A requester announcing how much caching resource it needs and where it is."""

    cache_bytes: float
    location: tuple[float, float]
    public_key: bytes
    signature: bytes
    certificate: bytes
    registration_hash: bytes
    ts: float

    @staticmethod
    def signed_payload(cache_bytes: float, location) -> bytes:
        return enc_f64(cache_bytes) + enc_f64(location[0]) + enc_f64(location[1])

    @classmethod
    def create(cls, ident: Identity, cache_bytes: float, location, ts: float):
        payload = cls.signed_payload(cache_bytes, location)
        return cls(cache_bytes, tuple(location), ident.public_key,
                   ident.sign(payload), ident.certificate, ident.registration_hash, ts)

    def verify(self) -> bool:
        return verify(self.public_key,
                      self.signed_payload(self.cache_bytes, self.location),
                      self.signature)

    def to_bytes(self) -> bytes:
        return (enc_f64(self.cache_bytes) + enc_f64(self.location[0])
                + enc_f64(self.location[1]) + enc_bytes(self.public_key)
                + enc_bytes(self.signature) + enc_bytes(self.certificate)
                + enc_bytes(self.registration_hash) + enc_f64(self.ts))


@dataclass(frozen=True)
class ResourceAdvert:
    """A provider advertising its spare caching capacity."""

    capacity_bytes: float
    location: tuple[float, float]
    public_key: bytes
    signature: bytes
    certificate: bytes
    registration_hash: bytes
    ts: float

    @staticmethod
    def signed_payload(capacity_bytes: float, location) -> bytes:
        return enc_f64(capacity_bytes) + enc_f64(location[0]) + enc_f64(location[1])

    @classmethod
    def create(cls, ident: Identity, capacity_bytes: float, location, ts: float):
        payload = cls.signed_payload(capacity_bytes, location)
        return cls(capacity_bytes, tuple(location), ident.public_key,
                   ident.sign(payload), ident.certificate, ident.registration_hash, ts)

    def verify(self) -> bool:
        return verify(self.public_key,
                      self.signed_payload(self.capacity_bytes, self.location),
                      self.signature)

    def to_bytes(self) -> bytes:
        return (enc_f64(self.capacity_bytes) + enc_f64(self.location[0])
                + enc_f64(self.location[1]) + enc_bytes(self.public_key)
                + enc_bytes(self.signature) + enc_bytes(self.certificate)
                + enc_bytes(self.registration_hash) + enc_f64(self.ts))


@dataclass(frozen=True)
class MatchResponse:
    """Base-station reply completing one caching pair.

    The requester variant carries the provider's location, channel descriptor
    and public key; the provider variant carries the content's cache demand
    with the same channel descriptor. Both are signed by the station.
    """

    variant: str                # "requester" or "provider"
    cache_bytes: float          # provider variant; 0 for requester variant
    provider_location: tuple[float, float]
    channel_rate: float         # agreed link rate, bits/s
    counterpart_key: bytes      # provider key in the requester variant
    station_key: bytes
    signature: bytes
    ts: float

    @staticmethod
    def signed_payload(variant, cache_bytes, provider_location, channel_rate) -> bytes:
        return (enc_str(variant) + enc_f64(cache_bytes)
                + enc_f64(provider_location[0]) + enc_f64(provider_location[1])
                + enc_f64(channel_rate))

    @classmethod
    def create(cls, station: Identity, variant: str, cache_bytes: float,
               provider_location, channel_rate: float, counterpart_key: bytes,
               ts: float):
        if variant not in ("requester", "provider"):
            raise ValueError(f"unknown variant {variant!r}")
        payload = cls.signed_payload(variant, cache_bytes, provider_location, channel_rate)
        return cls(variant, cache_bytes, tuple(provider_location), channel_rate,
                   counterpart_key, station.public_key, station.sign(payload), ts)

    def verify(self) -> bool:
        return verify(self.station_key,
                      self.signed_payload(self.variant, self.cache_bytes,
                                          self.provider_location, self.channel_rate),
                      self.signature)


# --- transactions and blocks --------------------------------------------------

@dataclass(frozen=True)
class Transaction:
    """Record of one completed caching payment, signed by the paying requester.

    The signature covers payee and timestamp besides the amount: signatures
    are deterministic, so without that context two legitimate identical
    purchases would be indistinguishable from a replay.
    """

    cache_bytes: float
    coins: float
    payer: bytes      # wallet address, 20 bytes
    payee: bytes
    signature: bytes
    ts: float

    @staticmethod
    def signed_payload(cache_bytes: float, coins: float, payee: bytes,
                       ts: float) -> bytes:
        return enc_f64(cache_bytes) + enc_f64(coins) + enc_bytes(payee) + enc_f64(ts)

    @classmethod
    def create(cls, requester: Identity, provider_address: bytes,
               cache_bytes: float, coins: float, ts: float):
        sig = requester.sign(cls.signed_payload(cache_bytes, coins,
                                                provider_address, ts))
        return cls(cache_bytes, coins, requester.address, provider_address, sig, ts)

    def verify(self, payer_key: bytes) -> bool:
        if wallet_address(payer_key) != self.payer:
            return False
        return verify(payer_key,
                      self.signed_payload(self.cache_bytes, self.coins,
                                          self.payee, self.ts),
                      self.signature)

    def to_bytes(self) -> bytes:
        return (enc_f64(self.cache_bytes) + enc_f64(self.coins)
                + enc_bytes(self.payer) + enc_bytes(self.payee)
                + enc_bytes(self.signature) + enc_f64(self.ts))

    @classmethod
    def from_reader(cls, r: Reader) -> "Transaction":
        return cls(r.f64(), r.f64(), r.bytes_(), r.bytes_(), r.bytes_(), r.f64())


def merkle_root(tx_bytes: list[bytes]) -> bytes:
    """Pairwise SHA-256 tree over transaction encodings (odd leaves duplicate)."""
    if not tx_bytes:
        return sha256(b"")
    level = [sha256(t) for t in tx_bytes]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(level[k] + level[k + 1]) for k in range(0, len(level), 2)]
    return level[0]


@dataclass(frozen=True)
class Block:
    """One ledger entry: hash-linked header, transaction batch, leader signature."""

    index: int
    prev_hash: bytes
    timestamp: float
    transactions: tuple[Transaction, ...]
    producer_key: bytes
    hash: bytes
    leader_signature: bytes

    @staticmethod
    def compute_hash(index: int, prev_hash: bytes, timestamp: float,
                     transactions, producer_key: bytes) -> bytes:
        header = (enc_u64(index) + enc_bytes(prev_hash) + enc_f64(timestamp)
                  + enc_bytes(producer_key))
        return sha256(header + merkle_root([t.to_bytes() for t in transactions]))

    @classmethod
    def create(cls, index: int, prev_hash: bytes, timestamp: float,
               transactions, producer: Identity) -> "Block":
        txs = tuple(transactions)
        digest = cls.compute_hash(index, prev_hash, timestamp, txs, producer.public_key)
        return cls(index, prev_hash, timestamp, txs, producer.public_key,
                   digest, producer.sign(digest))

    def recomputed_hash(self) -> bytes:
        return self.compute_hash(self.index, self.prev_hash, self.timestamp,
                                 self.transactions, self.producer_key)

    def verify_integrity(self) -> bool:
        """Hash recomputes, the leader signed it, and every transaction verifies structurally."""
        if self.recomputed_hash() != self.hash:
            return False
        if not verify(self.producer_key, self.hash, self.leader_signature):
            return False
        for tx in self.transactions:
            if len(tx.payer) != ADDRESS_BYTES or len(tx.payee) != ADDRESS_BYTES:
                return False
            if len(tx.signature) != SIGNATURE_BYTES:
                return False
        return True

    def to_bytes(self) -> bytes:
        body = (enc_u64(self.index) + enc_bytes(self.prev_hash)
                + enc_f64(self.timestamp) + enc_bytes(self.producer_key)
                + enc_bytes(self.hash) + enc_bytes(self.leader_signature)
                + struct.pack(">I", len(self.transactions)))
        for tx in self.transactions:
            body += tx.to_bytes()
        return body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        r = Reader(data)
        block = cls.read_from(r)
        r.finish()
        return block

    @classmethod
    def read_from(cls, r: Reader) -> "Block":
        index = r.u64()
        prev_hash = r.bytes_()
        timestamp = r.f64()
        producer = r.bytes_()
        digest = r.bytes_()
        sig = r.bytes_()
        (n,) = struct.unpack(">I", r.take(4))
        txs = tuple(Transaction.from_reader(r) for _ in range(n))
        return cls(index, prev_hash, timestamp, txs, producer, digest, sig)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "prev_hash": self.prev_hash.hex(),
            "timestamp": self.timestamp,
            "hash": self.hash.hex(),
            "producer_key": self.producer_key.hex(),
            "leader_signature": self.leader_signature.hex(),
            "transactions": [
                {
                    "cache_bytes": t.cache_bytes,
                    "coins": t.coins,
                    "payer": t.payer.hex(),
                    "payee": t.payee.hex(),
                    "signature": t.signature.hex(),
                    "ts": t.ts,
                }
                for t in self.transactions
            ],
        }


GENESIS_HASH = sha256(b"veccache-genesis")


class Chain:
    """Append-only block store with duplicate-transaction rejection."""

    def __init__(self):
        self.blocks: list[Block] = []
        self._seen_signatures: set[bytes] = set()

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def head_hash(self) -> bytes:
        return self.blocks[-1].hash if self.blocks else GENESIS_HASH

    @property
    def next_index(self) -> int:
        return len(self.blocks)

    def seen(self, signature: bytes) -> bool:
        return signature in self._seen_signatures

    def append_block(self, block: Block):
        """Extend the chain after re-checking linkage, integrity and replay rules."""
        if block.prev_hash != self.head_hash:
            raise ChainIntegrityError(
                f"block {block.index} does not link to the chain head")
        if block.index != self.next_index:
            raise ChainIntegrityError(
                f"block index {block.index}, expected {self.next_index}")
        if not block.verify_integrity():
            raise ChainIntegrityError(f"block {block.index} fails integrity checks")
        for tx in block.transactions:
            if tx.signature in self._seen_signatures:
                raise ChainIntegrityError("duplicate transaction signature (replay)")
        for tx in block.transactions:
            self._seen_signatures.add(tx.signature)
        self.blocks.append(block)

    def revalidate(self) -> bool:
        """Recompute every hash and signature from scratch; True iff untouched."""
        prev = GENESIS_HASH
        seen: set[bytes] = set()
        for k, block in enumerate(self.blocks):
            if block.index != k or block.prev_hash != prev:
                return False
            if not block.verify_integrity():
                return False
            for tx in block.transactions:
                if tx.signature in seen:
                    return False
                seen.add(tx.signature)
            prev = block.hash
        return True

    def dump(self) -> bytes:
        out = struct.pack(">I", len(self.blocks))
        for block in self.blocks:
            out += enc_bytes(block.to_bytes())
        return out

    @classmethod
    def load(cls, data: bytes) -> "Chain":
        r = Reader(data)
        (n,) = struct.unpack(">I", r.take(4))
        chain = cls()
        for _ in range(n):
            chain.append_block(Block.from_bytes(r.bytes_()))
        r.finish()
        return chain


class Bank:
    """Wallet balances; transfers are atomic and coins are only minted at genesis."""

    def __init__(self):
        self.balances: dict[bytes, float] = {}

    def mint(self, address: bytes, coins: float):
        if coins < 0:
            raise ValueError("cannot mint a negative balance")
        self.balances[address] = self.balances.get(address, 0.0) + coins

    def balance(self, address: bytes) -> float:
        return self.balances.get(address, 0.0)

    def total(self) -> float:
        return float(sum(self.balances.values()))

    def transfer(self, payer: bytes, payee: bytes, coins: float):
        if coins < 0:
            raise ValueError("cannot transfer a negative amount")
        if self.balances.get(payer, 0.0) < coins:
            raise InsufficientBalanceError(
                f"balance {self.balances.get(payer, 0.0)} < payment {coins}")
        self.balances[payer] = self.balances[payer] - coins
        self.balances[payee] = self.balances.get(payee, 0.0) + coins


@dataclass(frozen=True)
class DeliveryEvent:
    """Tells the simulator to schedule the content transfer for a matched pair."""

    requester_key: bytes
    provider_key: bytes
    cache_bytes: float
    latency_s: float


def execute_contract(resp_requester: MatchResponse, resp_provider: MatchResponse,
                     requester: Identity, provider: Identity, bank: Bank,
                     cache_price: float, payload_bits: float, now: float,
                     freshness_window: float = DEFAULT_FRESHNESS_WINDOW_S,
                     ) -> tuple[Transaction, DeliveryEvent]:
    """Run the two-step caching contract: trigger delivery, then move the coins.

    Aborts without any effect when a station signature fails, a response is
    stale, or the payer cannot cover the price.
    """
    if resp_requester.variant != "requester" or resp_provider.variant != "provider":
        raise LedgerError("contract needs one requester-side and one provider-side response")
    if not resp_requester.verify() or not resp_provider.verify():
        raise BadSignatureError("station signature on a match response is invalid")
    check_freshness(resp_requester.ts, now, freshness_window)
    check_freshness(resp_provider.ts, now, freshness_window)

    cache_bytes = resp_provider.cache_bytes
    coins = cache_price * cache_bytes
    if bank.balance(requester.address) < coins:
        raise InsufficientBalanceError(
            f"requester holds {bank.balance(requester.address)}, needs {coins}")

    rate = resp_provider.channel_rate
    latency = payload_bits / rate if rate > 0 else math.inf
    tx = Transaction.create(requester, provider.address, cache_bytes, coins, now)
    bank.transfer(requester.address, provider.address, coins)
    event = DeliveryEvent(requester.public_key, provider.public_key,
                          cache_bytes, latency)
    return tx, event
