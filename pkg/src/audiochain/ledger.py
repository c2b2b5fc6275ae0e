"""Proof-of-work ledger: payloads, blocks, validation, pending pool, persistence.

Hashes are computed over a canonical JSON form: UTF-8, keys sorted at every
level, no whitespace, floats in shortest round-trip form, and no "hash" key.
Every mutation of a Ledger (chain + pending pool) happens under a single
writer lock; the chain file is rewritten atomically after each accepted block.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
from dataclasses import dataclass
from pathlib import Path

from . import cas
from .errors import AudiochainError

PAYLOAD_MAX_BYTES = 1_000_000
GENESIS_PREVIOUS_HASH = "0"
DEFAULT_DIFFICULTY = 2

MAC_RE = re.compile(r"^[0-9A-Fa-f]{2}(:[0-9A-Fa-f]{2}){5}$")
CONTENT_ID_RE = re.compile(r"^[0-9a-f]{32}$")


class SerializationError(AudiochainError):
    pass


class DuplicateContentId(AudiochainError):
    pass


class PayloadInvalid(AudiochainError):
    def __init__(self, fieldname, reason):
        super().__init__(f"{fieldname}: {reason}")
        self.field = fieldname


class PayloadTooLarge(AudiochainError):
    pass


class MiningCancelled(AudiochainError):
    pass


class ChainFormatError(AudiochainError):
    pass


def _reject_nonfinite(token):
    raise ChainFormatError(f"non-finite number {token!r} in JSON")


def loads_strict(text):
    """json.loads that refuses NaN/Infinity tokens."""
    return json.loads(text, parse_constant=_reject_nonfinite)


def canonical_json(obj) -> str:
    try:
        return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                          allow_nan=False, ensure_ascii=False)
    except ValueError as exc:
        raise SerializationError(f"non-finite float: {exc}") from exc
    except TypeError as exc:
        raise SerializationError(str(exc)) from exc


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


@dataclass
class PayloadV1:
    """One recording's transaction payload.

    Field names mirror the on-chain JSON keys exactly. Numeric fields keep
    whatever numeric type they arrived with so a received block re-serializes
    to the same bytes it was hashed over.
    """

    version: str
    recFileName: str
    recTimestamp: float
    recDuration: float
    recNumChannels: int
    deviceMaker: str
    deviceModel: str
    deviceMacAdd: str
    ipfsHash: str
    contentId: str
    recSignature: str
    deviceGpsInfo: tuple | None = None

    REQUIRED_KEYS = frozenset({
        "version", "recFileName", "recTimestamp", "recDuration",
        "recNumChannels", "deviceMaker", "deviceModel", "deviceMacAdd",
        "ipfsHash", "contentId", "recSignature",
    })
    OPTIONAL_KEYS = frozenset({"deviceGpsInfo"})

    def to_dict(self) -> dict:
        d = {
            "version": self.version,
            "recFileName": self.recFileName,
            "recTimestamp": self.recTimestamp,
            "recDuration": self.recDuration,
            "recNumChannels": self.recNumChannels,
            "deviceMaker": self.deviceMaker,
            "deviceModel": self.deviceModel,
            "deviceMacAdd": self.deviceMacAdd,
            "ipfsHash": self.ipfsHash,
            "contentId": self.contentId,
            "recSignature": self.recSignature,
        }
        if self.deviceGpsInfo is not None:
            d["deviceGpsInfo"] = list(self.deviceGpsInfo)
        return d

    @classmethod
    def from_dict(cls, d) -> "PayloadV1":
        if not isinstance(d, dict):
            raise PayloadInvalid("payload", "not an object")
        keys = set(d)
        missing = cls.REQUIRED_KEYS - keys
        if missing:
            raise PayloadInvalid(sorted(missing)[0], "missing")
        unknown = keys - cls.REQUIRED_KEYS - cls.OPTIONAL_KEYS
        if unknown:
            raise PayloadInvalid(sorted(unknown)[0], "unknown field")
        gps = d.get("deviceGpsInfo")
        if isinstance(gps, (list, tuple)):
            gps = tuple(gps)
        kwargs = {k: d[k] for k in cls.REQUIRED_KEYS}
        return cls(deviceGpsInfo=gps, **kwargs)

    def validate(self) -> None:
        """Raise PayloadInvalid on the first field violating an invariant."""
        if self.version != "1":
            raise PayloadInvalid("version", f"expected '1', got {self.version!r}")
        if not isinstance(self.recFileName, str) or not self.recFileName:
            raise PayloadInvalid("recFileName", "must be a non-empty string")
        if not _is_number(self.recTimestamp) or not math.isfinite(self.recTimestamp):
            raise PayloadInvalid("recTimestamp", "must be a finite number")
        if not _is_number(self.recDuration) or not math.isfinite(self.recDuration) \
                or self.recDuration <= 0:
            raise PayloadInvalid("recDuration", "must be a positive number")
        if not isinstance(self.recNumChannels, int) or isinstance(self.recNumChannels, bool) \
                or self.recNumChannels < 1:
            raise PayloadInvalid("recNumChannels", "must be an integer >= 1")
        if not isinstance(self.deviceMaker, str):
            raise PayloadInvalid("deviceMaker", "must be a string")
        if not isinstance(self.deviceModel, str):
            raise PayloadInvalid("deviceModel", "must be a string")
        if not isinstance(self.deviceMacAdd, str) or not MAC_RE.match(self.deviceMacAdd):
            raise PayloadInvalid("deviceMacAdd", "must look like aa:bb:cc:dd:ee:ff")
        if self.deviceGpsInfo is not None:
            gps = self.deviceGpsInfo
            if not isinstance(gps, tuple) or len(gps) != 2 \
                    or not all(_is_number(v) and math.isfinite(v) for v in gps):
                raise PayloadInvalid("deviceGpsInfo", "must be a [lat, lon] pair")
            lat, lon = gps
            if not (-90 <= lat <= 90) or not (-180 <= lon <= 180):
                raise PayloadInvalid("deviceGpsInfo", f"out of range: {lat}, {lon}")
        if not cas.is_valid_cid(self.ipfsHash):
            raise PayloadInvalid("ipfsHash", "not a valid content address")
        if not isinstance(self.contentId, str) or not CONTENT_ID_RE.match(self.contentId):
            raise PayloadInvalid("contentId", "must be 32 lowercase hex chars")
        if not isinstance(self.recSignature, str) or not self.recSignature:
            raise PayloadInvalid("recSignature", "must be a non-empty string")

    def serialized_size(self) -> int:
        return len(canonical_json(self.to_dict()).encode("utf-8"))


@dataclass
class Block:
    index: int
    transactions: list
    timestamp: float
    previous_hash: str
    nonce: int = 0
    hash: str = ""

    def to_dict(self, include_hash: bool = True) -> dict:
        d = {
            "index": self.index,
            "transactions": [t.to_dict() for t in self.transactions],
            "timestamp": self.timestamp,
            "previous_hash": self.previous_hash,
            "nonce": self.nonce,
        }
        if include_hash:
            d["hash"] = self.hash
        return d

    @classmethod
    def from_dict(cls, d) -> "Block":
        if not isinstance(d, dict):
            raise ChainFormatError("block is not an object")
        expected = {"index", "transactions", "timestamp", "previous_hash", "nonce", "hash"}
        if set(d) != expected:
            raise ChainFormatError(f"block keys {sorted(d)} != {sorted(expected)}")
        index, nonce = d["index"], d["nonce"]
        if not isinstance(index, int) or isinstance(index, bool):
            raise ChainFormatError("index must be an integer")
        if not isinstance(nonce, int) or isinstance(nonce, bool):
            raise ChainFormatError("nonce must be an integer")
        if not _is_number(d["timestamp"]):
            raise ChainFormatError("timestamp must be a number")
        if not isinstance(d["previous_hash"], str) or not isinstance(d["hash"], str):
            raise ChainFormatError("previous_hash and hash must be strings")
        if not isinstance(d["transactions"], list):
            raise ChainFormatError("transactions must be a list")
        try:
            txs = [PayloadV1.from_dict(t) for t in d["transactions"]]
        except PayloadInvalid as exc:
            raise ChainFormatError(f"bad transaction: {exc}") from exc
        return cls(index=index, transactions=txs, timestamp=d["timestamp"],
                   previous_hash=d["previous_hash"], nonce=nonce, hash=d["hash"])


def canonical_serialize(block: Block, include_hash: bool = True) -> bytes:
    return canonical_json(block.to_dict(include_hash=include_hash)).encode("utf-8")


def block_hash(block: Block) -> str:
    """SHA-256 hex digest over the block's canonical form without its hash."""
    return hashlib.sha256(canonical_serialize(block, include_hash=False)).hexdigest()


def make_genesis() -> Block:
    g = Block(index=0, transactions=[], timestamp=0, previous_hash=GENESIS_PREVIOUS_HASH,
              nonce=0)
    g.hash = block_hash(g)
    return g


def proof_of_work(block: Block, difficulty: int, cancel=None) -> Block:
    """Search nonces from 0 upward until the hash gains `difficulty` leading '0's.

    Deterministic for fixed block contents. If `cancel` (a threading.Event)
    gets set, the loop raises MiningCancelled between attempts.
    """
    if difficulty < 1:
        raise ValueError("difficulty must be >= 1")
    prefix = "0" * difficulty
    nonce = 0
    while True:
        if cancel is not None and cancel.is_set():
            raise MiningCancelled(f"mining of block {block.index} cancelled")
        block.nonce = nonce
        h = block_hash(block)
        if h.startswith(prefix):
            block.hash = h
            return block
        nonce += 1


@dataclass
class Verdict:
    ok: bool
    check: str | None = None
    index: int | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


def _payload_verdict(block: Block) -> Verdict | None:
    if len(block.transactions) == 0:
        return Verdict(False, "MissingTransaction", block.index)
    if len(block.transactions) > 1:
        return Verdict(False, "TooManyTransactions", block.index,
                       f"{len(block.transactions)} transactions")
    payload = block.transactions[0]
    try:
        payload.validate()
    except PayloadInvalid as exc:
        return Verdict(False, "PayloadInvalid", block.index, str(exc))
    if payload.serialized_size() > PAYLOAD_MAX_BYTES:
        return Verdict(False, "PayloadTooLarge", block.index)
    return None


def validate_block(block: Block, prev: Block, difficulty: int) -> Verdict:
    """Check one block against its predecessor; first failing check names the verdict."""
    if block.index != prev.index + 1:
        return Verdict(False, "BadIndex", block.index,
                       f"expected {prev.index + 1}, got {block.index}")
    if block.previous_hash != prev.hash:
        return Verdict(False, "BadLinkage", block.index)
    try:
        recomputed = block_hash(block)
    except SerializationError as exc:
        return Verdict(False, "HashMismatch", block.index, str(exc))
    if recomputed != block.hash:
        return Verdict(False, "HashMismatch", block.index)
    if not block.hash.startswith("0" * difficulty):
        return Verdict(False, "InvalidProof", block.index,
                       f"needs {difficulty} leading zeros")
    bad = _payload_verdict(block)
    if bad is not None:
        return bad
    return Verdict(True, index=block.index)


def validate_chain(blocks, difficulty: int) -> Verdict:
    """Validate a whole chain; fails at the earliest offending index."""
    if not blocks:
        return Verdict(False, "NoGenesis")
    if blocks[0] != make_genesis():
        return Verdict(False, "BadGenesis", 0)
    for prev, block in zip(blocks, blocks[1:]):
        verdict = validate_block(block, prev, difficulty)
        if not verdict:
            return verdict
    return Verdict(True)


def chain_to_json(blocks) -> str:
    return "[" + ",".join(canonical_json(b.to_dict()) for b in blocks) + "]"


def blocks_from_json(obj) -> list:
    """Parse a chain from JSON text or an already-loaded list of dicts."""
    if isinstance(obj, str):
        try:
            obj = loads_strict(obj)
        except json.JSONDecodeError as exc:
            raise ChainFormatError(f"chain file is not JSON: {exc}") from exc
    if not isinstance(obj, list):
        raise ChainFormatError("chain JSON must be an array of blocks")
    return [Block.from_dict(d) for d in obj]


class Ledger:
    """Chain plus pending pool behind one writer lock, persisted to one file."""

    def __init__(self, difficulty: int = DEFAULT_DIFFICULTY, path=None):
        if difficulty < 1:
            raise ValueError("difficulty must be >= 1")
        self.difficulty = difficulty
        self.path = Path(path) if path is not None else None
        self.lock = threading.RLock()
        self.pending: list[PayloadV1] = []
        if self.path is not None and self.path.exists():
            blocks = blocks_from_json(self.path.read_text(encoding="utf-8"))
            verdict = validate_chain(blocks, difficulty)
            if not verdict:
                raise ChainFormatError(
                    f"persisted chain invalid: {verdict.check} at index {verdict.index}")
            self.blocks = blocks
        else:
            self.blocks = [make_genesis()]
            self._persist()
        self._content_ids = {p.contentId for b in self.blocks for p in b.transactions}

    def __len__(self) -> int:
        with self.lock:
            return len(self.blocks)

    def tip(self) -> Block:
        with self.lock:
            return self.blocks[-1]

    def snapshot(self) -> list:
        with self.lock:
            return list(self.blocks)

    def payloads(self) -> list:
        with self.lock:
            return [p for b in self.blocks for p in b.transactions]

    def has_content_id(self, content_id: str) -> bool:
        with self.lock:
            return content_id in self._content_ids

    def find_payload(self, content_id: str):
        """Return (block_index, payload) for a confirmed contentId, or None."""
        with self.lock:
            for b in self.blocks:
                for p in b.transactions:
                    if p.contentId == content_id:
                        return b.index, p
        return None

    # -- pending pool ------------------------------------------------------

    def add_pending(self, payload: PayloadV1) -> None:
        payload.validate()
        if payload.serialized_size() > PAYLOAD_MAX_BYTES:
            raise PayloadTooLarge(
                f"payload serializes to more than {PAYLOAD_MAX_BYTES} bytes")
        with self.lock:
            if payload.contentId in self._content_ids \
                    or any(p.contentId == payload.contentId for p in self.pending):
                raise DuplicateContentId(payload.contentId)
            self.pending.append(payload)

    def pending_snapshot(self) -> list:
        with self.lock:
            return list(self.pending)

    def pop_oldest_pending(self):
        with self.lock:
            if not self.pending:
                return None
            return self.pending.pop(0)

    def requeue_front(self, payload: PayloadV1) -> bool:
        """Put a popped payload back at the head of the queue if still unconfirmed."""
        with self.lock:
            if payload.contentId in self._content_ids:
                return False
            if any(p.contentId == payload.contentId for p in self.pending):
                return False
            self.pending.insert(0, payload)
            return True

    # -- chain mutation ----------------------------------------------------

    def append(self, block: Block) -> Verdict:
        """Validate a block against the current tip and append it if it passes."""
        with self.lock:
            verdict = validate_block(block, self.blocks[-1], self.difficulty)
            if not verdict:
                return verdict
            payload = block.transactions[0]
            if payload.contentId in self._content_ids:
                return Verdict(False, "DuplicateContentId", block.index, payload.contentId)
            self.blocks.append(block)
            self._content_ids.add(payload.contentId)
            self.pending = [p for p in self.pending if p.contentId != payload.contentId]
            self._persist()
            return verdict

    def adopt(self, blocks) -> list:
        """Replace the chain with a longer validated one.

        Transactions confirmed in the old chain but absent from the new one go
        back to the head of the pending pool (in their original order); pool
        entries the new chain confirms are dropped. Returns the re-queued
        payloads.
        """
        verdict = validate_chain(blocks, self.difficulty)
        if not verdict:
            raise ChainFormatError(
                f"refusing to adopt invalid chain: {verdict.check} at {verdict.index}")
        with self.lock:
            if len(blocks) <= len(self.blocks):
                raise ValueError("adopt requires a strictly longer chain")
            new_ids = {p.contentId for b in blocks for p in b.transactions}
            lost = [p for b in self.blocks for p in b.transactions
                    if p.contentId not in new_ids]
            self.blocks = list(blocks)
            self._content_ids = new_ids
            self.pending = [p for p in self.pending if p.contentId not in new_ids]
            requeued = []
            for payload in reversed(lost):
                if self.requeue_front(payload):
                    requeued.append(payload)
            self._persist()
            return list(reversed(requeued))

    def validate(self) -> Verdict:
        with self.lock:
            return validate_chain(self.blocks, self.difficulty)

    def _persist(self) -> None:
        if self.path is None:
            return
        tmp = self.path.with_name(self.path.name + ".tmp")
        tmp.write_text(chain_to_json(self.blocks), encoding="utf-8")
        tmp.replace(self.path)
