"""Node-level operations: contribute, verify, mine, consume, authenticate.

Verification failures are verdicts, not exceptions: every check lands in a
VerificationResult and `genuine` is true only when a payload was identified
and every performed check passed.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import cas
from .config import NodeConfig
from .errors import AudiochainError
from .fingerprint import (DEFAULT_PARAMS, compare_fingerprints, compute_fingerprint,
                          decode_fingerprint, encode_fingerprint, MalformedEncoding,
                          ParamsMismatch)
from .ledger import (Block, Ledger, MAC_RE, MiningCancelled, PayloadV1, proof_of_work)
from .peers import PeerRegistry, announce_block, broadcast_transaction, resolve_conflicts
from .wav import new_content_id, read_wav, write_wav

log = logging.getLogger(__name__)

MAX_FUTURE_SKEW_SECONDS = 300.0


class UnknownContentId(AudiochainError):
    pass


class RoleError(AudiochainError):
    pass


class NoPending(AudiochainError):
    def __init__(self, message="no pending transactions", rejections=None):
        super().__init__(message)
        self.rejections = rejections or []


@dataclass
class VerificationCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class VerificationResult:
    genuine: bool
    checks: list = field(default_factory=list)
    payload: PayloadV1 | None = None

    def failed_checks(self) -> list:
        return [c for c in self.checks if not c.passed]


@dataclass
class ContributionReceipt:
    content_id: str
    cid: str
    payload: PayloadV1
    delivery: object = None


def duration_tolerance(sample_rate: int) -> float:
    return 1.0 / sample_rate


def plausibility_check(payload: PayloadV1, now: float | None = None) -> VerificationCheck:
    """Sanity limits on the claimed capture context: MAC shape, GPS range, clock."""
    now = time.time() if now is None else now
    problems = []
    if not MAC_RE.match(payload.deviceMacAdd or ""):
        problems.append(f"MAC {payload.deviceMacAdd!r} malformed")
    if payload.deviceGpsInfo is not None:
        lat, lon = payload.deviceGpsInfo
        if not (-90 <= lat <= 90 and -180 <= lon <= 180):
            problems.append(f"GPS ({lat}, {lon}) out of range")
    if payload.recTimestamp > now + MAX_FUTURE_SKEW_SECONDS:
        problems.append(f"recTimestamp {payload.recTimestamp} is in the future")
    return VerificationCheck("plausibility", not problems, "; ".join(problems))


def verify_clip_against_payload(clip, embedded_id, payload: PayloadV1,
                                params=DEFAULT_PARAMS,
                                now: float | None = None) -> list:
    """The audio-vs-record checks shared by miners, players, and the CLI."""
    checks = []
    try:
        claimed = decode_fingerprint(payload.recSignature, expected_params=params)
        actual = compute_fingerprint(clip, params)
        report = compare_fingerprints(actual, claimed)
        checks.append(VerificationCheck(
            "fingerprint", report.identical,
            "" if report.identical else f"bit error rate {report.bit_error_rate}"))
    except (MalformedEncoding, ParamsMismatch, AudiochainError) as exc:
        checks.append(VerificationCheck("fingerprint", False, str(exc)))
    tolerance = duration_tolerance(clip.sample_rate)
    try:
        duration_ok = abs(payload.recDuration - clip.duration) <= tolerance
        detail = "" if duration_ok else (
            f"claimed {payload.recDuration}, audio is {clip.duration}")
    except TypeError:
        duration_ok, detail = False, f"recDuration {payload.recDuration!r} not a number"
    checks.append(VerificationCheck("duration", duration_ok, detail))
    channels_ok = payload.recNumChannels == len(clip.channels)
    checks.append(VerificationCheck(
        "channels", channels_ok,
        "" if channels_ok else f"claimed {payload.recNumChannels}, "
                               f"audio has {len(clip.channels)}"))
    id_ok = embedded_id == payload.contentId
    checks.append(VerificationCheck(
        "contentId", id_ok,
        "" if id_ok else f"embedded {embedded_id!r} != recorded {payload.contentId!r}"))
    checks.append(plausibility_check(payload, now))
    return checks


def authenticate_clip(clip, embedded_id, payloads, params=DEFAULT_PARAMS) -> VerificationResult:
    """Authenticate an unknown clip against a list of confirmed payloads.

    An embedded content id is tried first; otherwise (or when the id is not
    on the chain) a linear scan looks for a payload with an identical
    fingerprint and a matching duration.
    """
    by_id = {p.contentId: p for p in payloads}
    if embedded_id is not None and embedded_id in by_id:
        payload = by_id[embedded_id]
        checks = verify_clip_against_payload(clip, embedded_id, payload, params)
        return VerificationResult(all(c.passed for c in checks), checks, payload)
    encoded = encode_fingerprint(compute_fingerprint(clip, params))
    tolerance = duration_tolerance(clip.sample_rate)
    for payload in payloads:
        if payload.recSignature != encoded:
            continue
        if abs(payload.recDuration - clip.duration) > tolerance:
            continue
        checks = [VerificationCheck("fingerprint", True),
                  VerificationCheck("duration", True)]
        return VerificationResult(True, checks, payload)
    detail = "no confirmed recording matches this audio"
    if embedded_id is not None:
        detail = f"embedded id {embedded_id} not on the chain; {detail}"
    return VerificationResult(False, [VerificationCheck("fingerprint", False, detail)])


class Node:
    """One participant: a ledger, an object store, peers, and a device identity."""

    def __init__(self, config: NodeConfig):
        self.config = config.validate()
        storage = Path(config.storage_dir)
        storage.mkdir(parents=True, exist_ok=True)
        self.ledger = Ledger(difficulty=config.difficulty, path=storage / "chain.json")
        self.store = cas.LocalStore(storage / "objects")
        self.registry = PeerRegistry(config.url, seeds=config.peers)
        self.params = DEFAULT_PARAMS
        self.mining_cancel = threading.Event()

    # -- recorder ----------------------------------------------------------

    def contribute(self, wav_bytes: bytes, filename: str) -> ContributionReceipt:
        """Tag, store, fingerprint, and announce a new recording.

        Parsing happens first, so bad bytes leave no trace in the store or
        the pool.
        """
        if "recorder" not in self.config.roles:
            raise RoleError(f"node roles {self.config.roles} do not allow recording")
        clip, _ = read_wav(wav_bytes)
        content_id = new_content_id()
        tagged = write_wav(clip, content_id)
        cid = self.store.put(tagged)
        payload = PayloadV1(
            version="1",
            recFileName=filename,
            recTimestamp=time.time(),
            recDuration=clip.duration,
            recNumChannels=len(clip.channels),
            deviceMaker=self.config.device_maker,
            deviceModel=self.config.device_model,
            deviceMacAdd=self.config.device_mac,
            deviceGpsInfo=self.config.device_gps,
            ipfsHash=cid,
            contentId=content_id,
            recSignature=encode_fingerprint(compute_fingerprint(clip, self.params)),
        )
        self.ledger.add_pending(payload)
        delivery = broadcast_transaction(self.registry, payload)
        return ContributionReceipt(content_id, cid, payload, delivery)

    # -- miner -------------------------------------------------------------

    def verify_transaction(self, payload: PayloadV1) -> VerificationResult:
        """Fetch the referenced audio and check it against its payload."""
        try:
            data = self.store.get(payload.ipfsHash, self.registry)
        except (cas.NotFound, cas.IntegrityViolation, cas.IoFailure, ValueError) as exc:
            checks = [VerificationCheck("cid", False,
                                        f"{type(exc).__name__}: {exc}")]
            return VerificationResult(False, checks, payload)
        checks = [VerificationCheck("cid", True)]
        try:
            clip, embedded_id = read_wav(data)
        except AudiochainError as exc:
            checks.append(VerificationCheck("fingerprint", False,
                                            f"audio unreadable: {exc}"))
            return VerificationResult(False, checks, payload)
        checks.extend(verify_clip_against_payload(clip, embedded_id, payload,
                                                  self.params))
        return VerificationResult(all(c.passed for c in checks), checks, payload)

    def resolve(self):
        """Pull peers' chains and adopt a strictly longer valid one."""
        report = resolve_conflicts(self.registry, self.ledger)
        if report.adopted:
            self.mining_cancel.set()
            log.info("adopted chain of length %d from %s (re-queued %d)",
                     report.new_length, report.source_peer, report.requeued)
        return report

    def mine_one(self) -> Block:
        """Verify the oldest acceptable pending transaction and mine it.

        Transactions failing verification are dropped (with a logged reason);
        raises NoPending when the pool runs dry and MiningCancelled when a
        competing block or chain arrives mid-search.
        """
        if self.registry.peers:
            self.resolve()
        rejections = []
        while True:
            payload = self.ledger.pop_oldest_pending()
            if payload is None:
                raise NoPending(rejections=rejections)
            if self.ledger.has_content_id(payload.contentId):
                log.warning("rejected transaction %s: duplicate contentId",
                            payload.contentId)
                rejections.append({"contentId": payload.contentId,
                                   "check": "DuplicateContentId"})
                continue
            result = self.verify_transaction(payload)
            if not result.genuine:
                failed = result.failed_checks()[0]
                log.warning("rejected transaction %s: %s check failed (%s)",
                            payload.contentId, failed.name, failed.detail)
                rejections.append({"contentId": payload.contentId,
                                   "check": failed.name, "detail": failed.detail})
                continue
            break
        self.mining_cancel.clear()
        tip = self.ledger.tip()
        block = Block(index=tip.index + 1, transactions=[payload],
                      timestamp=time.time(), previous_hash=tip.hash)
        try:
            proof_of_work(block, self.ledger.difficulty, cancel=self.mining_cancel)
        except MiningCancelled:
            if self.ledger.requeue_front(payload):
                log.info("mining cancelled, re-queued %s", payload.contentId)
            raise
        verdict = self.ledger.append(block)
        if not verdict:
            self.ledger.requeue_front(payload)
            raise MiningCancelled(
                f"chain advanced while mining block {block.index}: {verdict.check}")
        delivery = announce_block(self.registry, block)
        if delivery.saw_conflict:
            self.resolve()
        return block

    def receive_block(self, block: Block) -> tuple:
        """Handle a peer's announcement: ("accepted"|"conflict"|"rejected", detail)."""
        tip = self.ledger.tip()
        if block.index != tip.index + 1:
            return "conflict", f"tip is {tip.index}, announced {block.index}"
        verdict = self.ledger.append(block)
        if verdict:
            self.mining_cancel.set()
            return "accepted", ""
        if verdict.check == "BadLinkage":
            return "conflict", "previous_hash does not match our tip"
        return "rejected", verdict.check

    # -- player ------------------------------------------------------------

    def consume(self, content_id: str):
        """Fetch and verify a confirmed recording: (clip or None, result)."""
        found = self.ledger.find_payload(content_id)
        if found is None:
            raise UnknownContentId(content_id)
        _, payload = found
        result = self.verify_transaction(payload)
        clip = None
        if result.checks and result.checks[0].name == "cid" and result.checks[0].passed:
            try:
                clip, _ = read_wav(self.store.get(payload.ipfsHash, self.registry))
            except AudiochainError:
                clip = None
        return clip, result

    def authenticate_unknown(self, wav_bytes: bytes) -> VerificationResult:
        """Authenticate WAV bytes of unknown origin against the chain."""
        clip, embedded_id = read_wav(wav_bytes)
        return authenticate_clip(clip, embedded_id, self.ledger.payloads(), self.params)
