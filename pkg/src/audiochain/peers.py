"""Peer registry and the HTTP client side of the node protocol."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from urllib.parse import urlsplit

import requests

from .errors import AudiochainError
from .ledger import ChainFormatError, blocks_from_json, validate_chain

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 5.0


class MalformedUrl(AudiochainError):
    pass


class SelfRegistration(AudiochainError):
    pass


def normalize_url(url) -> str:
    if not isinstance(url, str):
        raise MalformedUrl(f"peer url must be a string, got {type(url).__name__}")
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https") or not parts.netloc:
        raise MalformedUrl(f"peer url must be absolute http(s), got {url!r}")
    return url.rstrip("/")


class PeerRegistry:
    """Known peers of one node, in registration order, never containing itself."""

    def __init__(self, self_url: str, seeds=()):
        self.self_url = normalize_url(self_url)
        self._peers: list = []
        self._lock = threading.Lock()
        for seed in seeds:
            try:
                self.add(seed)
            except SelfRegistration:
                pass

    @property
    def peers(self) -> tuple:
        with self._lock:
            return tuple(self._peers)

    def __len__(self) -> int:
        return len(self.peers)

    def __contains__(self, url) -> bool:
        return normalize_url(url) in self.peers

    def add(self, url) -> bool:
        """Record a peer; True when it was new. Registering the node itself fails."""
        clean = normalize_url(url)
        if clean == self.self_url:
            raise SelfRegistration(f"{clean} is this node")
        with self._lock:
            if clean in self._peers:
                return False
            self._peers.append(clean)
            return True


def register_peer(registry: PeerRegistry, url, announce: bool = True,
                  timeout: float = DEFAULT_TIMEOUT) -> bool:
    """Add a peer and, if it was new, announce ourselves back to it."""
    new = registry.add(url)
    if new and announce:
        clean = normalize_url(url)
        try:
            requests.post(f"{clean}/nodes/register",
                          json={"peer": registry.self_url}, timeout=timeout)
        except requests.RequestException as exc:
            log.debug("mutual registration with %s failed: %s", clean, exc)
    return new


@dataclass
class PeerOutcome:
    peer: str
    ok: bool
    status: int | None = None
    detail: str = ""


@dataclass
class DeliveryReport:
    entries: list = field(default_factory=list)

    @property
    def delivered(self) -> int:
        return sum(1 for e in self.entries if e.ok)

    @property
    def failures(self) -> list:
        return [e for e in self.entries if not e.ok]

    @property
    def saw_conflict(self) -> bool:
        return any(e.status == 409 for e in self.entries)


def _post_json(registry: PeerRegistry, path: str, body: dict,
               timeout: float) -> DeliveryReport:
    report = DeliveryReport()
    for peer in registry.peers:
        try:
            resp = requests.post(f"{peer}{path}", json=body, timeout=timeout)
        except requests.RequestException as exc:
            report.entries.append(PeerOutcome(peer, False, detail=str(exc)))
            continue
        report.entries.append(PeerOutcome(peer, resp.status_code in (200, 201),
                                          resp.status_code, resp.text[:200]))
    return report


def broadcast_transaction(registry: PeerRegistry, payload,
                          timeout: float = DEFAULT_TIMEOUT) -> DeliveryReport:
    """Offer a payload to every peer; rejections (e.g. duplicates) are reported."""
    return _post_json(registry, "/transactions/new", payload.to_dict(), timeout)


def announce_block(registry: PeerRegistry, block,
                   timeout: float = DEFAULT_TIMEOUT) -> DeliveryReport:
    return _post_json(registry, "/blocks/announce", block.to_dict(), timeout)


def fetch_chain(peer: str, timeout: float = DEFAULT_TIMEOUT) -> list:
    """GET a peer's full chain, parsed strictly into blocks."""
    resp = requests.get(f"{peer}/chain", timeout=timeout)
    resp.raise_for_status()
    doc = resp.json()
    if not isinstance(doc, dict) or "chain" not in doc:
        raise ChainFormatError(f"peer {peer} returned no chain")
    return blocks_from_json(doc["chain"])


@dataclass
class SyncReport:
    adopted: bool
    old_length: int
    new_length: int
    source_peer: str | None = None
    requeued: int = 0


def resolve_conflicts(registry: PeerRegistry, ledger,
                      timeout: float = DEFAULT_TIMEOUT) -> SyncReport:
    """Adopt the strictly longest valid chain any peer offers; ties keep ours.

    Unreachable peers and peers serving malformed or invalid chains are
    skipped. Transactions confirmed only in the abandoned chain return to the
    pending pool.
    """
    old_length = len(ledger)
    best = None
    source = None
    for peer in registry.peers:
        try:
            blocks = fetch_chain(peer, timeout)
        except (requests.RequestException, ChainFormatError, ValueError) as exc:
            log.debug("skipping chain from %s: %s", peer, exc)
            continue
        floor = len(best) if best is not None else old_length
        if len(blocks) <= floor:
            continue
        if not validate_chain(blocks, ledger.difficulty):
            log.warning("peer %s served an invalid chain, ignoring", peer)
            continue
        best, source = blocks, peer
    if best is None:
        return SyncReport(False, old_length, old_length)
    requeued = ledger.adopt(best)
    return SyncReport(True, old_length, len(best), source, len(requeued))
