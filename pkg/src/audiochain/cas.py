"""Content-addressed storage for audio objects.

An object's id (cid) is the base58btc encoding of a SHA-256 multihash:
0x12 (sha2-256) + 0x20 (32 byte digest) + digest, 34 bytes total. The text
form always starts with "Qm". Objects live one-per-file in a directory,
named by their cid; writes go through a temp file and an atomic rename so
readers never observe partial objects.
"""

from __future__ import annotations

import errno
import hashlib
import os
import tempfile
from pathlib import Path

from .errors import AudiochainError

BASE58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_BASE58_INDEX = {c: i for i, c in enumerate(BASE58_ALPHABET)}

SHA256_MULTIHASH_PREFIX = b"\x12\x20"


class NotFound(AudiochainError):
    pass


class IntegrityViolation(AudiochainError):
    pass


class StorageFull(AudiochainError):
    pass


class IoFailure(AudiochainError):
    pass


def base58btc_encode(data: bytes) -> str:
    """Encode bytes with the Bitcoin base58 alphabet (leading zeros -> '1')."""
    n = int.from_bytes(data, "big")
    out = ""
    while n:
        n, r = divmod(n, 58)
        out = BASE58_ALPHABET[r] + out
    pad = 0
    for b in data:
        if b != 0:
            break
        pad += 1
    return "1" * pad + out


def base58btc_decode(text: str) -> bytes:
    n = 0
    for c in text:
        if c not in _BASE58_INDEX:
            raise ValueError(f"invalid base58 character {c!r}")
        n = n * 58 + _BASE58_INDEX[c]
    raw = n.to_bytes((n.bit_length() + 7) // 8, "big") if n else b""
    pad = 0
    for c in text:
        if c != "1":
            break
        pad += 1
    return b"\x00" * pad + raw


def cid_of(data: bytes) -> str:
    """Content id of a byte string: base58btc(sha2-256 multihash)."""
    digest = hashlib.sha256(data).digest()
    return base58btc_encode(SHA256_MULTIHASH_PREFIX + digest)


def is_valid_cid(text) -> bool:
    """True if text decodes to a well-formed sha2-256 multihash."""
    if not isinstance(text, str) or not text.startswith("Qm"):
        return False
    try:
        raw = base58btc_decode(text)
    except ValueError:
        return False
    return len(raw) == 34 and raw[:2] == SHA256_MULTIHASH_PREFIX


def _peer_urls(registry) -> tuple:
    if registry is None:
        return ()
    peers = getattr(registry, "peers", registry)
    return tuple(peers)


class LocalStore:
    """Directory-backed object store keyed by cid."""

    def __init__(self, root):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"cannot create store directory {self.root}: {exc}") from exc

    def path_for(self, cid: str) -> Path:
        return self.root / cid

    def has(self, cid: str) -> bool:
        return self.path_for(cid).is_file()

    def put(self, data: bytes) -> str:
        """Store bytes, returning their cid. Re-putting the same bytes is a no-op."""
        cid = cid_of(data)
        final = self.path_for(cid)
        if final.is_file():
            return cid
        try:
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, final)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        except OSError as exc:
            if exc.errno == errno.ENOSPC:
                raise StorageFull(f"no space left storing {cid}") from exc
            raise IoFailure(f"cannot store {cid}: {exc}") from exc
        return cid

    def get(self, cid: str, registry=None, timeout: float = 5.0) -> bytes:
        """Fetch bytes for a cid, trying local disk first, then each peer.

        Returned bytes always hash back to the cid. Peer (or local) content
        failing that check is discarded, never returned; if nothing verifies
        the error is IntegrityViolation when at least one bad copy was seen,
        NotFound otherwise.
        """
        if not is_valid_cid(cid):
            raise ValueError(f"not a valid cid: {cid!r}")
        violations = []
        path = self.path_for(cid)
        if path.is_file():
            try:
                data = path.read_bytes()
            except OSError as exc:
                raise IoFailure(f"cannot read {path}: {exc}") from exc
            if cid_of(data) == cid:
                return data
            violations.append("local copy corrupted")
        for peer in _peer_urls(registry):
            data = self._fetch_from_peer(peer, cid, timeout)
            if data is None:
                continue
            if cid_of(data) != cid:
                violations.append(f"peer {peer} served bytes not matching {cid}")
                continue
            self.put(data)
            return data
        if violations:
            raise IntegrityViolation("; ".join(violations))
        raise NotFound(f"{cid} not available locally or from any peer")

    @staticmethod
    def _fetch_from_peer(peer: str, cid: str, timeout: float):
        import requests

        try:
            resp = requests.get(f"{peer}/cas/{cid}", timeout=timeout)
        except requests.RequestException:
            return None
        if resp.status_code != 200:
            return None
        return resp.content
