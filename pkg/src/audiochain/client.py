"""Client-side operations against a running node's HTTP API.

Recording and verification are split across the wire: the client does the
local work (tagging, fingerprinting, payload assembly, checks) and the node
supplies the chain, the object store, and the pending pool.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import requests

from . import cas
from .config import NodeConfig
from .errors import AudiochainError
from .fingerprint import DEFAULT_PARAMS, compute_fingerprint, encode_fingerprint
from .ledger import PayloadV1, blocks_from_json, validate_chain
from .node import (VerificationCheck, VerificationResult, authenticate_clip,
                   verify_clip_against_payload, UnknownContentId)
from .wav import embed_content_id, new_content_id, read_wav

DEFAULT_TIMEOUT = 10.0


class NodeUnavailable(AudiochainError):
    pass


@dataclass
class RemoteChain:
    length: int
    blocks: list

    def payloads(self) -> list:
        return [p for b in self.blocks for p in b.transactions]

    def find_payload(self, content_id: str):
        for p in self.payloads():
            if p.contentId == content_id:
                return p
        return None


def _request(method, url, **kwargs):
    kwargs.setdefault("timeout", DEFAULT_TIMEOUT)
    try:
        return requests.request(method, url, **kwargs)
    except requests.RequestException as exc:
        raise NodeUnavailable(f"{method} {url}: {exc}") from exc


def get_chain(node_url: str, validate: bool = False, difficulty: int = 2) -> RemoteChain:
    resp = _request("GET", f"{node_url}/chain")
    doc = resp.json()
    blocks = blocks_from_json(doc["chain"])
    if validate:
        verdict = validate_chain(blocks, difficulty)
        if not verdict:
            raise AudiochainError(f"node {node_url} serves an invalid chain: "
                                  f"{verdict.check} at {verdict.index}")
    return RemoteChain(length=doc["length"], blocks=blocks)


def get_peers(node_url: str) -> list:
    return list(_request("GET", f"{node_url}/nodes").json())


def get_pending(node_url: str) -> list:
    return [PayloadV1.from_dict(d)
            for d in _request("GET", f"{node_url}/transactions/pending").json()]


def add_peer(node_url: str, peer_url: str) -> list:
    resp = _request("POST", f"{node_url}/nodes/register", json={"peer": peer_url})
    doc = resp.json()
    if resp.status_code != 201:
        raise AudiochainError(f"register failed: {doc}")
    return doc["peers"]


def mine(node_url: str):
    """Ask a node to mine one block; returns its JSON answer plus the status."""
    resp = _request("POST", f"{node_url}/mine")
    return resp.status_code, resp.json()


def fetch_bytes(node_url: str, cid: str) -> bytes:
    """Fetch an object from a node, falling back to the node's own peers.

    Whatever arrives is checked against the cid; corrupt responses are
    discarded the same way a node's own store discards them.
    """
    violations = []
    sources = [node_url]
    try:
        sources += get_peers(node_url)
    except (NodeUnavailable, ValueError):
        pass
    for source in sources:
        resp = None
        try:
            resp = _request("GET", f"{source}/cas/{cid}")
        except NodeUnavailable:
            continue
        if resp.status_code != 200:
            continue
        if cas.cid_of(resp.content) != cid:
            violations.append(source)
            continue
        return resp.content
    if violations:
        raise cas.IntegrityViolation(
            f"{', '.join(violations)} served bytes not matching {cid}")
    raise cas.NotFound(f"{cid} not available from {node_url} or its peers")


def store_bytes(node_url: str, data: bytes) -> str:
    resp = _request("POST", f"{node_url}/cas/add", data=data,
                    headers={"Content-Type": "application/octet-stream"})
    doc = resp.json()
    if resp.status_code != 201:
        raise AudiochainError(f"cas add failed: {doc}")
    return doc["cid"]


def record(node_url: str, wav_bytes: bytes, filename: str,
           config: NodeConfig, params=DEFAULT_PARAMS):
    """Client half of contributing a recording through a node.

    Tags the audio with a fresh content id, uploads the tagged bytes, builds
    the payload from the local device identity, and submits it.
    """
    if "recorder" not in config.roles:
        from .node import RoleError
        raise RoleError(f"configured roles {config.roles} do not allow recording")
    content_id = new_content_id()
    tagged = embed_content_id(wav_bytes, content_id)
    clip, _ = read_wav(tagged)
    cid = store_bytes(node_url, tagged)
    payload = PayloadV1(
        version="1",
        recFileName=filename,
        recTimestamp=time.time(),
        recDuration=clip.duration,
        recNumChannels=len(clip.channels),
        deviceMaker=config.device_maker,
        deviceModel=config.device_model,
        deviceMacAdd=config.device_mac,
        deviceGpsInfo=config.device_gps,
        ipfsHash=cid,
        contentId=content_id,
        recSignature=encode_fingerprint(compute_fingerprint(clip, params)),
    )
    submit_payload(node_url, payload)
    return payload


def submit_payload(node_url: str, payload: PayloadV1) -> dict:
    resp = _request("POST", f"{node_url}/transactions/new", json=payload.to_dict())
    doc = resp.json()
    if resp.status_code != 201:
        raise AudiochainError(f"transaction rejected: {doc}")
    return doc


def verify(node_url: str, content_id: str, params=DEFAULT_PARAMS):
    """Verify a confirmed recording end to end from this side of the wire.

    Returns (payload, data, VerificationResult); data is None when the audio
    could not be fetched intact.
    """
    payload = get_chain(node_url).find_payload(content_id)
    if payload is None:
        raise UnknownContentId(content_id)
    try:
        data = fetch_bytes(node_url, payload.ipfsHash)
    except (cas.NotFound, cas.IntegrityViolation) as exc:
        checks = [VerificationCheck("cid", False, f"{type(exc).__name__}: {exc}")]
        return payload, None, VerificationResult(False, checks, payload)
    checks = [VerificationCheck("cid", True)]
    try:
        clip, embedded_id = read_wav(data)
    except AudiochainError as exc:
        checks.append(VerificationCheck("fingerprint", False,
                                        f"audio unreadable: {exc}"))
        return payload, data, VerificationResult(False, checks, payload)
    checks.extend(verify_clip_against_payload(clip, embedded_id, payload, params))
    result = VerificationResult(all(c.passed for c in checks), checks, payload)
    return payload, data, result


def authenticate(node_url: str, wav_bytes: bytes, params=DEFAULT_PARAMS) -> VerificationResult:
    """Authenticate local WAV bytes against a node's chain."""
    clip, embedded_id = read_wav(wav_bytes)
    chain = get_chain(node_url)
    return authenticate_clip(clip, embedded_id, chain.payloads(), params)
