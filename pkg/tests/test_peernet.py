"""Peer registry, gossip, announcements, conflict resolution, HTTP contract."""

from __future__ import annotations

import threading
import time

import pytest
import requests

from audiochain import client
from audiochain.cas import cid_of
from audiochain.ledger import validate_chain
from audiochain.peers import (
    MalformedUrl,
    PeerRegistry,
    SelfRegistration,
    broadcast_transaction,
    fetch_chain,
    normalize_url,
    resolve_conflicts,
)
from audiochain.wav import new_content_id, write_wav

from _signals import make_payload, make_rich_clip

SELF = "http://127.0.0.1:5000"


def wait_until(pred, timeout: float = 10.0, interval: float = 0.05) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(interval)
    return pred()


def seeded_payload(node_url: str, seed: int, seconds: float = 0.25):
    """Store a fresh tagged clip on the node and build its matching payload."""
    clip = make_rich_clip(seed, seconds)
    content_id = new_content_id()
    data = write_wav(clip, content_id=content_id)
    cid = client.store_bytes(node_url, data)
    assert cid == cid_of(data)
    return make_payload(clip, content_id, cid)


def chain_body(url: str) -> bytes:
    resp = requests.get(f"{url}/chain", timeout=5)
    resp.raise_for_status()
    return resp.content


class TestUrlNormalization:
    def test_trailing_slash_stripped(self):
        assert normalize_url("http://10.0.0.7:5001/") == "http://10.0.0.7:5001"

    def test_https_kept(self):
        assert normalize_url("https://node.example") == "https://node.example"

    @pytest.mark.parametrize("bad", [
        "10.0.0.7:5001",          # no scheme
        "ftp://10.0.0.7:5001",    # wrong scheme
        "http://",                # no host
        "",                       # empty
    ])
    def test_rejects_non_http_urls(self, bad):
        with pytest.raises(MalformedUrl):
            normalize_url(bad)

    def test_rejects_non_string(self):
        with pytest.raises(MalformedUrl):
            normalize_url(5001)


class TestPeerRegistry:
    def test_keeps_registration_order(self):
        reg = PeerRegistry(SELF)
        urls = [f"http://127.0.0.1:{p}" for p in (5003, 5001, 5002)]
        for url in urls:
            assert reg.add(url) is True
        assert list(reg.peers) == urls

    def test_add_is_idempotent(self):
        reg = PeerRegistry(SELF)
        assert reg.add("http://127.0.0.1:5001") is True
        assert reg.add("http://127.0.0.1:5001/") is False
        assert len(reg) == 1

    def test_rejects_itself(self):
        reg = PeerRegistry(SELF)
        with pytest.raises(SelfRegistration):
            reg.add(SELF + "/")
        assert len(reg) == 0

    def test_contains_normalizes(self):
        reg = PeerRegistry(SELF, seeds=("http://127.0.0.1:5001/",))
        assert "http://127.0.0.1:5001" in reg
        assert "http://127.0.0.1:5001/" in reg
        assert "http://127.0.0.1:5009" not in reg

    def test_seeds_skip_self_quietly(self):
        reg = PeerRegistry(SELF, seeds=(SELF, "http://127.0.0.1:5001"))
        assert list(reg.peers) == ["http://127.0.0.1:5001"]


class TestLiveRegistration:
    def test_register_announces_back(self, live_factory):
        a, b = live_factory(), live_factory()
        peers = client.add_peer(a.url, b.url)
        assert b.node.config.url.rstrip("/") in peers
        # the target node introduces itself to the new peer in return
        assert wait_until(lambda: a.url in b.node.registry)
        assert client.get_peers(b.url) == [a.url]

    def test_registering_node_with_itself_fails(self, live_factory):
        a = live_factory()
        resp = requests.post(f"{a.url}/nodes/register",
                             json={"peer": a.url + "/"}, timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error"] == "SelfRegistration"

    def test_register_rejects_malformed_url(self, live_factory):
        a = live_factory()
        resp = requests.post(f"{a.url}/nodes/register",
                             json={"peer": "not a url"}, timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error"] == "MalformedUrl"

    def test_register_requires_peer_key(self, live_factory):
        a = live_factory()
        resp = requests.post(f"{a.url}/nodes/register",
                             json={"node": "http://x"}, timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error"] == "BadRequest"


class TestGossip:
    def test_transaction_reaches_peer_once(self, live_factory):
        a, b = live_factory(), live_factory()
        client.add_peer(a.url, b.url)
        client.add_peer(b.url, a.url)
        payload = seeded_payload(a.url, seed=11)
        client.submit_payload(a.url, payload)
        assert wait_until(
            lambda: [p.contentId for p in b.node.ledger.pending_snapshot()]
            == [payload.contentId])
        # the re-broadcast loop must have terminated, not queued twice
        ids = [p.contentId for p in a.node.ledger.pending_snapshot()]
        assert ids == [payload.contentId]

    def test_duplicate_submission_rejected(self, live_factory):
        a = live_factory()
        payload = seeded_payload(a.url, seed=12)
        client.submit_payload(a.url, payload)
        resp = requests.post(f"{a.url}/transactions/new",
                             json=payload.to_dict(), timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error"] == "DuplicateContentId"

    def test_dead_peer_is_reported_not_fatal(self, live_factory):
        a = live_factory()
        reg = PeerRegistry(SELF)
        reg.add(a.url)
        reg.add("http://127.0.0.1:9")   # reserved port, nothing listens
        payload = seeded_payload(a.url, seed=13)
        report = broadcast_transaction(reg, payload)
        assert report.delivered == 1
        assert len(report.failures) == 1
        assert report.failures[0].peer == "http://127.0.0.1:9"
        ids = [p.contentId for p in a.node.ledger.pending_snapshot()]
        assert ids == [payload.contentId]


class TestBlockAnnouncements:
    def test_mined_block_spreads_to_peer(self, live_factory):
        a, b = live_factory(), live_factory()
        client.add_peer(a.url, b.url)
        client.add_peer(b.url, a.url)
        payload = seeded_payload(a.url, seed=21)
        client.submit_payload(a.url, payload)
        status, doc = client.mine(a.url)
        assert status == 200
        assert doc["index"] == 1
        assert wait_until(lambda: len(b.node.ledger) == 2)
        assert chain_body(a.url) == chain_body(b.url)
        # the confirmed transaction left both pools
        assert a.node.ledger.pending_snapshot() == []
        assert b.node.ledger.pending_snapshot() == []

    def test_bad_proof_announcement_rejected(self, live_factory):
        a, b = live_factory(), live_factory()
        payload = seeded_payload(a.url, seed=22)
        client.submit_payload(a.url, payload)
        client.mine(a.url)
        block = a.node.ledger.snapshot()[1].to_dict()
        block["nonce"] = block["nonce"] + 1
        resp = requests.post(f"{b.url}/blocks/announce", json=block, timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error"] in ("HashMismatch", "InvalidProof")
        assert len(b.node.ledger) == 1

    def test_malformed_announcement_rejected(self, live_factory):
        b = live_factory()
        resp = requests.post(f"{b.url}/blocks/announce",
                             json={"index": 1}, timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error"] == "ChainFormatError"

    def test_conflict_triggers_background_sync(self, live_factory):
        # A builds two blocks alone; B builds a different first block.
        a, b = live_factory(), live_factory()
        for seed in (23, 24):
            client.submit_payload(a.url, seeded_payload(a.url, seed=seed))
            client.mine(a.url)
        rival = seeded_payload(b.url, seed=25)
        client.submit_payload(b.url, rival)
        client.mine(b.url)
        assert len(a.node.ledger) == 3 and len(b.node.ledger) == 2

        client.add_peer(b.url, a.url)
        tip = a.node.ledger.snapshot()[2].to_dict()
        resp = requests.post(f"{b.url}/blocks/announce", json=tip, timeout=5)
        assert resp.status_code == 409
        assert resp.json()["error"] == "Conflict"

        # the 409 spawns a sync that adopts A's longer chain
        assert wait_until(lambda: len(b.node.ledger) == 3)
        assert chain_body(a.url) == chain_body(b.url)
        # B's displaced recording goes back in line instead of vanishing
        assert wait_until(
            lambda: [p.contentId for p in b.node.ledger.pending_snapshot()]
            == [rival.contentId])


class TestResolveConflicts:
    def test_adopts_strictly_longer_chain(self, live_factory, node_factory):
        a = live_factory()
        client.submit_payload(a.url, seeded_payload(a.url, seed=31))
        client.mine(a.url)
        local = node_factory()
        local.registry.add(a.url)
        report = resolve_conflicts(local.registry, local.ledger)
        assert report.adopted is True
        assert (report.old_length, report.new_length) == (1, 2)
        assert report.source_peer == a.url
        assert report.requeued == 0
        assert len(local.ledger) == 2

    def test_tie_keeps_local_chain(self, live_factory, node_factory):
        a = live_factory()
        client.submit_payload(a.url, seeded_payload(a.url, seed=32))
        client.mine(a.url)
        local = node_factory()
        payload = make_payload(make_rich_clip(33, 0.25), new_content_id(),
                               cid_of(b"unrelated"))
        local.ledger.add_pending(payload)
        block = local.ledger.pop_oldest_pending()
        from audiochain.ledger import Block, proof_of_work
        tip = local.ledger.tip()
        mined = proof_of_work(Block(1, [block], time.time(), tip.hash),
                              local.ledger.difficulty)
        assert local.ledger.append(mined)
        before = [b.to_dict() for b in local.ledger.snapshot()]
        local.registry.add(a.url)
        report = resolve_conflicts(local.registry, local.ledger)
        assert report.adopted is False
        assert [b.to_dict() for b in local.ledger.snapshot()] == before

    def test_invalid_remote_chain_ignored(self, live_factory, node_factory):
        a = live_factory()
        client.submit_payload(a.url, seeded_payload(a.url, seed=34))
        client.mine(a.url)
        # poison the served chain in place: duration lies, hash goes stale
        a.node.ledger.snapshot()[1].transactions[0].recDuration = 1e6
        local = node_factory()
        local.registry.add(a.url)
        report = resolve_conflicts(local.registry, local.ledger)
        assert report.adopted is False
        assert len(local.ledger) == 1

    def test_unreachable_peer_skipped(self, node_factory):
        local = node_factory()
        local.registry.add("http://127.0.0.1:9")
        report = resolve_conflicts(local.registry, local.ledger, timeout=0.5)
        assert report.adopted is False
        assert (report.old_length, report.new_length) == (1, 1)

    def test_fetch_chain_rejects_shapeless_reply(self, live_factory):
        a = live_factory()
        blocks = fetch_chain(a.url)
        assert len(blocks) == 1
        assert blocks[0].index == 0


class TestHttpContract:
    def test_chain_endpoint_shape(self, live_factory):
        a = live_factory()
        doc = requests.get(f"{a.url}/chain", timeout=5).json()
        assert set(doc) == {"length", "chain"}
        assert doc["length"] == 1
        genesis = doc["chain"][0]
        assert genesis["index"] == 0
        assert genesis["previous_hash"] == "0"

    def test_pending_endpoint_lists_payload_dicts(self, live_factory):
        a = live_factory()
        payload = seeded_payload(a.url, seed=41)
        client.submit_payload(a.url, payload)
        doc = requests.get(f"{a.url}/transactions/pending", timeout=5).json()
        assert isinstance(doc, list)
        assert doc[0]["contentId"] == payload.contentId
        assert set(doc[0]) == set(payload.to_dict())

    def test_nodes_endpoint_lists_peers(self, live_factory):
        a = live_factory()
        assert requests.get(f"{a.url}/nodes", timeout=5).json() == []

    def test_cas_round_trip_over_http(self, live_factory):
        a = live_factory()
        blob = b"some stored object"
        resp = requests.post(f"{a.url}/cas/add", data=blob, timeout=5)
        assert resp.status_code == 201
        cid = resp.json()["cid"]
        assert cid == cid_of(blob)
        got = requests.get(f"{a.url}/cas/{cid}", timeout=5)
        assert got.status_code == 200
        assert got.content == blob
        assert got.headers["Content-Type"] == "application/octet-stream"

    def test_cas_absent_and_invalid_cids_are_404(self, live_factory):
        a = live_factory()
        absent = cid_of(b"never stored")
        assert requests.get(f"{a.url}/cas/{absent}", timeout=5).status_code == 404
        assert requests.get(f"{a.url}/cas/zzz", timeout=5).status_code == 404

    def test_unknown_paths_are_404(self, live_factory):
        a = live_factory()
        for method, path in [("GET", "/blocks"), ("POST", "/chain/fork")]:
            resp = requests.request(method, f"{a.url}{path}", timeout=5)
            assert resp.status_code == 404
            assert resp.json()["error"] == "NoSuchEndpoint"

    def test_submit_rejects_invalid_payload(self, live_factory):
        a = live_factory()
        payload = seeded_payload(a.url, seed=42)
        doc = payload.to_dict()
        doc["deviceMacAdd"] = "not-a-mac"
        resp = requests.post(f"{a.url}/transactions/new", json=doc, timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error"] == "PayloadInvalid"
        assert "deviceMacAdd" in resp.json()["detail"]

    def test_submit_rejects_broken_json(self, live_factory):
        a = live_factory()
        resp = requests.post(f"{a.url}/transactions/new",
                             data=b"{never closed", timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error"] == "BadRequest"

    def test_submit_rejects_nan_smuggling(self, live_factory):
        a = live_factory()
        payload = seeded_payload(a.url, seed=43)
        from audiochain.ledger import canonical_json
        body = canonical_json(payload.to_dict()).replace(
            f'"recDuration":{payload.recDuration}', '"recDuration":NaN', 1)
        assert "NaN" in body
        resp = requests.post(f"{a.url}/transactions/new",
                             data=body.encode(), timeout=5)
        assert resp.status_code == 400

    def test_mine_with_empty_pool_is_404(self, live_factory):
        a = live_factory()
        status, doc = client.mine(a.url)
        assert status == 404
        assert doc == {"error": "NoPending", "rejected": []}

    def test_mine_reports_gate_rejections(self, live_factory):
        a = live_factory()
        payload = seeded_payload(a.url, seed=44)
        payload.recDuration += 1.0     # now disagrees with the stored audio
        client.submit_payload(a.url, payload)
        status, doc = client.mine(a.url)
        assert status == 404
        assert doc["error"] == "NoPending"
        assert doc["rejected"][0]["contentId"] == payload.contentId
        assert doc["rejected"][0]["check"] == "duration"


class TestTwoMinerRace:
    def test_concurrent_miners_converge(self, live_factory):
        a, b = live_factory(), live_factory()
        client.add_peer(a.url, b.url)
        client.add_peer(b.url, a.url)
        pa = seeded_payload(a.url, seed=51)
        pb = seeded_payload(b.url, seed=52)
        client.submit_payload(a.url, pa)
        client.submit_payload(b.url, pb)
        assert wait_until(lambda: len(a.node.ledger.pending_snapshot()) == 2)
        assert wait_until(lambda: len(b.node.ledger.pending_snapshot()) == 2)

        results = {}

        def race(name, url):
            results[name] = client.mine(url)

        threads = [threading.Thread(target=race, args=("a", a.url)),
                   threading.Thread(target=race, args=("b", b.url))]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=30)
        assert all(not t.is_alive() for t in threads)
        # whatever the interleaving, each answer is one of the defined three
        assert {results["a"][0], results["b"][0]} <= {200, 404, 409}

        def settled():
            if chain_body(a.url) != chain_body(b.url):
                return False
            confirmed = {p.contentId
                         for blk in a.node.ledger.snapshot()
                         for p in blk.transactions}
            return ({pa.contentId, pb.contentId} <= confirmed
                    and not a.node.ledger.pending_snapshot()
                    and not b.node.ledger.pending_snapshot())

        deadline = time.monotonic() + 30
        while not settled() and time.monotonic() < deadline:
            for live in (a, b):
                if live.node.ledger.pending_snapshot():
                    client.mine(live.url)
            time.sleep(0.1)
        assert settled()
        blocks = a.node.ledger.snapshot()
        assert validate_chain(blocks, a.node.ledger.difficulty)
        assert len(blocks) == 3
