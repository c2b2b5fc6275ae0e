"""HTTP face of a node: the stdlib-server endpoint table.

  GET  /chain                 {"length": n, "chain": [...]}
  POST /transactions/new      payload JSON -> 201 or 400
  GET  /transactions/pending  [payload, ...]
  POST /mine                  200 {"index": i} | 404 NoPending | 409 cancelled
  POST /nodes/register        {"peer": url} -> 201 {"peers": [...]}
  GET  /nodes                 [url, ...]
  POST /blocks/announce       block JSON -> 201 | 400 rejected | 409 conflict
  GET  /cas/<cid>             local object bytes | 404
  POST /cas/add               raw bytes -> 201 {"cid": ...}

GET /cas/<cid> answers from local disk only; remote fallback belongs to the
client side so two nodes missing an object cannot recurse into each other.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import cas
from .errors import AudiochainError
from .ledger import (Block, ChainFormatError, MiningCancelled, PayloadV1,
                     canonical_json, loads_strict)
from .node import Node, NoPending
from .peers import MalformedUrl, SelfRegistration, register_peer

log = logging.getLogger(__name__)

MAX_BODY_BYTES = 64 * 1024 * 1024


class BindFailure(AudiochainError):
    pass


class NodeRequestHandler(BaseHTTPRequestHandler):
    node: Node = None  # set by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, format, *args):
        log.debug("%s - %s", self.address_string(), format % args)

    # -- plumbing ----------------------------------------------------------

    def _send(self, status: int, body: bytes, content_type: str):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status: int, obj):
        self._send(status, canonical_json(obj).encode("utf-8"),
                   "application/json; charset=utf-8")

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        if length < 0 or length > MAX_BODY_BYTES:
            raise ValueError(f"unreasonable body size {length}")
        return self.rfile.read(length)

    def _read_json(self):
        return loads_strict(self._read_body().decode("utf-8"))

    # -- routes ------------------------------------------------------------

    def do_GET(self):
        try:
            if self.path == "/chain":
                blocks = self.node.ledger.snapshot()
                self._json(200, {"length": len(blocks),
                                 "chain": [b.to_dict() for b in blocks]})
            elif self.path == "/transactions/pending":
                self._json(200, [p.to_dict()
                                 for p in self.node.ledger.pending_snapshot()])
            elif self.path == "/nodes":
                self._json(200, list(self.node.registry.peers))
            elif self.path.startswith("/cas/"):
                cid = self.path[len("/cas/"):]
                if not cas.is_valid_cid(cid) or not self.node.store.has(cid):
                    self._json(404, {"error": "NotFound"})
                else:
                    # Raw disk bytes, no re-hash: the requester verifies
                    # against the cid anyway, and must keep working when a
                    # peer serves rotten data.
                    self._send(200, self.node.store.path_for(cid).read_bytes(),
                               "application/octet-stream")
            else:
                self._json(404, {"error": "NoSuchEndpoint"})
        except Exception as exc:  # a broken handler must not kill the thread
            log.exception("GET %s failed", self.path)
            self._json(500, {"error": type(exc).__name__, "detail": str(exc)})

    def do_POST(self):
        try:
            if self.path == "/transactions/new":
                self._post_transaction()
            elif self.path == "/mine":
                self._post_mine()
            elif self.path == "/nodes/register":
                self._post_register()
            elif self.path == "/blocks/announce":
                self._post_announce()
            elif self.path == "/cas/add":
                cid = self.node.store.put(self._read_body())
                self._json(201, {"cid": cid})
            else:
                self._json(404, {"error": "NoSuchEndpoint"})
        except (json.JSONDecodeError, UnicodeDecodeError, ValueError) as exc:
            self._json(400, {"error": "BadRequest", "detail": str(exc)})
        except Exception as exc:
            log.exception("POST %s failed", self.path)
            self._json(500, {"error": type(exc).__name__, "detail": str(exc)})

    def _post_transaction(self):
        from .peers import broadcast_transaction

        try:
            payload = PayloadV1.from_dict(self._read_json())
            self.node.ledger.add_pending(payload)
        except AudiochainError as exc:
            self._json(400, {"error": type(exc).__name__, "detail": str(exc)})
            return
        self._json(201, {"contentId": payload.contentId,
                         "pending": len(self.node.ledger.pending_snapshot())})
        # pass it on; peers that already know it answer DuplicateContentId
        broadcast_transaction(self.node.registry, payload)

    def _post_mine(self):
        try:
            block = self.node.mine_one()
        except NoPending as exc:
            self._json(404, {"error": "NoPending", "rejected": exc.rejections})
            return
        except MiningCancelled as exc:
            self._json(409, {"error": "MiningCancelled", "detail": str(exc)})
            return
        self._json(200, {"index": block.index, "hash": block.hash})

    def _post_register(self):
        doc = self._read_json()
        if not isinstance(doc, dict) or "peer" not in doc:
            self._json(400, {"error": "BadRequest", "detail": 'need {"peer": url}'})
            return
        try:
            register_peer(self.node.registry, doc["peer"])
        except (MalformedUrl, SelfRegistration) as exc:
            self._json(400, {"error": type(exc).__name__, "detail": str(exc)})
            return
        self._json(201, {"peers": list(self.node.registry.peers)})

    def _post_announce(self):
        try:
            block = Block.from_dict(self._read_json())
        except ChainFormatError as exc:
            self._json(400, {"error": "ChainFormatError", "detail": str(exc)})
            return
        outcome, detail = self.node.receive_block(block)
        if outcome == "accepted":
            self._json(201, {"index": block.index})
        elif outcome == "conflict":
            self._json(409, {"error": "Conflict", "detail": detail})
            threading.Thread(target=self.node.resolve, daemon=True).start()
        else:
            self._json(400, {"error": detail})


def make_server(node: Node, bind: str | None = None) -> ThreadingHTTPServer:
    """Build (but do not start) the HTTP server for a node."""
    bind = bind or node.config.bind
    host, _, port = bind.partition(":")
    handler = type("BoundHandler", (NodeRequestHandler,), {"node": node})
    try:
        server = ThreadingHTTPServer((host, int(port)), handler)
    except OSError as exc:
        raise BindFailure(f"cannot bind {bind}: {exc}") from exc
    server.daemon_threads = True
    return server


def start_in_thread(node: Node, bind: str | None = None):
    """Serve a node on a background thread; returns (server, thread)."""
    server = make_server(node, bind)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
