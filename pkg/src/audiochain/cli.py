"""Command-line interface.

Exit codes: 0 success (and genuine verdicts), 1 a completed check that came
back not-genuine, 2 errors of any kind.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import client
from .config import load_config
from .errors import AudiochainError
from .ledger import canonical_json
from .node import Node, UnknownContentId
from .tamper import (Manipulation, rows_to_json, rows_to_table,
                     run_robustness_experiment, standard_conditions)
from .wav import read_wav

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NOT_GENUINE = 1
EXIT_ERROR = 2


def _print_result(result) -> int:
    for check in result.checks:
        mark = "ok" if check.passed else "FAIL"
        detail = f"  ({check.detail})" if check.detail else ""
        print(f"  {check.name:<12} {mark}{detail}")
    if result.payload is not None:
        print(f"  contentId   {result.payload.contentId}")
        print(f"  recorded as {result.payload.recFileName}")
    print("GENUINE" if result.genuine else "NOT GENUINE")
    return EXIT_OK if result.genuine else EXIT_NOT_GENUINE


def cmd_serve(args) -> int:
    from .peers import register_peer
    from .server import make_server

    config = load_config(args.config)
    if args.bind:
        config.bind = args.bind
        config.validate()
    node = Node(config)
    server = make_server(node)
    for seed in config.peers:
        register_peer(node.registry, seed)
    if node.registry.peers:
        node.resolve()
    log.info("serving on %s (roles: %s, difficulty %d)",
             config.bind, ",".join(config.roles), config.difficulty)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_record(args) -> int:
    config = load_config(args.config)
    node_url = args.node or config.url
    data = _read_file(args.wav)
    payload = client.record(node_url, data, args.name or args.wav,
                            config=config)
    print(f"contentId: {payload.contentId}")
    print(f"cid:       {payload.ipfsHash}")
    return EXIT_OK


def cmd_mine(args) -> int:
    status, doc = client.mine(_node_url(args))
    if status == 200:
        print(f"mined block {doc['index']} ({doc['hash']})")
        return EXIT_OK
    print(canonical_json(doc), file=sys.stderr)
    return EXIT_ERROR


def cmd_pending(args) -> int:
    pending = client.get_pending(_node_url(args))
    print(json.dumps([p.to_dict() for p in pending], indent=2))
    return EXIT_OK


def cmd_chain(args) -> int:
    chain = client.get_chain(_node_url(args))
    if args.json:
        print(canonical_json({"length": chain.length,
                              "chain": [b.to_dict() for b in chain.blocks]}))
        return EXIT_OK
    for block in chain.blocks:
        line = f"#{block.index}  {block.hash[:16]}...  nonce={block.nonce}"
        if block.transactions:
            p = block.transactions[0]
            line += f"  {p.contentId}  {p.recFileName}"
        print(line)
    return EXIT_OK


def cmd_fetch(args) -> int:
    payload, data, result = client.verify(_node_url(args), args.content_id)
    if data is None:
        print("audio unavailable or corrupt everywhere", file=sys.stderr)
        return EXIT_ERROR
    with open(args.out, "wb") as fh:
        fh.write(data)
    print(f"wrote {len(data)} bytes from {payload.ipfsHash} to {args.out}")
    return _print_result(result)


def cmd_verify(args) -> int:
    _, _, result = client.verify(_node_url(args), args.content_id)
    return _print_result(result)


def cmd_authenticate(args) -> int:
    result = client.authenticate(_node_url(args), _read_file(args.wav))
    return _print_result(result)


def cmd_tamper(args) -> int:
    clip, content_id = read_wav(_read_file(args.wav))
    out = Manipulation(args.op, args.amount).apply(clip)
    from .wav import write_wav
    with open(args.out, "wb") as fh:
        fh.write(write_wav(out, content_id))
    print(f"{args.op} {args.amount} applied: {clip.frames} -> {out.frames} samples")
    return EXIT_OK


def cmd_experiment(args) -> int:
    clip, _ = read_wav(_read_file(args.wav))
    rows = run_robustness_experiment(
        clip, conditions=standard_conditions(include_control=True))
    table = rows_to_table(rows)
    print(table)
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            fh.write(rows_to_json(rows) + "\n")
    if args.table_out:
        with open(args.table_out, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
    bad = [r for r in rows if r.error is not None]
    return EXIT_ERROR if bad else EXIT_OK


def cmd_peers(args) -> int:
    if args.peers_command == "add":
        peers = client.add_peer(_node_url(args), args.url)
        print(json.dumps(peers, indent=2))
        return EXIT_OK
    print(json.dumps(client.get_peers(_node_url(args)), indent=2))
    return EXIT_OK


def cmd_demo(args) -> int:
    from .harness import run_demo

    report = run_demo(variant=args.variant, keep_dir=args.keep_dir)
    for step in report.steps:
        mark = "ok" if step.ok else "FAIL"
        print(f"[{mark}] {step.step}: {step.detail}")
    print(f"chain lengths: {report.chain_lengths}")
    print(f"converged: {report.converged}")
    return EXIT_OK if report.passed else EXIT_ERROR


def _read_file(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _node_url(args) -> str:
    return args.node or "http://127.0.0.1:5000"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audiochain",
        description="audio provenance on a small proof-of-work ledger")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run a node")
    p.add_argument("--config", required=True)
    p.add_argument("--bind", help="override the configured host:port")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("record", help="contribute a WAV file through a node")
    p.add_argument("wav")
    p.add_argument("--config", required=True,
                   help="config supplying the device identity")
    p.add_argument("--node", help="node URL (default: the configured bind)")
    p.add_argument("--name", help="recorded file name (default: the input path)")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("mine", help="ask a node to mine one block")
    p.add_argument("--node")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("pending", help="show a node's pending transactions")
    p.add_argument("--node")
    p.set_defaults(func=cmd_pending)

    p = sub.add_parser("chain", help="show a node's chain")
    p.add_argument("--node")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_chain)

    p = sub.add_parser("fetch", help="download and verify a recording")
    p.add_argument("content_id")
    p.add_argument("--out", required=True)
    p.add_argument("--node")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("verify", help="verify a confirmed recording")
    p.add_argument("content_id")
    p.add_argument("--node")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("authenticate", help="authenticate a local WAV file")
    p.add_argument("wav")
    p.add_argument("--node")
    p.set_defaults(func=cmd_authenticate)

    p = sub.add_parser("tamper", help="apply one manipulation to a WAV file")
    p.add_argument("wav")
    p.add_argument("out")
    p.add_argument("--op", required=True, choices=("trim", "gain", "stretch", "pitch"))
    p.add_argument("--amount", required=True, type=float,
                   help="seconds, dB, percent, or cents depending on --op")
    p.set_defaults(func=cmd_tamper)

    p = sub.add_parser("experiment", help="run the robustness experiment")
    p.add_argument("experiment_name", choices=("robustness",))
    p.add_argument("wav")
    p.add_argument("--json-out")
    p.add_argument("--table-out")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("peers", help="inspect or extend a node's peer set")
    peers_sub = p.add_subparsers(dest="peers_command", required=True)
    pp = peers_sub.add_parser("add")
    pp.add_argument("url")
    pp.add_argument("--node")
    pp.set_defaults(func=cmd_peers)
    pp = peers_sub.add_parser("list")
    pp.add_argument("--node")
    pp.set_defaults(func=cmd_peers)

    p = sub.add_parser("demo", help="run the scripted five-node demo")
    p.add_argument("--variant", default="honest",
                   choices=("honest", "forged", "offline"))
    p.add_argument("--keep-dir", help="keep node state in this directory")
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UnknownContentId as exc:
        print(f"error: contentId {exc} is not on the chain", file=sys.stderr)
        return EXIT_ERROR
    except AudiochainError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
