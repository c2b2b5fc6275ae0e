import itertools
import json
import socket
from dataclasses import dataclass
from pathlib import Path

import pytest

from audiochain.config import NodeConfig
from audiochain.node import Node
from audiochain.server import start_in_thread
from audiochain.wav import read_wav

FIXTURES = Path(__file__).parent / "fixtures"

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def free_port() -> int:
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


@pytest.fixture(scope="session")
def fixture_wav_bytes() -> bytes:
    return (FIXTURES / "spoken_word.wav").read_bytes()


@pytest.fixture(scope="session")
def fixture_clip(fixture_wav_bytes):
    clip, _ = read_wav(fixture_wav_bytes)
    return clip


@pytest.fixture(scope="session")
def golden_fingerprints() -> dict:
    return json.loads((FIXTURES / "golden_fingerprints.json").read_text())


@pytest.fixture
def node_factory(tmp_path):
    counter = itertools.count()

    def make(roles=("server", "recorder", "player"), peers=(), difficulty=2,
             gps=(49.591, 11.0078)) -> Node:
        i = next(counter)
        config = NodeConfig(
            roles=tuple(roles),
            bind=f"127.0.0.1:{free_port()}",
            peers=tuple(peers),
            difficulty=difficulty,
            storage_dir=str(tmp_path / f"node{i}"),
            device_maker="Knowles",
            device_model="SPH0645LM4H",
            device_mac="b8:27:eb:4f:21:9c",
            device_gps=gps,
        )
        return Node(config)

    return make


@dataclass
class LiveNode:
    node: Node
    server: object
    url: str


@pytest.fixture
def live_factory(node_factory):
    running = []

    def launch(node: Node | None = None, **kwargs) -> LiveNode:
        node = node or node_factory(**kwargs)
        server, _thread = start_in_thread(node)
        running.append(server)
        return LiveNode(node, server, node.config.url)

    yield launch
    for server in running:
        server.shutdown()
        server.server_close()
