"""Scripted multi-node demo: five nodes as separate processes over HTTP.

Topology: two pure servers, a recorder, a player, and a recorder+player
hybrid, fully meshed. The honest scenario records twice, mines twice, and
ends with every chain byte-identical at length 3. The forged variant injects
a payload whose signature belongs to silence and must end at length 2 with
the miner logging a fingerprint rejection. The offline variant kills one
server and the remaining four must still converge.
"""

from __future__ import annotations

import shutil
import socket
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import client
from .config import NodeConfig, write_config
from .errors import AudiochainError
from .fingerprint import compute_fingerprint, encode_fingerprint
from .ledger import PayloadV1, canonical_json
from .wav import AudioClip, write_wav

READY_TIMEOUT = 15.0

NODE_ROLES = {
    "server1": ("server",),
    "server2": ("server",),
    "recorder": ("recorder",),
    "player": ("player",),
    "hybrid": ("recorder", "player"),
}

DEVICE_IDENTITIES = {
    "recorder": ("Knowles", "SPH0645LM4H", "b8:27:eb:4f:21:9c", (49.591, 11.0078)),
    "hybrid": ("Raspberry Pi Foundation", "Pi 4 Model B", "dc:a6:32:01:5b:22",
               (40.4168, -3.7038)),
}


@dataclass
class StepResult:
    step: str
    ok: bool
    detail: str = ""


@dataclass
class DemoReport:
    variant: str
    steps: list = field(default_factory=list)
    chain_lengths: dict = field(default_factory=dict)
    converged: bool = False
    base_dir: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.steps) and all(s.ok for s in self.steps)


def _free_ports(count: int) -> list:
    sockets, ports = [], []
    for _ in range(count):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        sockets.append(s)
        ports.append(s.getsockname()[1])
    for s in sockets:
        s.close()
    return ports


def demo_clip(seed: int, seconds: float = 1.5, rate: int = 8000) -> AudioClip:
    """A deterministic tone-plus-noise clip rich enough to fingerprint."""
    rng = np.random.default_rng(seed)
    n = int(seconds * rate)
    t = np.arange(n) / rate
    x = np.zeros(n)
    for _ in range(4):
        freq = rng.uniform(320, 1900)
        x += rng.uniform(0.1, 0.3) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 6.28))
    x *= 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(1.5, 4.0) * t)
    x += 0.02 * rng.standard_normal(n)
    samples = np.clip(np.rint(x * 12000), -32768, 32767).astype(np.int16)
    return AudioClip(rate, [samples])


class _Network:
    def __init__(self, base_dir: Path):
        self.base_dir = base_dir
        self.configs: dict = {}
        self.procs: dict = {}
        self.logs: dict = {}
        ports = _free_ports(len(NODE_ROLES))
        for (name, roles), port in zip(NODE_ROLES.items(), ports):
            maker, model, mac, gps = DEVICE_IDENTITIES.get(
                name, ("", "", "", None))
            self.configs[name] = NodeConfig(
                roles=roles,
                bind=f"127.0.0.1:{port}",
                peers=(),
                difficulty=2,
                storage_dir=str(base_dir / name),
                device_maker=maker,
                device_model=model,
                device_mac=mac,
                device_gps=gps,
            )

    def url(self, name: str) -> str:
        return self.configs[name].url

    def start(self):
        for name, config in self.configs.items():
            path = self.base_dir / f"{name}.conf"
            write_config(path, config)
            log_path = self.base_dir / f"{name}.log"
            self.logs[name] = log_path
            with open(log_path, "wb") as log_file:
                self.procs[name] = subprocess.Popen(
                    [sys.executable, "-m", "audiochain", "serve",
                     "--config", str(path)],
                    stdout=log_file, stderr=subprocess.STDOUT)

    def wait_ready(self):
        deadline = time.monotonic() + READY_TIMEOUT
        for name in self.configs:
            while True:
                try:
                    client.get_chain(self.url(name))
                    break
                except AudiochainError:
                    proc = self.procs[name]
                    if proc.poll() is not None:
                        raise RuntimeError(
                            f"node {name} exited with {proc.returncode}; "
                            f"see {self.logs[name]}")
                    if time.monotonic() > deadline:
                        raise RuntimeError(f"node {name} never came up")
                    time.sleep(0.05)

    def mesh(self):
        names = list(self.configs)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                client.add_peer(self.url(a), self.url(b))

    def kill(self, name: str):
        proc = self.procs[name]
        proc.terminate()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait(timeout=5)

    def stop_all(self):
        for name in list(self.procs):
            if self.procs[name].poll() is None:
                self.kill(name)

    def alive(self) -> list:
        return [n for n, p in self.procs.items() if p.poll() is None]

    def chain_fingerprint(self, name: str) -> tuple:
        chain = client.get_chain(self.url(name))
        body = canonical_json([b.to_dict() for b in chain.blocks])
        return chain.length, body

    def log_text(self, name: str) -> str:
        return Path(self.logs[name]).read_text(encoding="utf-8", errors="replace")


def _check_convergence(net: _Network, expected_length: int, report: DemoReport):
    lengths, bodies = {}, set()
    for name in net.alive():
        length, body = net.chain_fingerprint(name)
        lengths[name] = length
        bodies.add(body)
    report.chain_lengths = lengths
    converged = (len(bodies) == 1
                 and all(v == expected_length for v in lengths.values()))
    report.converged = converged
    report.steps.append(StepResult(
        f"chains converge at length {expected_length}", converged,
        f"lengths {lengths}, {len(bodies)} distinct chain(s)"))


def _forged_payload(net: _Network, node_url: str) -> PayloadV1:
    """A well-formed payload whose signature belongs to silence, not the audio."""
    clip = demo_clip(seed=77, seconds=2.0)
    from .wav import new_content_id
    content_id = new_content_id()
    tagged = write_wav(clip, content_id)
    cid = client.store_bytes(node_url, tagged)
    silence = AudioClip(clip.sample_rate,
                        [np.zeros(clip.frames, dtype=np.int16)])
    return PayloadV1(
        version="1",
        recFileName="forged.wav",
        recTimestamp=time.time(),
        recDuration=clip.duration,
        recNumChannels=1,
        deviceMaker="Acme",
        deviceModel="Impostor 9000",
        deviceMacAdd="aa:bb:cc:dd:ee:ff",
        deviceGpsInfo=None,
        ipfsHash=cid,
        contentId=content_id,
        recSignature=encode_fingerprint(compute_fingerprint(silence)),
    )


def run_demo(variant: str = "honest", keep_dir: str | None = None) -> DemoReport:
    """Run one scripted scenario; every step lands in the report."""
    if variant not in ("honest", "forged", "offline"):
        raise ValueError(f"unknown variant {variant!r}")
    report = DemoReport(variant=variant)
    base_dir = Path(keep_dir) if keep_dir else Path(tempfile.mkdtemp(prefix="audiochain-demo-"))
    base_dir.mkdir(parents=True, exist_ok=True)
    report.base_dir = str(base_dir)
    net = _Network(base_dir)
    try:
        net.start()
        net.wait_ready()
        report.steps.append(StepResult("start 5 nodes", True,
                                       ", ".join(net.alive())))
        net.mesh()
        peer_counts = {n: len(client.get_peers(net.url(n))) for n in net.configs}
        report.steps.append(StepResult(
            "mesh registration", all(v == 4 for v in peer_counts.values()),
            f"peer counts {peer_counts}"))
        if variant == "offline":
            net.kill("server2")
            report.steps.append(StepResult("take server2 offline", True))
        _run_scenario(net, variant, report)
    except (AudiochainError, RuntimeError, OSError) as exc:
        report.steps.append(StepResult("scenario", False,
                                       f"{type(exc).__name__}: {exc}"))
    finally:
        net.stop_all()
        if keep_dir is None and report.passed:
            shutil.rmtree(base_dir, ignore_errors=True)
    return report


def _run_scenario(net: _Network, variant: str, report: DemoReport):
    miner = "server1"
    payload_a = client.record(net.url("recorder"), write_wav(demo_clip(seed=11)),
                              "clip-a.wav", config=net.configs["recorder"])
    report.steps.append(StepResult("recorder contributes", True,
                                   payload_a.contentId))
    status, doc = client.mine(net.url(miner))
    report.steps.append(StepResult("server1 mines", status == 200, str(doc)))

    if variant == "forged":
        forged = _forged_payload(net, net.url("server2"))
        client.submit_payload(net.url("server2"), forged)
        report.steps.append(StepResult("forged payload enters the pool", True,
                                       forged.contentId))
        status, doc = client.mine(net.url("server2"))
        rejected = doc.get("rejected", []) if isinstance(doc, dict) else []
        gate_ok = (status == 404
                   and any(r.get("check") == "fingerprint" for r in rejected))
        report.steps.append(StepResult(
            "miner rejects the forged signature", gate_ok,
            f"status {status}, rejected {rejected}"))
        logged = "fingerprint check failed" in net.log_text("server2")
        report.steps.append(StepResult("rejection logged", logged))
        _check_convergence(net, expected_length=2, report=report)
        return

    verify_via = "player"
    _, _, result = client.verify(net.url(verify_via), payload_a.contentId)
    report.steps.append(StepResult("player verifies the first recording",
                                   result.genuine,
                                   "genuine" if result.genuine else str(result.checks)))
    payload_b = client.record(net.url("hybrid"), write_wav(demo_clip(seed=22, seconds=2.0)),
                              "clip-b.wav", config=net.configs["hybrid"])
    report.steps.append(StepResult("hybrid contributes", True, payload_b.contentId))
    second_miner = "server1" if variant == "offline" else "server2"
    status, doc = client.mine(net.url(second_miner))
    report.steps.append(StepResult(f"{second_miner} mines", status == 200, str(doc)))
    _, _, result = client.verify(net.url("hybrid"), payload_a.contentId)
    report.steps.append(StepResult("hybrid consumes the first recording",
                                   result.genuine,
                                   "genuine" if result.genuine else str(result.checks)))
    _check_convergence(net, expected_length=3, report=report)
