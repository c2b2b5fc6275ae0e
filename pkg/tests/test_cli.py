"""Command-line surface, run in-process against live nodes."""

from __future__ import annotations

import json
import re

import pytest

from audiochain.cli import main
from audiochain.config import write_config
from audiochain.wav import read_wav, write_wav

from _signals import make_rich_clip


@pytest.fixture
def station(live_factory, tmp_path):
    """A live node plus a config file pointing the CLI at it."""
    live = live_factory()
    config_path = tmp_path / "station.conf"
    write_config(config_path, live.node.config)
    return live, str(config_path)


@pytest.fixture
def wav_file(tmp_path):
    path = tmp_path / "take1.wav"
    path.write_bytes(write_wav(make_rich_clip(91, 1.0)))
    return str(path)


def recorded_content_id(capsys) -> str:
    out = capsys.readouterr().out
    match = re.search(r"contentId: ([0-9a-f]{32})", out)
    assert match, f"no contentId in output: {out!r}"
    return match.group(1)


class TestRecordMineChain:
    def test_full_command_cycle(self, station, wav_file, capsys, tmp_path):
        live, config = station
        assert main(["record", wav_file, "--config", config]) == 0
        content_id = recorded_content_id(capsys)

        assert main(["pending", "--node", live.url]) == 0
        assert content_id in capsys.readouterr().out

        assert main(["mine", "--node", live.url]) == 0
        assert "mined block 1" in capsys.readouterr().out

        assert main(["chain", "--node", live.url, "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["length"] == 2
        assert doc["chain"][1]["transactions"][0]["contentId"] == content_id

        assert main(["chain", "--node", live.url]) == 0
        human = capsys.readouterr().out
        assert human.startswith("#0")
        assert content_id in human

        assert main(["verify", content_id, "--node", live.url]) == 0
        assert "GENUINE" in capsys.readouterr().out

        out_path = tmp_path / "fetched.wav"
        assert main(["fetch", content_id, "--out", str(out_path),
                     "--node", live.url]) == 0
        capsys.readouterr()
        clip, embedded = read_wav(out_path.read_bytes())
        assert embedded == content_id
        assert clip.frames > 0

    def test_mine_with_nothing_pending_fails(self, station, capsys):
        live, _ = station
        assert main(["mine", "--node", live.url]) == 2
        assert "NoPending" in capsys.readouterr().err

    def test_verify_unknown_content_id_fails(self, station, capsys):
        live, _ = station
        assert main(["verify", "f" * 32, "--node", live.url]) == 2
        assert "not on the chain" in capsys.readouterr().err

    def test_record_needs_recorder_role(self, station, wav_file,
                                         capsys, tmp_path):
        live, _ = station
        config = live.node.config
        config_path = tmp_path / "listener.conf"
        original_roles = config.roles
        config.roles = ("server", "player")
        try:
            write_config(config_path, config)
        finally:
            config.roles = original_roles
        assert main(["record", wav_file, "--config", str(config_path),
                     "--node", live.url]) == 2
        assert "RoleError" in capsys.readouterr().err


class TestAuthenticateAndTamper:
    def test_genuine_file_authenticates(self, station, wav_file, capsys):
        live, config = station
        assert main(["record", wav_file, "--config", config]) == 0
        capsys.readouterr()
        assert main(["mine", "--node", live.url]) == 0
        capsys.readouterr()
        assert main(["authenticate", wav_file, "--node", live.url]) == 0
        assert "GENUINE" in capsys.readouterr().out

    def test_tampered_file_is_not_genuine(self, station, wav_file,
                                          capsys, tmp_path):
        live, config = station
        assert main(["record", wav_file, "--config", config]) == 0
        capsys.readouterr()
        assert main(["mine", "--node", live.url]) == 0
        capsys.readouterr()

        doctored = tmp_path / "doctored.wav"
        assert main(["tamper", wav_file, str(doctored),
                     "--op", "gain", "--amount", "3"]) == 0
        capsys.readouterr()
        assert main(["authenticate", str(doctored), "--node", live.url]) == 1
        assert "NOT GENUINE" in capsys.readouterr().out

    def test_tamper_rejects_illegal_amount(self, wav_file, capsys, tmp_path):
        out = tmp_path / "out.wav"
        assert main(["tamper", wav_file, str(out),
                     "--op", "stretch", "--amount", "-150"]) == 2
        assert "InvalidAmount" in capsys.readouterr().err


class TestPeersCommand:
    def test_add_then_list(self, live_factory, capsys):
        a, b = live_factory(), live_factory()
        assert main(["peers", "add", b.url, "--node", a.url]) == 0
        assert b.url in capsys.readouterr().out
        assert main(["peers", "list", "--node", a.url]) == 0
        assert b.url in capsys.readouterr().out


class TestExperimentCommand:
    def test_table_written_with_all_rows(self, capsys, tmp_path):
        wav = tmp_path / "long.wav"
        wav.write_bytes(write_wav(make_rich_clip(93, 13.0)))
        table_out = tmp_path / "table.txt"
        assert main(["experiment", "robustness", str(wav),
                     "--table-out", str(table_out)]) == 0
        capsys.readouterr()
        table = table_out.read_text()
        assert table.count("\n") >= 15           # header, rule, 14 rows
        for method in ("trim", "gain", "stretch", "pitch"):
            assert method in table

    def test_unreadable_wav_fails_cleanly(self, capsys, tmp_path):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"RIFFnope")
        assert main(["experiment", "robustness", str(bad)]) == 2
        assert "error" in capsys.readouterr().err


class TestDemoCommand:
    def test_honest_demo_passes(self, capsys):
        assert main(["demo", "--variant", "honest"]) == 0
        out = capsys.readouterr().out
        assert "converged: True" in out
        assert "[FAIL]" not in out
