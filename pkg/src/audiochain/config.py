"""Node configuration: flat key=value file with AUDIOCHAIN_* env overrides.

Recognized keys (file and environment spellings):

  role / AUDIOCHAIN_ROLE                 comma-separated subset of
                                         server,recorder,player
  bind / AUDIOCHAIN_BIND                 host:port to serve on
  peers / AUDIOCHAIN_PEERS               comma/space separated seed URLs
  difficulty / AUDIOCHAIN_DIFFICULTY     leading zeros required of block hashes
  storage_dir / AUDIOCHAIN_STORAGE_DIR   chain file + object store location
  device_maker / AUDIOCHAIN_DEVICE_MAKER
  device_model / AUDIOCHAIN_DEVICE_MODEL
  device_mac / AUDIOCHAIN_DEVICE_MAC     aa:bb:cc:dd:ee:ff
  device_gps / AUDIOCHAIN_DEVICE_GPS     "lat,lon" in decimal degrees (optional)

Device identity keys are required only for nodes with the recorder role.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

from .errors import AudiochainError
from .ledger import MAC_RE

VALID_ROLES = ("server", "recorder", "player")


class ConfigError(AudiochainError):
    pass


@dataclass
class NodeConfig:
    roles: tuple = ("server",)
    bind: str = "127.0.0.1:5000"
    peers: tuple = ()
    difficulty: int = 2
    storage_dir: str = "audiochain-data"
    device_maker: str = ""
    device_model: str = ""
    device_mac: str = ""
    device_gps: tuple | None = None

    def validate(self) -> "NodeConfig":
        if not self.roles:
            raise ConfigError("at least one role is required")
        for role in self.roles:
            if role not in VALID_ROLES:
                raise ConfigError(f"unknown role {role!r}, "
                                  f"valid: {', '.join(VALID_ROLES)}")
        host, _, port = self.bind.partition(":")
        if not host or not port.isdigit() or not 0 < int(port) < 65536:
            raise ConfigError(f"bind must be host:port, got {self.bind!r}")
        if self.difficulty < 1:
            raise ConfigError("difficulty must be >= 1")
        if "recorder" in self.roles:
            if not self.device_maker or not self.device_model:
                raise ConfigError("recorder nodes need device_maker and device_model")
            if not MAC_RE.match(self.device_mac or ""):
                raise ConfigError(f"recorder nodes need a device_mac like "
                                  f"aa:bb:cc:dd:ee:ff, got {self.device_mac!r}")
        if self.device_gps is not None:
            lat, lon = self.device_gps
            if not (-90 <= lat <= 90 and -180 <= lon <= 180):
                raise ConfigError(f"device_gps out of range: {self.device_gps}")
        return self

    @property
    def host(self) -> str:
        return self.bind.partition(":")[0]

    @property
    def port(self) -> int:
        return int(self.bind.partition(":")[2])

    @property
    def url(self) -> str:
        return f"http://{self.bind}"


def _split_list(text: str) -> tuple:
    return tuple(p for p in text.replace(",", " ").split() if p)


def _parse_gps(text: str) -> tuple:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"device_gps must be 'lat,lon', got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise ConfigError(f"device_gps must be numeric: {text!r}") from exc


def load_config(path=None, env=None) -> NodeConfig:
    """Build a NodeConfig from defaults, then a file, then the environment."""
    env = os.environ if env is None else env
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_string("[node]\n" + fh.read(), source=str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        values.update(parser["node"])
    for key in ("role", "bind", "peers", "difficulty", "storage_dir",
                "device_maker", "device_model", "device_mac", "device_gps"):
        env_key = f"AUDIOCHAIN_{key.upper()}"
        if env_key in env:
            values[key] = env[env_key]
    config = NodeConfig()
    if "role" in values:
        config.roles = _split_list(values["role"])
    if "bind" in values:
        config.bind = values["bind"].strip()
    if "peers" in values:
        config.peers = _split_list(values["peers"])
    if "difficulty" in values:
        try:
            config.difficulty = int(values["difficulty"])
        except ValueError as exc:
            raise ConfigError(f"difficulty must be an integer: "
                              f"{values['difficulty']!r}") from exc
    if "storage_dir" in values:
        config.storage_dir = values["storage_dir"].strip()
    if "device_maker" in values:
        config.device_maker = values["device_maker"].strip()
    if "device_model" in values:
        config.device_model = values["device_model"].strip()
    if "device_mac" in values:
        config.device_mac = values["device_mac"].strip()
    if values.get("device_gps", "").strip():
        config.device_gps = _parse_gps(values["device_gps"])
    return config.validate()


def write_config(path, config: NodeConfig) -> None:
    """Write a config file the loader round-trips (used by the demo harness)."""
    lines = [
        f"role = {','.join(config.roles)}",
        f"bind = {config.bind}",
        f"peers = {','.join(config.peers)}",
        f"difficulty = {config.difficulty}",
        f"storage_dir = {config.storage_dir}",
        f"device_maker = {config.device_maker}",
        f"device_model = {config.device_model}",
        f"device_mac = {config.device_mac}",
    ]
    if config.device_gps is not None:
        lines.append(f"device_gps = {config.device_gps[0]},{config.device_gps[1]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
