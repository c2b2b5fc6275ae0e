"""Minimal RIFF/WAVE codec: 16-bit PCM plus an INFO tag carrying a content id.

Only canonical PCM is supported (format code 1, 16 bits per sample). A
recording's content id travels in a LIST/INFO chunk as an ICOP entry placed
after the data chunk: 32 lowercase hex characters, NUL terminated, padded to
an even chunk size like any RIFF chunk.

Parse errors:
  NotRiff            not a RIFF/WAVE container at all
  UnsupportedFormat  valid RIFF but not canonical 16-bit PCM
  TruncatedFile      a chunk (or the whole file) stops short of its declared size
  BadChunkSize       structurally inconsistent sizes (fmt too small, ragged data, ...)
"""

from __future__ import annotations

import re
import struct
import uuid
from dataclasses import dataclass

import numpy as np

from .errors import AudiochainError

CONTENT_ID_RE = re.compile(r"^[0-9a-f]{32}$")


class NotRiff(AudiochainError):
    pass


class UnsupportedFormat(AudiochainError):
    pass


class TruncatedFile(AudiochainError):
    pass


class BadChunkSize(AudiochainError):
    pass


def new_content_id() -> str:
    """Fresh content id: a version-4 UUID as 32 lowercase hex chars."""
    return uuid.uuid4().hex


def is_content_id(text) -> bool:
    return isinstance(text, str) and bool(CONTENT_ID_RE.match(text))


@dataclass(eq=False)
class AudioClip:
    """Decoded PCM audio: one int16 vector per channel, all the same length."""

    sample_rate: int
    channels: list

    def __post_init__(self):
        if not isinstance(self.sample_rate, int) or self.sample_rate < 1:
            raise ValueError(f"bad sample rate: {self.sample_rate!r}")
        if not self.channels:
            raise ValueError("need at least one channel")
        self.channels = [np.asarray(c, dtype=np.int16) for c in self.channels]
        lengths = {len(c) for c in self.channels}
        if len(lengths) != 1:
            raise ValueError(f"channels differ in length: {sorted(lengths)}")

    @property
    def frames(self) -> int:
        return len(self.channels[0])

    @property
    def duration(self) -> float:
        return self.frames / self.sample_rate

    def __eq__(self, other):
        if not isinstance(other, AudioClip):
            return NotImplemented
        return (self.sample_rate == other.sample_rate
                and len(self.channels) == len(other.channels)
                and all(np.array_equal(a, b)
                        for a, b in zip(self.channels, other.channels)))


def _u16(data, pos):
    return struct.unpack_from("<H", data, pos)[0]


def _u32(data, pos):
    return struct.unpack_from("<I", data, pos)[0]


def _parse_info_list(body: bytes):
    """Scan a LIST/INFO body for an ICOP entry holding a content id."""
    pos = 4
    while pos + 8 <= len(body):
        tag = body[pos:pos + 4]
        size = _u32(body, pos + 4)
        chunk = body[pos + 8:pos + 8 + size]
        if len(chunk) < size:
            raise TruncatedFile(f"INFO entry {tag!r} declares {size} bytes, "
                                f"{len(chunk)} present")
        if tag == b"ICOP":
            text = chunk.rstrip(b"\x00").decode("ascii", errors="replace")
            if is_content_id(text):
                return text
        pos += 8 + size + (size & 1)
    return None


def read_wav(data: bytes):
    """Parse WAV bytes into (AudioClip, content_id or None)."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise NotRiff("missing RIFF/WAVE header")
    fmt = None
    raw = None
    content_id = None
    pos = 12
    while pos < len(data):
        if pos + 8 > len(data):
            raise BadChunkSize(f"{len(data) - pos} trailing bytes cannot form a chunk")
        tag = data[pos:pos + 4]
        size = _u32(data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise TruncatedFile(f"chunk {tag!r} declares {size} bytes, "
                                f"only {len(body)} present")
        if tag == b"fmt ":
            if size < 16:
                raise BadChunkSize(f"fmt chunk of {size} bytes")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif tag == b"data":
            raw = body
        elif tag == b"LIST" and body[:4] == b"INFO" and content_id is None:
            content_id = _parse_info_list(body)
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise UnsupportedFormat("no fmt chunk")
    if raw is None:
        raise TruncatedFile("no data chunk")
    format_code, n_channels, sample_rate, _byte_rate, block_align, bits = fmt
    if format_code != 1:
        raise UnsupportedFormat(f"format code {format_code}, only PCM (1) supported")
    if bits != 16:
        raise UnsupportedFormat(f"{bits} bits per sample, only 16 supported")
    if n_channels < 1:
        raise UnsupportedFormat("zero channels")
    if sample_rate < 1:
        raise UnsupportedFormat(f"sample rate {sample_rate}")
    if block_align != n_channels * 2:
        raise BadChunkSize(f"block align {block_align} != channels * 2")
    if len(raw) % block_align != 0:
        raise BadChunkSize(f"data size {len(raw)} not a multiple of {block_align}")
    interleaved = np.frombuffer(raw, dtype="<i2")
    channels = [interleaved[c::n_channels].copy() for c in range(n_channels)]
    clip = AudioClip(sample_rate=sample_rate, channels=channels)
    return clip, content_id


def write_wav(clip: AudioClip, content_id: str | None = None) -> bytes:
    """Serialize a clip to WAV bytes, optionally tagging it with a content id."""
    if content_id is not None and not is_content_id(content_id):
        raise ValueError(f"not a content id: {content_id!r}")
    n_channels = len(clip.channels)
    if n_channels > 0xFFFF:
        raise ValueError("too many channels for WAV")
    interleaved = np.stack([np.asarray(c, dtype="<i2") for c in clip.channels],
                           axis=1).ravel()
    raw = interleaved.tobytes()
    block_align = n_channels * 2
    fmt = struct.pack("<HHIIHH", 1, n_channels, clip.sample_rate,
                      clip.sample_rate * block_align, block_align, 16)
    chunks = [(b"fmt ", fmt), (b"data", raw)]
    if content_id is not None:
        entry = content_id.encode("ascii") + b"\x00"
        info = b"INFO" + b"ICOP" + struct.pack("<I", len(entry)) + entry
        if len(entry) & 1:
            info += b"\x00"
        chunks.append((b"LIST", info))
    out = bytearray()
    for tag, body in chunks:
        out += tag + struct.pack("<I", len(body)) + body
        if len(body) & 1:
            out += b"\x00"
    header = b"RIFF" + struct.pack("<I", 4 + len(out)) + b"WAVE"
    return header + bytes(out)


def embed_content_id(data: bytes, content_id: str) -> bytes:
    """Re-tag WAV bytes with a content id, replacing any previous tag.

    The output is rewritten in normal form (fmt, data, LIST/INFO); samples
    and sample rate are untouched.
    """
    if not is_content_id(content_id):
        raise ValueError(f"not a content id: {content_id!r}")
    clip, _ = read_wav(data)
    return write_wav(clip, content_id)
