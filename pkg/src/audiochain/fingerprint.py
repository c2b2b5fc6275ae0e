"""Spectral sign-bit fingerprints for PCM audio.

Per channel, the signal is cut into Hann-windowed frames (frame_size samples,
advancing by hop), each frame goes through a radix-2 DFT in double precision,
and bin energies are summed into log-spaced bands in ascending bin order. The
fixed operation order keeps results bit-identical across platforms. Per frame
the fingerprint keeps:

  * a 32-bit sign word: bit m is 1 iff the band-energy difference
    (E[n][m] - E[n][m+1]) - (E[n-1][m] - E[n-1][m+1]) is strictly positive
    (frame -1 counts as all-zero bands; ties give 0); bit m is the m-th least
    significant bit,
  * an energy byte: the frame's RMS level relative to int16 full scale,
    quantized in energy_step_db steps from energy_floor_db, clamped to 0..255
    (all-zero frames pin to 0).

Encoded form, little-endian throughout, then standard base64 with padding:

  magic b"AFP1" | params_id (8 bytes) | channels u16 | frames_per_channel u32
  | words: channels * frames u32, channel-major | energies: channels * frames u8

so the byte length before base64 is exactly 18 + 5 * channels * frames.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import AudiochainError

HEADER_MAGIC = b"AFP1"
HEADER_BYTES = 18
BYTES_PER_FRAME = 5  # one u32 sign word + one u8 energy byte


class UnsupportedRate(AudiochainError):
    pass


class MalformedEncoding(AudiochainError):
    pass


class ParamsMismatch(AudiochainError):
    pass


@dataclass(frozen=True)
class FingerprintParams:
    frame_size: int = 2048
    hop: int = 1024
    bands: int = 33
    band_lo_hz: float = 300.0
    band_hi_hz: float = 2000.0
    energy_step_db: float = 0.5
    energy_floor_db: float = -96.0

    def __post_init__(self):
        if self.frame_size < 2 or self.frame_size & (self.frame_size - 1):
            raise ValueError("frame_size must be a power of two >= 2")
        if not 1 <= self.hop <= self.frame_size:
            raise ValueError("hop must be in 1..frame_size")
        if not 2 <= self.bands <= 33:
            raise ValueError("bands must be in 2..33 (sign words are 32 bits)")
        if not 0 < self.band_lo_hz < self.band_hi_hz:
            raise ValueError("band edges must satisfy 0 < lo < hi")
        if self.energy_step_db <= 0:
            raise ValueError("energy_step_db must be positive")

    @cached_property
    def params_id(self) -> bytes:
        """8-byte digest identifying this parameter set in encodings."""
        text = json.dumps({
            "frame_size": self.frame_size, "hop": self.hop, "bands": self.bands,
            "band_lo_hz": self.band_lo_hz, "band_hi_hz": self.band_hi_hz,
            "energy_step_db": self.energy_step_db,
            "energy_floor_db": self.energy_floor_db,
        }, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("ascii")).digest()[:8]

    @cached_property
    def band_edges(self) -> np.ndarray:
        """bands+1 log-spaced edges from band_lo_hz to band_hi_hz."""
        k = np.arange(self.bands + 1, dtype=np.float64)
        return self.band_lo_hz * (self.band_hi_hz / self.band_lo_hz) ** (k / self.bands)

    def frames_for(self, samples: int) -> int:
        if samples < self.frame_size:
            return 0
        return (samples - self.frame_size) // self.hop + 1


DEFAULT_PARAMS = FingerprintParams()


@dataclass(eq=False)
class Fingerprint:
    params_id: bytes
    channels: int
    frames_per_channel: int
    words: np.ndarray     # (channels, frames) uint32
    energies: np.ndarray  # (channels, frames) uint8

    def __post_init__(self):
        shape = (self.channels, self.frames_per_channel)
        self.words = np.ascontiguousarray(self.words, dtype=np.uint32)
        self.energies = np.ascontiguousarray(self.energies, dtype=np.uint8)
        if self.words.shape != shape or self.energies.shape != shape:
            raise ValueError(f"words/energies must both have shape {shape}")

    def __eq__(self, other):
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return encode_fingerprint(self) == encode_fingerprint(other)


@dataclass
class MatchReport:
    identical: bool
    bit_error_rate: float | None = None
    energy_mismatch: bool | None = None


def _bit_reversed_indices(n: int) -> np.ndarray:
    levels = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for i in range(1, n):
        rev[i] = (rev[i >> 1] >> 1) | ((i & 1) << (levels - 1))
    return rev


def _dft_rows(frames: np.ndarray) -> np.ndarray:
    """Radix-2 DFT of each row (row length must be a power of two).

    Iterative Cooley-Tukey with a fixed butterfly order so identical inputs
    give bit-identical outputs everywhere.
    """
    n_rows, n = frames.shape
    a = frames[:, _bit_reversed_indices(n)].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp((-2j * np.pi / size) * np.arange(half))
        a = a.reshape(n_rows, n // size, size)
        even = a[:, :, :half]
        odd = a[:, :, half:] * twiddle
        a = np.concatenate([even + odd, even - odd], axis=2).reshape(n_rows, n)
        size *= 2
    return a


def _band_bins(sample_rate: int, params: FingerprintParams) -> list:
    """For each band, the ascending DFT bin indices whose center falls inside."""
    n = params.frame_size
    centers = np.arange(n // 2 + 1, dtype=np.float64) * sample_rate / n
    edges = params.band_edges
    bins = []
    for m in range(params.bands):
        lo, hi = edges[m], edges[m + 1]
        if m == params.bands - 1:
            inside = (centers >= lo) & (centers <= hi)
        else:
            inside = (centers >= lo) & (centers < hi)
        bins.append(np.nonzero(inside)[0])
    return bins


def _band_energy_rows(mag2: np.ndarray, bins: list) -> np.ndarray:
    rows = mag2.shape[0]
    energies = np.zeros((rows, len(bins)), dtype=np.float64)
    for m, ks in enumerate(bins):
        acc = energies[:, m]
        for k in ks:  # ascending bin order, sequential accumulation
            acc += mag2[:, k]
    return energies


def band_energies(frame, sample_rate: int, params: FingerprintParams = DEFAULT_PARAMS) -> np.ndarray:
    """Banded spectral energies of one frame (frame_size samples)."""
    if 2 * params.band_hi_hz > sample_rate:
        raise UnsupportedRate(
            f"top band edge {params.band_hi_hz} Hz needs sample rate >= "
            f"{2 * params.band_hi_hz:.0f}, got {sample_rate}")
    x = np.asarray(frame, dtype=np.float64)
    if x.shape != (params.frame_size,):
        raise ValueError(f"frame must hold exactly {params.frame_size} samples")
    windowed = (x * np.hanning(params.frame_size))[np.newaxis, :]
    spectrum = _dft_rows(windowed)[:, :params.frame_size // 2 + 1]
    mag2 = spectrum.real ** 2 + spectrum.imag ** 2
    return _band_energy_rows(mag2, _band_bins(sample_rate, params))[0]


def _energy_bytes(frames: np.ndarray, params: FingerprintParams) -> np.ndarray:
    """Quantized RMS level per unwindowed frame, full scale = 32768."""
    rms2 = np.mean((frames / 32768.0) ** 2, axis=1)
    out = np.zeros(len(rms2), dtype=np.uint8)
    live = rms2 > 0.0
    if np.any(live):
        db = 10.0 * np.log10(rms2[live])
        q = np.floor((db - params.energy_floor_db) / params.energy_step_db + 0.5)
        out[live] = np.clip(q, 0, 255).astype(np.uint8)
    return out


def _sign_words(energies: np.ndarray) -> np.ndarray:
    """Pack per-frame sign bits of band-energy difference deltas into u32s."""
    diff = energies[:, :-1] - energies[:, 1:]
    delta = diff.copy()
    delta[1:] -= diff[:-1]
    bits = delta > 0.0
    weights = (np.uint32(1) << np.arange(bits.shape[1], dtype=np.uint32))
    return (bits.astype(np.uint32) * weights).sum(axis=1, dtype=np.uint32)


def compute_fingerprint(clip, params: FingerprintParams = DEFAULT_PARAMS) -> Fingerprint:
    """Fingerprint every channel of a clip with the given parameters."""
    if 2 * params.band_hi_hz > clip.sample_rate:
        raise UnsupportedRate(
            f"top band edge {params.band_hi_hz} Hz needs sample rate >= "
            f"{2 * params.band_hi_hz:.0f}, got {clip.sample_rate}")
    n_channels = len(clip.channels)
    n_frames = params.frames_for(clip.frames)
    words = np.zeros((n_channels, n_frames), dtype=np.uint32)
    energy = np.zeros((n_channels, n_frames), dtype=np.uint8)
    if n_frames:
        window = np.hanning(params.frame_size)
        bins = _band_bins(clip.sample_rate, params)
        offsets = (np.arange(n_frames)[:, np.newaxis] * params.hop
                   + np.arange(params.frame_size)[np.newaxis, :])
        for c, samples in enumerate(clip.channels):
            x = np.asarray(samples, dtype=np.float64)
            frames = x[offsets]
            energy[c] = _energy_bytes(frames, params)
            spectrum = _dft_rows(frames * window)[:, :params.frame_size // 2 + 1]
            mag2 = spectrum.real ** 2 + spectrum.imag ** 2
            words[c] = _sign_words(_band_energy_rows(mag2, bins))
    return Fingerprint(params_id=params.params_id, channels=n_channels,
                       frames_per_channel=n_frames, words=words, energies=energy)


def encoded_size(channels: int, frames_per_channel: int) -> int:
    """Byte length of the binary form before base64."""
    return HEADER_BYTES + BYTES_PER_FRAME * channels * frames_per_channel


def encode_fingerprint(fp: Fingerprint) -> str:
    head = (HEADER_MAGIC + fp.params_id
            + struct.pack("<HI", fp.channels, fp.frames_per_channel))
    body = fp.words.astype("<u4").tobytes() + fp.energies.tobytes()
    return base64.b64encode(head + body).decode("ascii")


def decode_fingerprint(text: str, expected_params: FingerprintParams | None = None) -> Fingerprint:
    try:
        raw = base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise MalformedEncoding(f"not base64: {exc}") from exc
    if len(raw) < HEADER_BYTES or raw[:4] != HEADER_MAGIC:
        raise MalformedEncoding("missing fingerprint header")
    params_id = raw[4:12]
    channels, frames = struct.unpack_from("<HI", raw, 12)
    if len(raw) != encoded_size(channels, frames):
        raise MalformedEncoding(
            f"{len(raw)} bytes, expected {encoded_size(channels, frames)} "
            f"for {channels} channel(s) x {frames} frame(s)")
    if expected_params is not None and params_id != expected_params.params_id:
        raise ParamsMismatch(
            f"encoded with params {params_id.hex()}, expected "
            f"{expected_params.params_id.hex()}")
    n = channels * frames
    words = np.frombuffer(raw, dtype="<u4", count=n, offset=HEADER_BYTES)
    energies = np.frombuffer(raw, dtype=np.uint8, count=n, offset=HEADER_BYTES + 4 * n)
    return Fingerprint(params_id=params_id, channels=channels, frames_per_channel=frames,
                       words=words.reshape(channels, frames).copy(),
                       energies=energies.reshape(channels, frames).copy())


def compare_fingerprints(a: Fingerprint, b: Fingerprint) -> MatchReport:
    """Byte-exact comparison plus a bit error rate when shapes agree.

    Authentication relies on `identical` alone; the bit error rate (fraction
    of differing sign bits out of 32 * channels * frames) and the energy-byte
    flag are diagnostics.
    """
    identical = encode_fingerprint(a) == encode_fingerprint(b)
    same_shape = (a.params_id == b.params_id and a.channels == b.channels
                  and a.frames_per_channel == b.frames_per_channel)
    if not same_shape:
        return MatchReport(identical=False)
    total_bits = 32 * a.channels * a.frames_per_channel
    if total_bits == 0:
        return MatchReport(identical=identical, bit_error_rate=0.0,
                           energy_mismatch=False)
    xor = np.bitwise_xor(a.words, b.words)
    differing = int(np.unpackbits(np.frombuffer(xor.tobytes(), dtype=np.uint8)).sum())
    return MatchReport(
        identical=identical,
        bit_error_rate=differing / total_bits,
        energy_mismatch=not np.array_equal(a.energies, b.energies),
    )
