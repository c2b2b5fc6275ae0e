"""Audio manipulations and the fingerprint robustness experiment.

Four manipulation kinds, all pure (the input clip is never touched):

  trim     remove round(seconds * rate) samples from the end
  gain     scale samples by 10^(db/20), clamped to int16
  stretch  linear-interpolation resample to round(frames * (1 + percent/100))
           samples at the unchanged rate
  pitch    resample by 2^(cents/1200), then trim or zero-pad back to the
           original length so only spectral content moves
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import AudiochainError
from .fingerprint import DEFAULT_PARAMS, compare_fingerprints, compute_fingerprint
from .wav import AudioClip


class InvalidAmount(AudiochainError):
    pass


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _to_int16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), -32768, 32767).astype(np.int16)


def trim(clip: AudioClip, seconds: float) -> AudioClip:
    """Cut seconds of audio off the end."""
    if not (0 < seconds < clip.duration):
        raise InvalidAmount(f"trim of {seconds} s on a {clip.duration} s clip")
    removed = _round_half_up(seconds * clip.sample_rate)
    if removed >= clip.frames:
        raise InvalidAmount(f"trim of {seconds} s leaves no samples")
    keep = clip.frames - removed
    return AudioClip(clip.sample_rate, [c[:keep].copy() for c in clip.channels])


def gain(clip: AudioClip, db: float) -> AudioClip:
    if not math.isfinite(db):
        raise InvalidAmount(f"gain of {db} dB")
    factor = 10.0 ** (db / 20.0)
    return AudioClip(clip.sample_rate,
                     [_to_int16(c.astype(np.float64) * factor) for c in clip.channels])


def time_stretch(clip: AudioClip, percent: float) -> AudioClip:
    """Stretch (+) or compress (-) playback time without changing the rate."""
    if not math.isfinite(percent) or percent <= -100:
        raise InvalidAmount(f"stretch of {percent} %")
    new_frames = _round_half_up(clip.frames * (1.0 + percent / 100.0))
    if new_frames < 1:
        raise InvalidAmount(f"stretch of {percent} % leaves no samples")
    positions = np.linspace(0.0, clip.frames - 1, new_frames)
    grid = np.arange(clip.frames, dtype=np.float64)
    return AudioClip(clip.sample_rate,
                     [_to_int16(np.interp(positions, grid, c.astype(np.float64)))
                      for c in clip.channels])


def pitch_shift(clip: AudioClip, cents: float) -> AudioClip:
    """Shift pitch by resampling, keeping the original sample count."""
    if not math.isfinite(cents):
        raise InvalidAmount(f"pitch shift of {cents} cents")
    factor = 2.0 ** (cents / 1200.0)
    resampled_frames = _round_half_up(clip.frames / factor)
    if resampled_frames < 1:
        raise InvalidAmount(f"pitch shift of {cents} cents leaves no samples")
    positions = np.arange(resampled_frames, dtype=np.float64) * factor
    grid = np.arange(clip.frames, dtype=np.float64)
    out = []
    for c in clip.channels:
        y = _to_int16(np.interp(positions, grid, c.astype(np.float64)))
        if len(y) >= clip.frames:
            y = y[:clip.frames]
        else:
            y = np.concatenate([y, np.zeros(clip.frames - len(y), dtype=np.int16)])
        out.append(y)
    return AudioClip(clip.sample_rate, out)


_APPLY = {"trim": trim, "gain": gain, "stretch": time_stretch, "pitch": pitch_shift}
KINDS = tuple(_APPLY)


@dataclass(frozen=True)
class Manipulation:
    kind: str
    amount: float

    def __post_init__(self):
        if self.kind not in _APPLY:
            raise InvalidAmount(f"unknown manipulation kind {self.kind!r}")

    def apply(self, clip: AudioClip) -> AudioClip:
        return _APPLY[self.kind](clip, self.amount)


@dataclass(frozen=True)
class Condition:
    """One experiment row: a label plus the manipulations it bundles.

    Rows whose strength covers both signs carry two manipulations and only
    count as changed when every one of them changed the fingerprint.
    """

    method: str
    strength: str
    manipulations: tuple


@dataclass
class RobustnessRow:
    method: str
    strength: str
    signature_changed: bool | None = None
    error: str | None = None


def standard_conditions(include_control: bool = False) -> list:
    """The 13 standard rows; optionally an identity control row at the end."""
    rows = []
    for seconds in (0.1, 1.0, 3.0, 10.0):
        rows.append(Condition("trim", f"{seconds} s",
                              (Manipulation("trim", seconds),)))
    for db in (1, 3, 10):
        rows.append(Condition("gain", f"±{db} dB",
                              (Manipulation("gain", db), Manipulation("gain", -db))))
    for pct in (1, 10, 50):
        rows.append(Condition("stretch", f"±{pct} %",
                              (Manipulation("stretch", pct),
                               Manipulation("stretch", -pct))))
    for cents in (1, 10, 100):
        unit = "cent" if cents == 1 else "cents"
        rows.append(Condition("pitch", f"{cents} {unit}",
                              (Manipulation("pitch", cents),)))
    if include_control:
        rows.append(Condition("gain", "0 dB", (Manipulation("gain", 0),)))
    return rows


MIN_STANDARD_DURATION = 12.0


def run_robustness_experiment(clip: AudioClip, conditions=None,
                              params=DEFAULT_PARAMS) -> list:
    """Fingerprint the clip, apply each condition, report what changed.

    A failing condition becomes an error row; the run continues.
    """
    if conditions is None:
        if clip.duration < MIN_STANDARD_DURATION:
            raise InvalidAmount(
                f"standard conditions need a clip of at least "
                f"{MIN_STANDARD_DURATION} s, got {clip.duration:.3f} s")
        conditions = standard_conditions()
    reference = compute_fingerprint(clip, params)
    rows = []
    for cond in conditions:
        try:
            changed = True
            for manipulation in cond.manipulations:
                candidate = compute_fingerprint(manipulation.apply(clip), params)
                if compare_fingerprints(reference, candidate).identical:
                    changed = False
                    break
            rows.append(RobustnessRow(cond.method, cond.strength, changed))
        except AudiochainError as exc:
            rows.append(RobustnessRow(cond.method, cond.strength, None,
                                      f"{type(exc).__name__}: {exc}"))
    return rows


def rows_to_json(rows) -> str:
    return json.dumps([{
        "method": r.method,
        "strength": r.strength,
        "signature_changed": r.signature_changed,
        "error": r.error,
    } for r in rows], indent=2, ensure_ascii=False)


def rows_to_table(rows) -> str:
    header = ("method", "strength", "signature changed")
    body = []
    for r in rows:
        if r.error is not None:
            outcome = f"ERROR ({r.error})"
        else:
            outcome = "Yes" if r.signature_changed else "No"
        body.append((r.method, r.strength, outcome))
    widths = [max(len(row[i]) for row in [header] + body) for i in range(3)]
    lines = ["  ".join(col.ljust(widths[i]) for i, col in enumerate(row)).rstrip()
             for row in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
