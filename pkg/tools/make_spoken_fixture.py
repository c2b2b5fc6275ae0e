#!/usr/bin/env python3
"""Regenerate tests/fixtures/spoken_word.wav.

Synthesizes a deterministic speech-like clip: voiced vowel segments with a
drifting fundamental and formant-shaped harmonics, interleaved with fricative
noise bursts and short pauses. 8 kHz mono, exactly 100352 samples, peak about
0.45 of full scale. The length is 98 whole analysis hops so duration-altering
edits move the frame count whenever they should.

With --check, runs the standard robustness conditions against the freshly
written file and fails if any condition leaves the fingerprint unchanged.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

RATE = 8000
TOTAL_SAMPLES = 100352
PEAK = 0.45
SEED = 20260819

FORMANTS = {
    "a": (730.0, 1090.0, 2440.0),
    "e": (530.0, 1840.0, 2480.0),
    "i": (270.0, 2290.0, 3010.0),
    "o": (570.0, 840.0, 2410.0),
    "u": (300.0, 870.0, 2240.0),
}
FORMANT_WIDTHS = (110.0, 140.0, 200.0)
FORMANT_GAINS = (1.0, 0.7, 0.35)


def _formant_envelope(freqs: np.ndarray, vowel: str) -> np.ndarray:
    env = np.zeros_like(freqs)
    for centre, width, gain in zip(FORMANTS[vowel], FORMANT_WIDTHS, FORMANT_GAINS):
        env += gain * np.exp(-0.5 * ((freqs - centre) / width) ** 2)
    tilt = np.where(freqs > 500.0, (freqs / 500.0) ** -0.7, 1.0)
    return env * tilt + 0.02


def _segment_envelope(n: int, attack: int, release: int) -> np.ndarray:
    env = np.ones(n)
    attack = min(attack, n // 2)
    release = min(release, n - attack)
    if attack:
        env[:attack] = 0.5 - 0.5 * np.cos(np.pi * np.arange(attack) / attack)
    if release:
        env[n - release:] = 0.5 + 0.5 * np.cos(np.pi * np.arange(release) / release)
    return env


def _voiced(rng: np.random.Generator, f0_state: list) -> np.ndarray:
    n = int(rng.uniform(0.12, 0.28) * RATE)
    f0_start = f0_state[0]
    f0_end = float(np.clip(f0_start + rng.uniform(-18.0, 18.0), 95.0, 135.0))
    f0_state[0] = f0_end
    t = np.arange(n) / RATE
    f0 = np.linspace(f0_start, f0_end, n)
    f0 = f0 * (1.0 + 0.015 * np.sin(2 * np.pi * 5.2 * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / RATE
    vowel = rng.choice(list(FORMANTS))
    f0_mid = 0.5 * (f0_start + f0_end)
    x = np.zeros(n)
    for k in range(1, int(3600.0 / f0_mid) + 1):
        amp = _formant_envelope(np.array([k * f0_mid]), vowel)[0] / np.sqrt(k)
        x += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    x += 0.01 * rng.standard_normal(n)
    return x * _segment_envelope(n, attack=int(0.02 * RATE), release=int(0.04 * RATE))


def _fricative(rng: np.random.Generator) -> np.ndarray:
    n = int(rng.uniform(0.06, 0.14) * RATE)
    noise = rng.standard_normal(n + 1)
    shaped = noise[1:] - 0.7 * noise[:-1]
    return 0.3 * shaped * _segment_envelope(n, attack=int(0.01 * RATE),
                                            release=int(0.02 * RATE))


def synthesize() -> np.ndarray:
    rng = np.random.default_rng(SEED)
    pieces = []
    total = 0
    f0_state = [float(rng.uniform(100.0, 125.0))]
    while total < TOTAL_SAMPLES:
        roll = rng.random()
        if roll < 0.62:
            piece = _voiced(rng, f0_state)
        elif roll < 0.80:
            piece = _fricative(rng)
        else:
            piece = np.zeros(int(rng.uniform(0.04, 0.16) * RATE))
        pieces.append(piece)
        total += len(piece)
    x = np.concatenate(pieces)[:TOTAL_SAMPLES]
    x = x / np.max(np.abs(x)) * PEAK
    return np.rint(x * 32767.0).astype(np.int16)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=None,
                        help="output path (default: tests/fixtures/spoken_word.wav)")
    parser.add_argument("--check", action="store_true",
                        help="run the robustness conditions against the result")
    args = parser.parse_args(argv)

    from audiochain.wav import AudioClip, write_wav

    out = Path(args.out) if args.out else (
        Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "spoken_word.wav")
    out.parent.mkdir(parents=True, exist_ok=True)
    samples = synthesize()
    clip = AudioClip(RATE, [samples])
    out.write_bytes(write_wav(clip))
    print(f"wrote {out} ({len(samples)} samples, {clip.duration:.3f} s, "
          f"peak {np.max(np.abs(samples))})")

    if args.check:
        from audiochain.tamper import (
            rows_to_table,
            run_robustness_experiment,
            standard_conditions,
        )

        rows = run_robustness_experiment(clip, standard_conditions(include_control=True))
        print(rows_to_table(rows))
        bad = [r for r in rows if r.error
               or (r.method == "gain" and r.strength == "0 dB") != (not r.signature_changed)]
        if bad:
            print("FIXTURE NOT USABLE:", [(r.method, r.strength) for r in bad])
            return 1
        print("all conditions behave as required")
    return 0


if __name__ == "__main__":
    sys.exit(main())
