import base64

import numpy as np
import pytest

from _signals import make_rich_clip, make_sine
from audiochain.fingerprint import (
    BYTES_PER_FRAME,
    DEFAULT_PARAMS,
    HEADER_BYTES,
    Fingerprint,
    FingerprintParams,
    MalformedEncoding,
    ParamsMismatch,
    UnsupportedRate,
    band_energies,
    compare_fingerprints,
    compute_fingerprint,
    decode_fingerprint,
    encode_fingerprint,
    encoded_size,
)
from audiochain.wav import AudioClip


def reference_band_energies(frame: np.ndarray, sample_rate: int) -> np.ndarray:
    """Slow, written-from-the-definition oracle: O(N^2) transform, explicit
    band walk. Shares nothing with the implementation under test."""
    n = len(frame)
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / (n - 1))
    x = frame.astype(np.float64) * window
    k = np.arange(n)
    spectrum = np.exp(-2j * np.pi * np.outer(k, k) / n) @ x
    mag2 = np.abs(spectrum) ** 2
    bands = DEFAULT_PARAMS.bands
    edges = [DEFAULT_PARAMS.band_lo_hz
             * (DEFAULT_PARAMS.band_hi_hz / DEFAULT_PARAMS.band_lo_hz) ** (m / bands)
             for m in range(bands + 1)]
    out = np.zeros(bands)
    for bin_index in range(n):
        freq = bin_index * sample_rate / n
        for m in range(bands):
            upper_ok = freq <= edges[m + 1] if m == bands - 1 else freq < edges[m + 1]
            if edges[m] <= freq and upper_ok:
                out[m] += mag2[bin_index]
                break
    return out


def test_frames_for_arithmetic():
    cases = {0: 0, 2047: 0, 2048: 1, 3071: 1, 3072: 2, 100352: 97, 200704: 195}
    for samples, frames in cases.items():
        assert DEFAULT_PARAMS.frames_for(samples) == frames


def test_band_energies_match_slow_oracle():
    rng = np.random.default_rng(3)
    frame = rng.integers(-20000, 20000, 2048).astype(np.int16)
    ours = band_energies(frame, 8000)
    ref = reference_band_energies(frame, 8000)
    np.testing.assert_allclose(ours, ref, rtol=1e-9, atol=1e-6)


@pytest.mark.parametrize("freq", [330.0, 500.0, 1000.0, 1500.0, 1960.0])
def test_sine_lands_in_its_band(freq):
    clip = make_sine(freq, seconds=0.256)
    energies = band_energies(clip.channels[0][:2048], clip.sample_rate)
    edges = DEFAULT_PARAMS.band_edges
    m = int(np.argmax(energies))
    assert edges[m] <= freq <= edges[m + 1]


def test_band_energy_scales_with_square_of_gain():
    rng = np.random.default_rng(5)
    quiet = rng.integers(-4000, 4000, 2048).astype(np.int16)
    loud = (quiet * 2).astype(np.int16)
    e1 = band_energies(quiet, 8000)
    e2 = band_energies(loud, 8000)
    np.testing.assert_allclose(e2, 4.0 * e1, rtol=1e-9)


def test_silence_fingerprint_is_all_zero():
    clip = AudioClip(8000, [np.zeros(10240, dtype=np.int16)])
    fp = compute_fingerprint(clip)
    assert not fp.words.any()
    assert not fp.energies.any()


def test_energy_byte_quantization():
    amplitude = 8192  # -12.04 dBFS RMS for a constant frame
    clip = AudioClip(8000, [np.full(4096, amplitude, dtype=np.int16)])
    fp = compute_fingerprint(clip)
    db = 10.0 * np.log10((amplitude / 32768.0) ** 2)
    expected = int(np.floor((db - (-96.0)) / 0.5 + 0.5))
    assert set(fp.energies.ravel().tolist()) == {expected}


def test_fingerprint_deterministic(fixture_clip):
    a = encode_fingerprint(compute_fingerprint(fixture_clip))
    b = encode_fingerprint(compute_fingerprint(fixture_clip))
    assert a == b


def test_golden_encodings_bit_exact(fixture_clip, golden_fingerprints):
    x = fixture_clip.channels[0]
    clips = {
        "spoken_mono": AudioClip(8000, [x]),
        "spoken_stereo": AudioClip(8000, [x, x[::-1].copy()]),
        "silence_1s": AudioClip(8000, [np.zeros(8000, dtype=np.int16)]),
        "spoken_trim_tail": AudioClip(8000, [x[:100352 - 8000]]),
    }
    for name, clip in clips.items():
        golden = golden_fingerprints[name]
        enc = encode_fingerprint(compute_fingerprint(clip))
        assert enc == golden["b64"], f"{name} drifted from its pinned encoding"
        assert len(base64.b64decode(enc)) == golden["bytes"]


def test_encoded_size_formula():
    for channels, frames in [(1, 1), (1, 97), (2, 97), (3, 10)]:
        assert encoded_size(channels, frames) == HEADER_BYTES + BYTES_PER_FRAME * channels * frames


def test_encoding_layout_is_channel_major():
    x = make_rich_clip(seed=8, seconds=0.8)
    y = make_rich_clip(seed=9, seconds=0.8)
    stereo = AudioClip(8000, [x.channels[0], y.channels[0]])
    fp = compute_fingerprint(stereo)
    raw = base64.b64decode(encode_fingerprint(fp))
    frames = fp.words.shape[1]
    words = np.frombuffer(raw[HEADER_BYTES:HEADER_BYTES + 8 * frames], dtype="<u4")
    assert np.array_equal(words[:frames], compute_fingerprint(x).words[0])
    assert np.array_equal(words[frames:], compute_fingerprint(y).words[0])
    energies = np.frombuffer(raw[HEADER_BYTES + 8 * frames:], dtype=np.uint8)
    assert np.array_equal(energies[:frames], compute_fingerprint(x).energies[0])


def test_round_trip():
    fp = compute_fingerprint(make_rich_clip(seed=1, channels=2))
    again = decode_fingerprint(encode_fingerprint(fp))
    assert again == fp
    assert np.array_equal(again.words, fp.words)
    assert np.array_equal(again.energies, fp.energies)


class TestMalformedEncodings:
    def test_not_base64(self):
        with pytest.raises(MalformedEncoding):
            decode_fingerprint("@@@not base64@@@")

    def test_wrong_magic(self):
        raw = bytearray(base64.b64decode(
            encode_fingerprint(compute_fingerprint(make_rich_clip(seed=2)))))
        raw[:4] = b"JUNK"
        with pytest.raises(MalformedEncoding):
            decode_fingerprint(base64.b64encode(bytes(raw)).decode())

    def test_truncated(self):
        raw = base64.b64decode(
            encode_fingerprint(compute_fingerprint(make_rich_clip(seed=2))))
        with pytest.raises(MalformedEncoding):
            decode_fingerprint(base64.b64encode(raw[:-3]).decode())

    def test_too_short_for_header(self):
        with pytest.raises(MalformedEncoding):
            decode_fingerprint(base64.b64encode(b"AFP1\x00\x00").decode())

    def test_params_mismatch(self):
        enc = encode_fingerprint(compute_fingerprint(make_rich_clip(seed=2)))
        other = FingerprintParams(bands=20)
        with pytest.raises(ParamsMismatch):
            decode_fingerprint(enc, expected_params=other)
        assert decode_fingerprint(enc, expected_params=DEFAULT_PARAMS)


def test_params_id_tracks_parameters():
    assert FingerprintParams().params_id == DEFAULT_PARAMS.params_id
    assert FingerprintParams(bands=20).params_id != DEFAULT_PARAMS.params_id
    assert len(DEFAULT_PARAMS.params_id) == 8


class TestCompare:
    def test_identical(self):
        fp = compute_fingerprint(make_rich_clip(seed=3))
        report = compare_fingerprints(fp, compute_fingerprint(make_rich_clip(seed=3)))
        assert report.identical
        assert report.bit_error_rate == 0.0

    def test_single_flipped_bit(self):
        fp = compute_fingerprint(make_rich_clip(seed=3))
        words = fp.words.copy()
        words[0, 0] ^= np.uint32(1 << 7)
        other = Fingerprint(params_id=fp.params_id, channels=fp.channels,
                            frames_per_channel=fp.frames_per_channel,
                            words=words, energies=fp.energies.copy())
        report = compare_fingerprints(fp, other)
        assert not report.identical
        total_bits = 32 * fp.words.size
        assert report.bit_error_rate == pytest.approx(1.0 / total_bits)

    def test_energy_only_difference(self):
        fp = compute_fingerprint(make_rich_clip(seed=3))
        energies = fp.energies.copy()
        energies[0, 0] ^= 1
        other = Fingerprint(params_id=fp.params_id, channels=fp.channels,
                            frames_per_channel=fp.frames_per_channel,
                            words=fp.words.copy(), energies=energies)
        report = compare_fingerprints(fp, other)
        assert not report.identical
        assert report.bit_error_rate == 0.0
        assert report.energy_mismatch

    def test_shape_mismatch_has_no_ber(self):
        mono = compute_fingerprint(make_rich_clip(seed=3))
        stereo = compute_fingerprint(make_rich_clip(seed=3, channels=2))
        report = compare_fingerprints(mono, stereo)
        assert not report.identical
        assert report.bit_error_rate is None


def test_low_sample_rates_rejected():
    clip = AudioClip(3999, [np.zeros(8000, dtype=np.int16)])
    with pytest.raises(UnsupportedRate):
        compute_fingerprint(clip)
    # 4000 Hz puts the top band edge exactly at Nyquist, which is allowed
    compute_fingerprint(AudioClip(4000, [np.zeros(8000, dtype=np.int16)]))


def test_doubled_fixture_has_one_extra_frame(fixture_clip):
    x = fixture_clip.channels[0]
    doubled = AudioClip(8000, [np.concatenate([x, x])])
    single = compute_fingerprint(fixture_clip)
    double = compute_fingerprint(doubled)
    assert single.words.shape[1] == 97
    assert double.words.shape[1] == 2 * 97 + 1
