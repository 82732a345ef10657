"""WAV parsing, writing, resampling, and segmentation."""

import struct

import numpy as np
import pytest

from audiomatch import AudioClip, load_audio, segment, write_audio
from audiomatch.errors import CorruptFile, IoError, TooShort, UnsupportedFormat


def wav_bytes(samples: np.ndarray, rate: int, fmt: str) -> bytes:
    """Hand-rolled WAV encoder, independent of the package's writer.

    ``samples`` is (frames, channels) float in [-1, 1]; ``fmt`` is one
    of "pcm16", "pcm24", "float32".
    """
    channels = samples.shape[1]
    if fmt == "pcm16":
        ints = np.clip(np.rint(samples * 32768.0), -32768, 32767).astype("<i2")
        data = ints.tobytes()
        bits, code = 16, 1
    elif fmt == "pcm24":
        ints = np.clip(np.rint(samples * 8388608.0), -8388608, 8388607).astype("<i4")
        raw = ints.astype("<u4").tobytes()
        data = b"".join(raw[i : i + 3] for i in range(0, len(raw), 4))
        bits, code = 24, 1
    elif fmt == "float32":
        data = samples.astype("<f4").tobytes()
        bits, code = 32, 3
    else:
        raise ValueError(fmt)
    block = channels * bits // 8
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(data)),
            b"WAVE",
            b"fmt ",
            struct.pack("<IHHIIHH", 16, code, channels, rate, rate * block, block, bits),
            b"data",
            struct.pack("<I", len(data)),
        ]
    )
    return header + data


def write_wav(path, samples, rate, fmt="pcm16"):
    path.write_bytes(wav_bytes(np.atleast_2d(samples.T).T, rate, fmt))
    return path


class TestLoadAudio:
    def test_one_second_of_silence(self, tmp_path):
        path = write_wav(tmp_path / "silence.wav", np.zeros((48000, 1)), 48000)
        clip = load_audio(path)
        assert len(clip) == 48000
        assert clip.sample_rate == 48000
        assert np.all(clip.samples == 0.0)

    def test_symmetric_stereo_mixes_to_zero(self, tmp_path):
        stereo = np.column_stack([np.full(4800, 0.5), np.full(4800, -0.5)])
        path = write_wav(tmp_path / "sym.wav", stereo, 48000)
        clip = load_audio(path)
        assert np.all(clip.samples == 0.0)

    def test_resampled_sine_keeps_its_frequency(self, tmp_path):
        # Oracle: direct synthesis of the same sine at 48 kHz.
        t_in = np.arange(44100) / 44100
        path = write_wav(
            tmp_path / "sine44.wav", (0.5 * np.sin(2 * np.pi * 440 * t_in))[:, None], 44100
        )
        clip = load_audio(path)
        assert len(clip) == 48000

        window = np.hanning(8192)
        spectrum = np.abs(np.fft.rfft(clip.samples[4096 : 4096 + 8192] * window))
        freqs = np.fft.rfftfreq(8192, 1 / 48000)
        bin_width = 48000 / 8192
        assert abs(freqs[np.argmax(spectrum)] - 440.0) <= bin_width

        t48 = np.arange(48000) / 48000
        reference = 0.5 * np.sin(2 * np.pi * 440 * t48)
        mid = slice(2000, 46000)  # skip filter edge effects
        assert np.max(np.abs(clip.samples[mid] - reference[mid])) < 1e-3

    def test_24_bit_and_float32_paths(self, tmp_path):
        ramp = np.linspace(-0.9, 0.9, 4800)[:, None]
        clip24 = load_audio(write_wav(tmp_path / "r24.wav", ramp, 48000, "pcm24"))
        clipf = load_audio(write_wav(tmp_path / "rf.wav", ramp, 48000, "float32"))
        assert np.max(np.abs(clip24.samples - ramp[:, 0])) < 2**-23
        assert np.max(np.abs(clipf.samples - ramp[:, 0])) < 1e-7

    def test_mixdown_is_linear(self, tmp_path, rng):
        left = rng.uniform(-0.8, 0.8, 4800)
        right = rng.uniform(-0.8, 0.8, 4800)
        stereo = load_audio(write_wav(tmp_path / "st.wav", np.column_stack([left, right]), 48000))
        mono_l = load_audio(write_wav(tmp_path / "l.wav", left[:, None], 48000))
        mono_r = load_audio(write_wav(tmp_path / "r.wav", right[:, None], 48000))
        mean = (mono_l.samples + mono_r.samples) / 2
        assert np.max(np.abs(stereo.samples - mean)) <= 1.0 / 32768

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            load_audio(tmp_path / "nope.wav")

    def test_not_a_wav(self, tmp_path):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"ID3\x00 this is not a wav at all")
        with pytest.raises(CorruptFile):
            load_audio(bad)

    def test_truncated_data_chunk(self, tmp_path):
        good = wav_bytes(np.zeros((1000, 1)), 48000, "pcm16")
        bad = tmp_path / "trunc.wav"
        bad.write_bytes(good[: len(good) - 500])
        with pytest.raises(CorruptFile):
            load_audio(bad)

    def test_unsupported_codec(self, tmp_path):
        raw = bytearray(wav_bytes(np.zeros((100, 1)), 48000, "pcm16"))
        struct.pack_into("<H", raw, 20, 0x0007)  # mu-law format code
        bad = tmp_path / "mulaw.wav"
        bad.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedFormat):
            load_audio(bad)

    def test_unsupported_bit_depth(self, tmp_path):
        raw = bytearray(wav_bytes(np.zeros((100, 1)), 48000, "pcm16"))
        struct.pack_into("<H", raw, 34, 8)  # claim 8-bit PCM
        struct.pack_into("<H", raw, 32, 1)  # block align for 8-bit mono
        bad = tmp_path / "pcm8.wav"
        bad.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedFormat):
            load_audio(bad)


class TestWriteAudio:
    def test_silence_round_trips_to_digital_zero(self, tmp_path):
        clip = AudioClip(np.zeros(4800), 48000)
        path = tmp_path / "z.wav"
        write_audio(clip, path)
        assert np.all(load_audio(path).samples == 0.0)

    def test_full_scale_quantization_bound(self, tmp_path):
        clip = AudioClip(np.ones(4800), 48000)
        path = tmp_path / "one.wav"
        write_audio(clip, path)
        assert np.max(np.abs(load_audio(path).samples - 1.0)) <= 1.0 / 32768

    def test_random_round_trip_bound(self, tmp_path, rng):
        clip = AudioClip(rng.uniform(-1, 1, 48000), 48000)
        path = tmp_path / "r.wav"
        write_audio(clip, path)
        assert np.max(np.abs(load_audio(path).samples - clip.samples)) <= 2**-15

    def test_write_load_is_idempotent_after_first_quantization(self, tmp_path, rng):
        clip = AudioClip(rng.uniform(-1, 1, 4800), 48000)
        p1, p2 = tmp_path / "a.wav", tmp_path / "b.wav"
        write_audio(clip, p1)
        once = load_audio(p1)
        write_audio(once, p2)
        assert p1.read_bytes()[44:] == p2.read_bytes()[44:]
        assert np.array_equal(load_audio(p2).samples, once.samples)

    def test_unwritable_path(self, tmp_path):
        clip = AudioClip(np.zeros(10), 48000)
        with pytest.raises(IoError):
            write_audio(clip, tmp_path / "no" / "such" / "dir.wav")


class TestSegment:
    def test_ten_seconds_gives_ten_frames(self, tone_clip):
        frames = segment(tone_clip(seconds=10.0))
        assert len(frames) == 10
        assert [f.offset_s for f in frames] == [float(i) for i in range(10)]
        assert all(len(f) == 48000 for f in frames)

    def test_exactly_one_second(self, tone_clip):
        frames = segment(tone_clip(seconds=1.0))
        assert len(frames) == 1
        assert frames[0].offset_s == 0.0

    def test_remainder_dropped_and_prefix_exact(self, tone_clip):
        clip = tone_clip(seconds=2.7)
        frames = segment(clip)
        assert len(frames) == 2
        rebuilt = np.concatenate([f.samples for f in frames])
        assert np.array_equal(rebuilt, clip.samples[: 2 * 48000])

    def test_too_short(self, tone_clip):
        with pytest.raises(TooShort):
            segment(tone_clip(seconds=0.5))

    def test_carries_source_and_offsets(self, tone_clip):
        clip = tone_clip(seconds=3.0, source_id="movie", offset_s=0.0)
        frames = segment(clip)
        assert all(f.source_id == "movie" for f in frames)
        offsets = [f.offset_s for f in frames]
        assert offsets == sorted(offsets)
        assert np.allclose(np.diff(offsets), 1.0)


class TestAudioClip:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            AudioClip(np.array([0.0, np.nan]), 48000)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            AudioClip(np.zeros(10), 0)

    def test_samples_are_read_only(self):
        clip = AudioClip(np.zeros(10), 48000)
        with pytest.raises(ValueError):
            clip.samples[0] = 1.0
