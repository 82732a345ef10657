"""Seeded synthetic audio corpora for tests, demos, and benchmarks.

Two corpora cover the pipeline end to end without any external data:

* A labeled tone-family retrieval set: families of clips sharing a
  fundamental frequency, with positives drawn from a different clip of
  the same family and negatives from families at least several
  semitones away.  Frame ids match what segmentation produces, so the
  labels plug straight into the CLI path.

* A training corpus of frame sequences whose low band carries a tone
  drifting monotonically a little per frame (adjacent frames sound
  closest) and whose high band carries a loud per-frame random
  distractor tone.  Raw spectral similarity is dominated by the
  distractor; a trained projection has to suppress the high band to
  retrieve neighbors, which is what makes the corpus useful for
  exercising the contrastive objective.

All generators are deterministic given a seed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .audio_io import CANONICAL_RATE, AudioClip, write_audio
from .dsp import DEFAULT_MEL_BINS, flatten, mel_spectrogram
from .retrieval import frame_id

DRIFT_LOW_AMP = 0.25
DRIFT_HIGH_AMP = 0.5


def tone(
    freq: float,
    seconds: float,
    sr: int = CANONICAL_RATE,
    amp: float = 0.5,
    harmonics: tuple[float, ...] = (1.0,),
    phase: float = 0.0,
) -> np.ndarray:
    """Sum of harmonics of a fundamental, peak-normalized to ``amp``."""
    t = np.arange(int(round(seconds * sr))) / sr
    out = np.zeros_like(t)
    for h, weight in enumerate(harmonics, start=1):
        out += weight * np.sin(2.0 * np.pi * freq * h * t + phase)
    peak = np.max(np.abs(out))
    return out * (amp / peak) if peak > 0 else out


def chirp(
    f_start: float, f_end: float, seconds: float, sr: int = CANONICAL_RATE, amp: float = 0.5
) -> np.ndarray:
    """Linear sweep from f_start to f_end."""
    t = np.arange(int(round(seconds * sr))) / sr
    sweep = f_start + (f_end - f_start) * t / (2.0 * seconds)
    return amp * np.sin(2.0 * np.pi * sweep * t)


def noise_burst(
    seconds: float, sr: int = CANONICAL_RATE, amp: float = 0.3, seed: int = 0
) -> np.ndarray:
    """Seeded white noise clipped to [-amp, amp]."""
    rng = np.random.default_rng(seed)
    return np.clip(rng.normal(0.0, amp / 3.0, int(round(seconds * sr))), -amp, amp)


def impulse_train(
    seconds: float,
    sr: int = CANONICAL_RATE,
    rate_hz: float = 3.0,
    amp: float = 0.8,
    decay: float = 0.004,
) -> np.ndarray:
    """Exponentially decaying clicks at a fixed repetition rate."""
    n = int(round(seconds * sr))
    out = np.zeros(n)
    period = int(sr / rate_hz)
    kernel = amp * np.exp(-np.arange(int(decay * sr) * 8) / (decay * sr))
    for start in range(0, n, period):
        end = min(n, start + len(kernel))
        out[start:end] += kernel[: end - start]
    return np.clip(out, -1.0, 1.0)


def _family_fundamentals(n_families: int, base_hz: float = 220.0, semitones: float = 5.0):
    return base_hz * 2.0 ** (semitones * np.arange(n_families) / 12.0)


def tone_family_set(
    out_dir: str | Path,
    seed: int = 0,
    n_families: int = 8,
    clip_seconds: float = 3.0,
) -> tuple[list[Path], Path]:
    """Write a labeled tone-family retrieval set.

    Each family gets two WAVs sharing a fundamental: an "a" clip whose
    first frame is the query and a "b" clip whose frames are the
    positives.  Negatives are every other family's "b" frames.  Family
    fundamentals sit 5 semitones apart, so negatives always differ by
    at least 3 semitones.

    Returns:
        (wav paths, labels path); labels are JSON lines
        {query_id, gallery_id, relevance} keyed by segmentation frame
        ids.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    fundamentals = _family_fundamentals(n_families)
    harmonics = (1.0, 0.5, 0.25)
    frames_per_clip = int(clip_seconds)

    wav_paths: list[Path] = []
    stems: dict[tuple[int, str], str] = {}
    for fam, f0 in enumerate(fundamentals):
        for variant in ("a", "b"):
            stem = f"fam{fam:02d}_{variant}"
            stems[(fam, variant)] = stem
            audio = tone(
                f0,
                clip_seconds,
                amp=0.4,
                harmonics=harmonics,
                phase=float(rng.uniform(0.0, 2.0 * np.pi)),
            )
            # Slow amplitude wobble plus a faint noise floor keeps the two
            # variants of a family non-identical without moving the pitch.
            t = np.arange(len(audio)) / CANONICAL_RATE
            wobble = 1.0 + 0.1 * np.sin(2.0 * np.pi * float(rng.uniform(0.2, 0.5)) * t)
            audio = audio * wobble + rng.normal(0.0, 1e-4, len(audio))
            path = out_dir / f"{stem}.wav"
            write_audio(AudioClip(np.clip(audio, -1, 1), CANONICAL_RATE, stem), path)
            wav_paths.append(path)

    rows: list[dict] = []
    for fam in range(n_families):
        query = frame_id(stems[(fam, "a")], 0.0)
        for offset in range(frames_per_clip):
            rows.append(
                {
                    "query_id": query,
                    "gallery_id": frame_id(stems[(fam, "b")], float(offset)),
                    "relevance": 1,
                }
            )
        for other in range(n_families):
            if other == fam:
                continue
            for offset in range(frames_per_clip):
                rows.append(
                    {
                        "query_id": query,
                        "gallery_id": frame_id(stems[(other, "b")], float(offset)),
                        "relevance": 0,
                    }
                )

    labels_path = out_dir / "labels.jsonl"
    labels_path.write_text("\n".join(json.dumps(row) for row in rows) + "\n")
    return wav_paths, labels_path


def drift_sequence_audio(rng: np.random.Generator, n_frames: int = 10) -> np.ndarray:
    """Per-frame audio of one training sequence, shape (n_frames, 48000).

    The identity of a sequence lives below ~5 kHz: a fundamental that
    starts in [250, 700] Hz and drifts monotonically 1.2-1.8 semitones
    per frame (so neighbors are the closest frames in pitch) over four
    fixed formant tones unique to the sequence.  A loud pair of
    high-band tones is redrawn every frame, swamping unprojected
    spectral similarity.
    """
    t = np.arange(CANONICAL_RATE) / CANONICAL_RATE
    f0 = float(np.exp(rng.uniform(np.log(250.0), np.log(700.0))))
    rate = float(rng.uniform(1.2, 1.8))
    direction = 1.0 if f0 < 420.0 else -1.0
    formants = np.exp(rng.uniform(np.log(1500.0), np.log(5000.0), size=4))
    formant_amps = rng.uniform(0.6, 1.0, size=4)

    frames = np.empty((n_frames, CANONICAL_RATE))
    for i in range(n_frames):
        fi = f0 * 2.0 ** (direction * rate * i / 12.0)
        low = 0.8 * np.sin(2.0 * np.pi * fi * t) + 0.5 * np.sin(2.0 * np.pi * 2.0 * fi * t)
        for freq, amp in zip(formants, formant_amps):
            low += amp * np.sin(2.0 * np.pi * freq * t)
        low *= DRIFT_LOW_AMP / np.max(np.abs(low))
        hf1 = float(np.exp(rng.uniform(np.log(6000.0), np.log(18000.0))))
        hf2 = float(np.exp(rng.uniform(np.log(6000.0), np.log(18000.0))))
        high = DRIFT_HIGH_AMP * (
            np.sin(2.0 * np.pi * hf1 * t) + 0.7 * np.sin(2.0 * np.pi * hf2 * t)
        )
        frames[i] = np.clip(low + high, -1.0, 1.0)
    return frames


def drift_corpus_features(
    n_sequences: int,
    n_frames: int = 10,
    seed: int = 0,
    mel_bins: int = DEFAULT_MEL_BINS,
) -> np.ndarray:
    """In-memory training corpus of flattened log-mel base features.

    Returns a (n_sequences, n_frames, d_base) float64 array.
    """
    rng = np.random.default_rng(seed)
    sequences = []
    for _ in range(n_sequences):
        audio = drift_sequence_audio(rng, n_frames)
        frames = [
            flatten(mel_spectrogram(AudioClip(frame, CANONICAL_RATE), mel_bins)).values
            for frame in audio
        ]
        sequences.append(np.stack(frames))
    return np.stack(sequences)


def write_drift_corpus(
    out_dir: str | Path,
    n_sequences: int,
    n_frames: int = 10,
    seed: int = 0,
) -> list[Path]:
    """Write drift sequences as source WAVs, one per sequence.

    Feed the result through segmentation to obtain the per-frame
    manifest the training command consumes.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    wav_paths: list[Path] = []
    for index in range(n_sequences):
        stem = f"seq{index:04d}"
        audio = drift_sequence_audio(rng, n_frames).reshape(-1)
        path = out_dir / f"{stem}.wav"
        write_audio(AudioClip(audio, CANONICAL_RATE, stem), path)
        wav_paths.append(path)
    return wav_paths
