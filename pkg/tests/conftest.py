import numpy as np
import pytest

from audiomatch import AudioClip


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tone_clip():
    """Factory for mono test tones at 48 kHz."""

    def make(freq=440.0, seconds=1.0, amp=0.5, sr=48000, source_id="tone", offset_s=0.0):
        t = np.arange(int(round(seconds * sr))) / sr
        return AudioClip(amp * np.sin(2 * np.pi * freq * t), sr, source_id, offset_s)

    return make
