"""Transition-point search and crossfade rendering between two clips.

The fine-grained search compares the raw (pre-log) mel spectrograms of
the query and match frames column-by-column: the dot-product matrix
locates the cut (high-energy events dominate the argmax) while the
cosine matrix, bounded in [0, 1] for non-negative spectrograms, feeds
the inverse-variance rule that picks the crossfade length.  Rendering
overlaps the two signals around the cut under square-root fade windows,
whose in/out weights satisfy w_in^2 + w_out^2 = 1 at every sample.

Time steps map to waveform positions through the center of the analysis
window: sample = step * hop + window_size / 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .audio_io import AudioClip
from .dsp import DEFAULT_MEL_BINS, Spectrogram, mel_spectrogram
from .errors import CrossfadeTooLong, CutOutOfRange, ShapeMismatch, TooShort

DEFAULT_PHI = 8.0
DEFAULT_L_MIN = 0.05
DEFAULT_L_MAX = 1.0
DEFAULT_FIXED_S = 0.25


class Strategy(str, Enum):
    """How to place the cut and whether/how long to fade."""

    CONCAT = "concat"
    FIXED_CROSSFADE = "crossfade"
    MAX_SS = "max-ss"
    MAX_SS_ADAPTIVE = "max-ss-adaptive"


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise time-step similarities of two equal-shape spectrograms.

    ``raw[i, j]`` is the dot product of query column i with match column
    j; ``cosine`` holds the same products over the column norms, with
    zero-norm columns mapping to 0.
    """

    raw: np.ndarray
    cosine: np.ndarray

    @property
    def t(self) -> int:
        return self.raw.shape[0]


def similarity_matrix(s_q: Spectrogram, s_m: Spectrogram) -> SimilarityMatrix:
    """Raw and cosine t x t similarity matrices of two spectrograms.

    Expects the raw (pre-log) mel form; shapes must agree exactly.

    Raises:
        ShapeMismatch: Differing frequency bins or time steps.
    """
    if s_q.data.shape != s_m.data.shape:
        raise ShapeMismatch(
            f"spectrogram shapes differ: {s_q.data.shape} vs {s_m.data.shape}"
        )
    q = np.asarray(s_q.data, dtype=np.float64)
    m = np.asarray(s_m.data, dtype=np.float64)
    raw = q.T @ m

    q_norms = np.linalg.norm(q, axis=0)
    m_norms = np.linalg.norm(m, axis=0)
    denom = np.outer(q_norms, m_norms)
    cosine = np.divide(raw, denom, out=np.zeros_like(raw), where=denom > 0.0)
    return SimilarityMatrix(raw=raw, cosine=cosine)


def max_ss(sim: SimilarityMatrix) -> tuple[int, int]:
    """Argmax over the raw matrix; ties break by smallest (i, then j)."""
    flat = int(np.argmax(sim.raw))
    i, j = divmod(flat, sim.raw.shape[1])
    return i, j


def adaptive_crossfade_length(
    sim: SimilarityMatrix,
    phi: float = DEFAULT_PHI,
    l_max: float = DEFAULT_L_MAX,
    l_min: float = 0.0,
) -> float:
    """Crossfade seconds from the inverse variance of the cosine matrix.

    l = 1 / (Var * phi) with the population variance over all t*t
    cosine entries, clamped to [l_min, l_max]; zero variance clamps to
    l_max.
    """
    if phi <= 0.0:
        raise ValueError("phi must be positive")
    var = float(np.var(sim.cosine))
    length = np.inf if var == 0.0 else 1.0 / (var * phi)
    return float(min(max(length, l_min), l_max))


@dataclass(frozen=True)
class TransitionPlan:
    """The recipe the renderer executes.

    ``cut_query``/``cut_match`` are sample positions: the output is the
    query up to ``cut_query`` followed by the match from ``cut_match``,
    overlapped for ``crossfade_s`` seconds centered on the cut.
    ``cut_i``/``cut_j`` record the spectrogram steps that produced the
    cut for the sub-spectrogram strategies; boundary strategies leave
    them unset.
    """

    strategy: Strategy
    cut_query: int
    cut_match: int
    crossfade_s: float
    cut_i: int | None = None
    cut_j: int | None = None
    var: float | None = None
    phi: float | None = None

    def describe(self, sample_rate: int = 48000) -> dict:
        """JSON-friendly summary of the plan."""
        return {
            "strategy": self.strategy.value,
            "cut_i": self.cut_i,
            "cut_j": self.cut_j,
            "cut_query_s": self.cut_query / sample_rate,
            "cut_match_s": self.cut_match / sample_rate,
            "crossfade_s": self.crossfade_s,
            "var": self.var,
            "phi": self.phi,
        }


@dataclass
class TransitionConfig:
    """Tunables shared by the planning strategies."""

    phi: float = DEFAULT_PHI
    fixed_s: float = DEFAULT_FIXED_S
    l_min: float = DEFAULT_L_MIN
    l_max: float = DEFAULT_L_MAX
    mel_bins: int = DEFAULT_MEL_BINS


def crossfade_weights(length: int) -> tuple[np.ndarray, np.ndarray]:
    """Square-root fade-out/fade-in weights over ``length`` samples.

    u runs linearly over [0, 1]; the outgoing weight is sqrt(1 - u) and
    the incoming weight sqrt(u), so the pair is equal-power at every
    sample.
    """
    u = np.linspace(0.0, 1.0, length)
    return np.sqrt(1.0 - u), np.sqrt(u)


def render(query: AudioClip, match: AudioClip, plan: TransitionPlan) -> AudioClip:
    """Blend two clips according to a plan.

    The output is the query prefix, an optional equal-power overlap
    centered on the cut, then the match suffix, hard-clipped to [-1, 1].
    The overlap consumes floor(L/2) samples before each cut point and
    ceil(L/2) after; output length is therefore exactly
    cut_query + (len(match) - cut_match).

    Raises:
        CutOutOfRange: A cut point falls outside its clip.
        CrossfadeTooLong: The overlap does not fit the available audio.
    """
    if query.sample_rate != match.sample_rate:
        raise ShapeMismatch("query and match sample rates differ")
    if plan.crossfade_s < 0.0:
        raise ValueError("crossfade_s must be >= 0")
    sr = query.sample_rate
    cut_q, cut_m = plan.cut_query, plan.cut_match
    if not 0 <= cut_q <= len(query):
        raise CutOutOfRange(f"query cut {cut_q} outside clip of {len(query)} samples")
    if not 0 <= cut_m <= len(match):
        raise CutOutOfRange(f"match cut {cut_m} outside clip of {len(match)} samples")

    overlap = int(round(plan.crossfade_s * sr))
    if overlap == 0:
        out = np.concatenate([query.samples[:cut_q], match.samples[cut_m:]])
    else:
        half = overlap // 2
        start_q = cut_q - half
        start_m = cut_m - half
        if start_q < 0 or start_q + overlap > len(query):
            raise CrossfadeTooLong(
                f"{overlap}-sample overlap does not fit query around sample {cut_q}"
            )
        if start_m < 0 or start_m + overlap > len(match):
            raise CrossfadeTooLong(
                f"{overlap}-sample overlap does not fit match around sample {cut_m}"
            )
        w_out, w_in = crossfade_weights(overlap)
        blended = (
            w_out * query.samples[start_q : start_q + overlap]
            + w_in * match.samples[start_m : start_m + overlap]
        )
        out = np.concatenate(
            [query.samples[:start_q], blended, match.samples[start_m + overlap :]]
        )
    out = np.clip(out, -1.0, 1.0)
    source = f"{query.source_id}=>{match.source_id}" if query.source_id else match.source_id
    return AudioClip(out, sr, source_id=source, offset_s=0.0)


def _fit_overlap(total: int, cut_q: int, len_q: int, cut_m: int, len_m: int) -> int:
    """Largest even overlap <= total that fits both clips around the cuts."""
    room = min(cut_q, cut_m, len_q - cut_q, len_m - cut_m)
    return min(total, 2 * room)


def step_to_sample(step: int, hop: int = 1024, window_size: int = 2048) -> int:
    """Center-of-window sample position of a spectrogram time step."""
    return step * hop + window_size // 2


def make_plan(
    query: AudioClip,
    match: AudioClip,
    strategy: Strategy,
    config: TransitionConfig | None = None,
    *,
    query_frame_offset_s: float = 0.0,
    match_frame_offset_s: float = 0.0,
) -> TransitionPlan:
    """Choose cut points and crossfade length for a strategy.

    The sub-spectrogram search runs over the 1-second windows starting
    at the given offsets within each clip; audio outside those windows
    (when present) only widens the room available to the crossfade.
    Boundary strategies cut at the end of the query window and the
    start of the match window; for a fixed crossfade the overlap covers
    the last fade-length of the query window and the first of the
    match window, with the nominal cut at its center.

    Raises:
        TooShort: Either clip lacks a full 1-second window at its offset.
    """
    config = config or TransitionConfig()
    sr = query.sample_rate
    if match.sample_rate != sr:
        raise ShapeMismatch("query and match sample rates differ")
    frame_len = sr  # 1-second search window
    off_q = int(round(query_frame_offset_s * sr))
    off_m = int(round(match_frame_offset_s * sr))
    if off_q < 0 or off_q + frame_len > len(query):
        raise TooShort("query clip lacks a full 1-second window at the requested offset")
    if off_m < 0 or off_m + frame_len > len(match):
        raise TooShort("match clip lacks a full 1-second window at the requested offset")

    if strategy is Strategy.CONCAT:
        return TransitionPlan(
            strategy=strategy,
            cut_query=off_q + frame_len,
            cut_match=off_m,
            crossfade_s=0.0,
        )

    if strategy is Strategy.FIXED_CROSSFADE:
        # Overlap spans the query-window tail and match-window head; the
        # nominal cut sits at the center of that overlap.
        overlap = min(int(round(config.fixed_s * sr)), off_q + frame_len, len(match) - off_m)
        return TransitionPlan(
            strategy=strategy,
            cut_query=off_q + frame_len - (overlap - overlap // 2),
            cut_match=off_m + overlap // 2,
            crossfade_s=overlap / sr,
        )

    query_window = query.slice(off_q, off_q + frame_len)
    match_window = match.slice(off_m, off_m + frame_len)
    sim = similarity_matrix(
        mel_spectrogram(query_window, config.mel_bins, log_compress=False),
        mel_spectrogram(match_window, config.mel_bins, log_compress=False),
    )
    cut_i, cut_j = max_ss(sim)
    cut_q = off_q + step_to_sample(cut_i)
    cut_m = off_m + step_to_sample(cut_j)
    var = float(np.var(sim.cosine))

    if strategy is Strategy.MAX_SS:
        return TransitionPlan(
            strategy=strategy,
            cut_query=cut_q,
            cut_match=cut_m,
            crossfade_s=0.0,
            cut_i=cut_i,
            cut_j=cut_j,
            var=var,
        )

    length_s = adaptive_crossfade_length(sim, config.phi, config.l_max, config.l_min)
    overlap = _fit_overlap(int(round(length_s * sr)), cut_q, len(query), cut_m, len(match))
    return TransitionPlan(
        strategy=Strategy.MAX_SS_ADAPTIVE,
        cut_query=cut_q,
        cut_match=cut_m,
        crossfade_s=overlap / sr,
        cut_i=cut_i,
        cut_j=cut_j,
        var=var,
        phi=config.phi,
    )
