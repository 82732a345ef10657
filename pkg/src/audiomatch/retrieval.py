"""Immutable feature gallery with exact top-k inner-product search.

The gallery is a flat matrix of unit-norm float32 vectors scanned
exhaustively per query (no approximate structures); scores accumulate
in float64 and ties break by ascending id so results are deterministic.

Feature files are little-endian binary: magic "AMCF", u32 version,
u32 d, u64 count, then per entry a u16-length-prefixed UTF-8 id, a
u16-length-prefixed UTF-8 source id, an f32 offset in seconds, and d
f32 vector components.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio_io import AudioClip
from .dsp import (
    DEFAULT_MEL_BINS,
    DEFAULT_N_MFCC,
    FeatureKind,
    flatten,
    mel_spectrogram,
    mfcc,
)
from .embedding import ProjectionHead, embed
from .errors import DimensionMismatch, DuplicateId, EmptyIndex, IoError

_FEATURE_MAGIC = b"AMCF"
_FEATURE_VERSION = 1


def normalize(vector: np.ndarray) -> np.ndarray:
    """L2-normalize; an all-zero vector maps to the first basis vector."""
    vector = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        out = np.zeros_like(vector)
        out[0] = 1.0
        return out
    return vector / norm


def frame_id(source_id: str, offset_s: float) -> str:
    """Canonical id of a 1-second frame within its source."""
    return f"{source_id}@{offset_s:.3f}"


@dataclass(frozen=True)
class GalleryEntry:
    """One indexed frame: id, provenance, and unit feature vector."""

    id: str
    source_id: str
    offset_s: float
    vector: np.ndarray


@dataclass(frozen=True)
class MatchCandidate:
    """One retrieval result; scores are non-increasing with rank."""

    query_id: str
    gallery_id: str
    score: float
    rank: int


class GalleryIndex:
    """Immutable set of unit vectors supporting exact top-k MIPS."""

    def __init__(self, entries: Sequence[GalleryEntry]):
        if not entries:
            raise EmptyIndex("cannot build an index from zero vectors")
        d = len(entries[0].vector)
        seen: set[str] = set()
        for entry in entries:
            if len(entry.vector) != d:
                raise DimensionMismatch(
                    f"entry {entry.id!r} has dimension {len(entry.vector)}, expected {d}"
                )
            if entry.id in seen:
                raise DuplicateId(f"duplicate gallery id {entry.id!r}")
            seen.add(entry.id)

        self._ids = tuple(entry.id for entry in entries)
        self._id_array = np.array(self._ids)
        self._source_ids = tuple(entry.source_id for entry in entries)
        self._offsets = np.array([entry.offset_s for entry in entries], dtype=np.float64)
        matrix = np.stack([entry.vector for entry in entries]).astype(np.float32)
        matrix.flags.writeable = False
        self._matrix = matrix
        self._row_by_id = {entry_id: row for row, entry_id in enumerate(self._ids)}

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def d(self) -> int:
        return self._matrix.shape[1]

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._row_by_id

    def entry(self, entry_id: str) -> GalleryEntry:
        row = self._row_by_id[entry_id]
        return GalleryEntry(
            id=self._ids[row],
            source_id=self._source_ids[row],
            offset_s=float(self._offsets[row]),
            vector=self._matrix[row],
        )

    def vector(self, entry_id: str) -> np.ndarray:
        return self._matrix[self._row_by_id[entry_id]]

    def source_of(self, entry_id: str) -> str:
        return self._source_ids[self._row_by_id[entry_id]]

    def entries(self) -> list[GalleryEntry]:
        return [self.entry(entry_id) for entry_id in self._ids]

    def query(
        self,
        z_q: np.ndarray,
        k: int,
        exclude_source: str | None = None,
        query_id: str = "",
    ) -> list[MatchCandidate]:
        """Exact top-k entries by inner product, descending.

        Ties break by ascending id.  Entries whose source matches
        ``exclude_source`` are skipped.  Returns min(k, eligible)
        candidates.

        Raises:
            DimensionMismatch: Query dimension differs from the index.
            EmptyIndex: No eligible entries remain after exclusion.
        """
        z_q = np.asarray(z_q, dtype=np.float64)
        if z_q.shape != (self.d,):
            raise DimensionMismatch(f"query has shape {z_q.shape}, index dimension is {self.d}")
        if k < 1:
            raise ValueError("k must be >= 1")

        # einsum upcasts the f32 rows blockwise and accumulates in f64
        # without materializing a float64 copy of the whole matrix.
        scores = np.einsum("ij,j->i", self._matrix, z_q, dtype=np.float64)
        if exclude_source is None:
            eligible = np.arange(len(self._ids))
        else:
            eligible = np.array(
                [i for i, source in enumerate(self._source_ids) if source != exclude_source],
                dtype=np.intp,
            )
        if eligible.size == 0:
            raise EmptyIndex("no eligible gallery entries for this query")

        sub_scores = scores[eligible]
        order = np.lexsort((self._id_array[eligible], -sub_scores))
        top = eligible[order[:k]]
        return [
            MatchCandidate(
                query_id=query_id,
                gallery_id=self._ids[row],
                score=float(scores[row]),
                rank=rank,
            )
            for rank, row in enumerate(top, start=1)
        ]


def build_index(
    entries: Iterable[GalleryEntry | tuple[str, str, float, np.ndarray]],
) -> GalleryIndex:
    """Build an immutable index; iteration order is insertion order.

    Raises:
        EmptyIndex: No entries.
        DimensionMismatch: Vectors of mixed dimension.
        DuplicateId: Repeated entry id.
    """
    normalized = [
        entry if isinstance(entry, GalleryEntry) else GalleryEntry(*entry) for entry in entries
    ]
    return GalleryIndex(normalized)


def featurize_clip(
    clip: AudioClip,
    head: ProjectionHead | None = None,
    kind: FeatureKind = FeatureKind.MEL,
    *,
    mel_bins: int = DEFAULT_MEL_BINS,
    n_mfcc: int = DEFAULT_N_MFCC,
) -> np.ndarray:
    """Unit float32 feature vector of one frame.

    Without a head the flattened base feature is L2-normalized directly
    (the non-learned baseline); with a head, it passes through the
    projection instead.
    """
    if kind is FeatureKind.MEL:
        spec = mel_spectrogram(clip, mel_bins)
    else:
        spec = mfcc(clip, n_mfcc, mel_bins)
    base = flatten(spec)
    vector = embed(head, base) if head is not None else normalize(base.values)
    return vector.astype(np.float32)


def batch_featurize(
    clips: Sequence[AudioClip],
    head: ProjectionHead | None = None,
    kind: FeatureKind = FeatureKind.MEL,
    *,
    mel_bins: int = DEFAULT_MEL_BINS,
    n_mfcc: int = DEFAULT_N_MFCC,
) -> list[GalleryEntry]:
    """Deterministic clip -> feature -> unit-vector pipeline.

    Entry ids follow :func:`frame_id` over each clip's source and
    offset.
    """
    return [
        GalleryEntry(
            id=frame_id(clip.source_id, clip.offset_s),
            source_id=clip.source_id,
            offset_s=clip.offset_s,
            vector=featurize_clip(clip, head, kind, mel_bins=mel_bins, n_mfcc=n_mfcc),
        )
        for clip in clips
    ]


def write_features(path: str | Path, entries: Sequence[GalleryEntry]) -> None:
    """Write entries as an AMCF v1 feature file."""
    if not entries:
        raise EmptyIndex("refusing to write an empty feature file")
    d = len(entries[0].vector)
    parts = [_FEATURE_MAGIC, struct.pack("<IIQ", _FEATURE_VERSION, d, len(entries))]
    for entry in entries:
        if len(entry.vector) != d:
            raise DimensionMismatch(f"entry {entry.id!r} has mixed dimension")
        id_bytes = entry.id.encode("utf-8")
        source_bytes = entry.source_id.encode("utf-8")
        parts.append(struct.pack("<H", len(id_bytes)))
        parts.append(id_bytes)
        parts.append(struct.pack("<H", len(source_bytes)))
        parts.append(source_bytes)
        parts.append(struct.pack("<f", entry.offset_s))
        parts.append(np.asarray(entry.vector, dtype="<f4").tobytes())
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write feature file {path}: {exc}") from exc


def read_features(path: str | Path) -> list[GalleryEntry]:
    """Read an AMCF v1 feature file back into gallery entries."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read feature file {path}: {exc}") from exc
    if len(raw) < 20 or raw[:4] != _FEATURE_MAGIC:
        raise IoError(f"{path} is not a feature file")
    version, d, count = struct.unpack_from("<IIQ", raw, 4)
    if version != _FEATURE_VERSION:
        raise IoError(f"unsupported feature file version {version}")

    entries: list[GalleryEntry] = []
    pos = 4 + struct.calcsize("<IIQ")
    try:
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            entry_id = raw[pos : pos + id_len].decode("utf-8")
            pos += id_len
            (source_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            source_id = raw[pos : pos + source_len].decode("utf-8")
            pos += source_len
            (offset_s,) = struct.unpack_from("<f", raw, pos)
            pos += 4
            vector = np.frombuffer(raw, dtype="<f4", count=d, offset=pos).copy()
            pos += 4 * d
            entries.append(
                GalleryEntry(id=entry_id, source_id=source_id, offset_s=offset_s, vector=vector)
            )
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise IoError(f"truncated or corrupt feature file {path}") from exc
    if pos != len(raw):
        raise IoError(f"feature file {path} has {len(raw) - pos} trailing bytes")
    return entries
