"""Command-line pipeline: segment, featurize, query, render, train, eval.

Every subcommand is deterministic given --seed, reads and writes only
the files named in its arguments, and exits 0 iff it succeeded.  The
env var AMC_THREADS caps internal parallelism (featurization fans out
over a thread pool; results keep input order either way).
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import audio_io, dsp, evaluation, retrieval, synthetic, transition
from .dsp import DEFAULT_MEL_BINS, DEFAULT_N_MFCC, FeatureKind
from .embedding import ProjectionHead, TrainConfig, train
from .errors import AudioMatchError
from .retrieval import GalleryEntry, frame_id

_FRAME_SECONDS = 1.0


def _max_workers() -> int:
    env = os.environ.get("AMC_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _iter_input_wavs(inputs: list[str]) -> list[Path]:
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.wav")))
        else:
            paths.append(p)
    return paths


def _read_manifest(path: str | Path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rows.append(json.loads(line))
    if not rows:
        raise AudioMatchError(f"manifest {path} is empty")
    return rows


def cmd_segment(args: argparse.Namespace) -> int:
    wavs = _iter_input_wavs(args.inputs)
    if not wavs:
        raise AudioMatchError("no input WAV files found")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for wav in wavs:
        clip = audio_io.load_audio(wav)
        for index, frame in enumerate(audio_io.segment(clip, args.frame_seconds)):
            frame_path = out_dir / f"{clip.source_id}_{index:05d}.wav"
            audio_io.write_audio(frame, frame_path)
            rows.append(
                {
                    "id": frame_id(frame.source_id, frame.offset_s),
                    "path": str(frame_path),
                    "source_id": frame.source_id,
                    "offset_s": frame.offset_s,
                }
            )
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(json.dumps(row) for row in rows) + "\n")
    print(f"wrote {len(rows)} frames and {manifest}")
    return 0


def _load_frame(row: dict) -> audio_io.AudioClip:
    clip = audio_io.load_audio(row["path"])
    frame = audio_io.segment(clip, _FRAME_SECONDS)[0]
    return audio_io.AudioClip(
        frame.samples,
        frame.sample_rate,
        source_id=row["source_id"],
        offset_s=float(row["offset_s"]),
    )


def cmd_featurize(args: argparse.Namespace) -> int:
    rows = _read_manifest(args.manifest)
    head = ProjectionHead.load(args.head) if args.head else None
    kind = FeatureKind(args.kind)
    out_path = Path(args.out)

    def one(row: dict) -> GalleryEntry:
        clip = _load_frame(row)
        vector = retrieval.featurize_clip(
            clip, head, kind, mel_bins=args.mel_bins, n_mfcc=args.n_mfcc
        )
        return GalleryEntry(
            id=row["id"],
            source_id=row["source_id"],
            offset_s=float(row["offset_s"]),
            vector=vector,
        )

    try:
        workers = _max_workers()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                entries = list(pool.map(one, rows))
        else:
            entries = [one(row) for row in rows]
        retrieval.write_features(out_path, entries)
    except Exception:
        out_path.unlink(missing_ok=True)  # never leave a partial feature file
        raise
    print(f"wrote {len(entries)} vectors (d={len(entries[0].vector)}) to {out_path}")
    return 0


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._@-]+", "_", text)


def cmd_query(args: argparse.Namespace) -> int:
    entries = retrieval.read_features(args.features)
    index = retrieval.build_index(entries)

    query_clip = None
    if args.query_id:
        if args.query_id not in index:
            raise AudioMatchError(f"query id {args.query_id!r} not in feature file")
        query_vector = index.vector(args.query_id).astype(np.float64)
        query_source: str | None = index.source_of(args.query_id)
        query_id = args.query_id
    elif args.query_wav:
        head = ProjectionHead.load(args.head) if args.head else None
        clip = audio_io.load_audio(args.query_wav)
        query_clip = audio_io.segment(clip, _FRAME_SECONDS)[0]
        query_vector = retrieval.featurize_clip(
            query_clip, head, FeatureKind(args.kind), mel_bins=args.mel_bins, n_mfcc=args.n_mfcc
        ).astype(np.float64)
        query_source = query_clip.source_id
        query_id = frame_id(query_clip.source_id, query_clip.offset_s)
    else:
        raise AudioMatchError("provide --query-id or --query-wav")

    exclude = query_source if not args.include_same_source else None
    candidates = index.query(query_vector, args.k, exclude_source=exclude, query_id=query_id)

    result = {
        "query_id": query_id,
        "k": args.k,
        "exclude_same_source": not args.include_same_source,
        "results": [
            {
                "rank": c.rank,
                "gallery_id": c.gallery_id,
                "score": c.score,
                "source_id": index.source_of(c.gallery_id),
                "offset_s": index.entry(c.gallery_id).offset_s,
            }
            for c in candidates
        ],
    }
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)

    if args.render_dir:
        _render_candidates(args, query_id, query_clip, candidates)
    return 0


def _render_candidates(args, query_id: str, query_clip, candidates) -> None:
    """Write one blended WAV per candidate, named by rank and score."""
    if not args.manifest:
        raise AudioMatchError("--render-dir requires --manifest to locate frame WAVs")
    paths = {row["id"]: row["path"] for row in _read_manifest(args.manifest)}
    if query_clip is None:
        if query_id not in paths:
            raise AudioMatchError(f"query id {query_id!r} not in manifest")
        query_clip = audio_io.load_audio(paths[query_id])
    render_dir = Path(args.render_dir)
    render_dir.mkdir(parents=True, exist_ok=True)
    config = transition.TransitionConfig(
        phi=args.phi, fixed_s=args.fixed_seconds, l_min=args.l_min, l_max=args.l_max
    )
    strategy = transition.Strategy(args.strategy)

    plans = []
    for c in candidates:
        if c.gallery_id not in paths:
            raise AudioMatchError(f"candidate id {c.gallery_id!r} not in manifest")
        match_clip = audio_io.load_audio(paths[c.gallery_id])
        plan = transition.make_plan(query_clip, match_clip, strategy, config)
        rendered = transition.render(query_clip, match_clip, plan)
        name = f"rank{c.rank:02d}_score{c.score:+.4f}_{_safe_name(c.gallery_id)}.wav"
        audio_io.write_audio(rendered, render_dir / name)
        plans.append({"rank": c.rank, "gallery_id": c.gallery_id, "file": name, **plan.describe()})
    (render_dir / "plans.json").write_text(json.dumps(plans, indent=2) + "\n")
    print(f"rendered {len(plans)} candidates into {render_dir}")


def cmd_render(args: argparse.Namespace) -> int:
    query_clip = audio_io.load_audio(args.query_wav)
    match_clip = audio_io.load_audio(args.match_wav)
    config = transition.TransitionConfig(
        phi=args.phi, fixed_s=args.fixed_seconds, l_min=args.l_min, l_max=args.l_max
    )
    plan = transition.make_plan(
        query_clip,
        match_clip,
        transition.Strategy(args.strategy),
        config,
        query_frame_offset_s=args.query_offset,
        match_frame_offset_s=args.match_offset,
    )
    rendered = transition.render(query_clip, match_clip, plan)
    audio_io.write_audio(rendered, args.out)
    plan_json = json.dumps(plan.describe(), indent=2)
    if args.plan_out:
        Path(args.plan_out).write_text(plan_json + "\n")
    print(plan_json)
    return 0


def _base_feature_values(clip: audio_io.AudioClip, kind: FeatureKind, args) -> np.ndarray:
    if kind is FeatureKind.MEL:
        spec = dsp.mel_spectrogram(clip, args.mel_bins)
    else:
        spec = dsp.mfcc(clip, args.n_mfcc, args.mel_bins)
    return dsp.flatten(spec).values


def cmd_train(args: argparse.Namespace) -> int:
    rows = _read_manifest(args.manifest)
    by_source: dict[str, list[dict]] = {}
    for row in rows:
        by_source.setdefault(row["source_id"], []).append(row)

    kind = FeatureKind(args.kind)
    n = args.frames_per_sequence

    def sequence_features(chunk: list[dict]) -> np.ndarray:
        return np.stack(
            [_base_feature_values(_load_frame(row), kind, args) for row in chunk]
        )

    chunks = []
    for source_id in sorted(by_source):
        frames = sorted(by_source[source_id], key=lambda r: float(r["offset_s"]))
        for start in range(0, len(frames) - n + 1, n):
            chunks.append(frames[start : start + n])
    if not chunks:
        raise AudioMatchError(
            f"manifest holds no run of {n} consecutive frames from one source"
        )

    workers = _max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sequences = list(pool.map(sequence_features, chunks))
    else:
        sequences = [sequence_features(chunk) for chunk in chunks]

    head = ProjectionHead.initialize(sequences[0].shape[1], d=args.dim, seed=args.seed)
    config = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        tau=args.tau,
        seed=args.seed,
    )
    result = train(head, sequences, config)
    result.head.save(args.out)
    if args.history_out:
        Path(args.history_out).write_text(
            "\n".join(json.dumps(row) for row in result.history) + "\n"
        )
    means = result.epoch_means()
    print(
        f"trained on {len(sequences)} sequences of {n} frames: "
        f"epoch1 mean loss {means[0]:.4f} -> epoch{len(means)} mean loss {means[-1]:.4f}; "
        f"checkpoint {args.out}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    entries = retrieval.read_features(args.features)
    index = retrieval.build_index(entries)
    features = {entry.id: np.asarray(entry.vector, dtype=np.float64) for entry in entries}
    labeled = evaluation.LabeledSet.load(args.labels)
    ks = [int(k) for k in args.ks.split(",") if k.strip()]
    report = evaluation.evaluate(index, labeled, features, ks)
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    agg = report.aggregate
    print(json.dumps({"aggregate": agg}, indent=2))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    if args.corpus == "tone-families":
        wavs, labels = synthetic.tone_family_set(
            out_dir, seed=args.seed, n_families=args.families, clip_seconds=args.clip_seconds
        )
        print(f"wrote {len(wavs)} WAVs and {labels}")
    else:
        wavs = synthetic.write_drift_corpus(
            out_dir, n_sequences=args.sequences, n_frames=args.frames, seed=args.seed
        )
        print(f"wrote {len(wavs)} sequence WAVs to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audiomatch",
        description="Find audio match cut candidates and render blended transitions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_feature_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--kind", choices=["mel", "mfcc"], default="mel")
        p.add_argument("--mel-bins", type=int, default=DEFAULT_MEL_BINS)
        p.add_argument("--n-mfcc", type=int, default=DEFAULT_N_MFCC)
        p.add_argument("--head", help="projection head checkpoint")

    def add_transition_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--strategy",
            choices=[s.value for s in transition.Strategy],
            default=transition.Strategy.MAX_SS_ADAPTIVE.value,
        )
        p.add_argument("--fixed-seconds", type=float, default=transition.DEFAULT_FIXED_S)
        p.add_argument("--phi", type=float, default=transition.DEFAULT_PHI)
        p.add_argument("--l-min", type=float, default=transition.DEFAULT_L_MIN)
        p.add_argument("--l-max", type=float, default=transition.DEFAULT_L_MAX)

    p = sub.add_parser("segment", help="split WAVs into 1-second frames plus a manifest")
    p.add_argument("inputs", nargs="+", help="WAV files or directories")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--frame-seconds", type=float, default=1.0)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("featurize", help="turn a frame manifest into a feature file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    add_feature_flags(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("query", help="top-k most similar gallery frames")
    p.add_argument("--features", required=True)
    p.add_argument("--query-id")
    p.add_argument("--query-wav")
    p.add_argument("--k", type=int, default=5)
    p.add_argument(
        "--include-same-source",
        action="store_true",
        help="also rank frames from the query's own source file",
    )
    p.add_argument("--out", help="write ranked JSON here instead of stdout")
    p.add_argument("--manifest", help="frame manifest (needed with --render-dir)")
    p.add_argument("--render-dir", help="render each candidate into this directory")
    add_feature_flags(p)
    add_transition_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("render", help="blend a query and match WAV into one transition")
    p.add_argument("query_wav")
    p.add_argument("match_wav")
    p.add_argument("--out", required=True)
    p.add_argument("--plan-out")
    p.add_argument("--query-offset", type=float, default=0.0,
                   help="start of the 1-second search window in the query WAV")
    p.add_argument("--match-offset", type=float, default=0.0,
                   help="start of the 1-second search window in the match WAV")
    add_transition_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", help="train a projection head on a frame manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history-out", help="JSONL loss history path")
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames-per-sequence", type=int, default=10)
    add_feature_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval metrics over a labeled set")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--ks", default="1,2,5,10")
    p.add_argument("--out", help="write the full report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate the bundled synthetic corpora")
    p.add_argument("corpus", choices=["tone-families", "drift"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--families", type=int, default=8)
    p.add_argument("--clip-seconds", type=float, default=3.0)
    p.add_argument("--sequences", type=int, default=30)
    p.add_argument("--frames", type=int, default=10)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AudioMatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
