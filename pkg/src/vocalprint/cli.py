"""Command-line entry point: ``vocalprint <subcommand> ...``.

Exit codes: 0 success, 1 operational failure, 2 usage error.

``--config`` takes a text file of ``key = value`` lines (``#`` starts a
comment). Keys are the field names of TrainConfig (training), the pipeline
settings ``tau``, ``n_windows``, ``window_s`` and ``average``, and the
SynthCorpusSpec fields (``synth``). Command-line flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, VocalprintError

log = logging.getLogger("vocalprint")


def read_config(path) -> dict[str, str]:
    values = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def _coerce(cls, values: dict, **overrides):
    """Build dataclass ``cls`` from string values, keeping only known fields."""
    kwargs = {}
    for f in fields(cls):
        if f.name not in values:
            continue
        raw, default = values[f.name], f.default
        try:
            if isinstance(default, bool):
                kwargs[f.name] = str(raw).lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(default, float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        except ValueError as exc:
            raise ConfigError(f"config key {f.name}: {exc}") from exc
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)


def _windows(config: dict) -> tuple[int, float]:
    """(n_windows, window_s) from the config file, defaulting to 5 x 10 s."""
    return int(config.get("n_windows", 5)), float(config.get("window_s", 10.0))


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- subcommands


def cmd_synth(args, config):
    from .synth import SynthCorpusSpec, generate_synth_corpus

    spec = _coerce(SynthCorpusSpec, config, seed=args.seed, n_singers=args.singers,
                   tracks_per_singer=args.tracks, duration_s=args.duration)
    manifest = generate_synth_corpus(spec, args.out)
    print(f"wrote {len(manifest)} tracks for {spec.n_singers} singers to {args.out}")
    return 0


def cmd_features(args, config):
    from .audio import MelConfig, ensure_rate, load_wav, log_mel

    spec = log_mel(ensure_rate(load_wav(args.audio)), mel_cfg=MelConfig(cmvn=args.cmvn))
    np.save(args.out, spec.frames)
    print(f"{args.audio}: {spec.frames.shape[0]} frames x {spec.frames.shape[1]} mel bands -> {args.out}")
    return 0


def cmd_vad(args, config):
    from .audio import ensure_rate, load_wav, write_wav
    from .vad import VadConfig, detect_activity, export_mask, trim_nonvocal

    cfg = _coerce(VadConfig, config)
    clip = ensure_rate(load_wav(args.audio))
    mask = detect_activity(clip, cfg)
    print(f"{args.audio}: {100 * mask.active_fraction:.1f}% of frames active")
    if args.out:
        export_mask(mask, args.out)
    if args.trim:
        result = trim_nonvocal(clip, mask, cfg.crossfade_ms)
        write_wav(args.trim, result.clip)
        print(f"trimmed {100 * result.removed_fraction:.1f}% of samples -> {args.trim}")
    return 0


def _train(kind, args, config):
    from .manifest import Manifest
    from .models.augment import AugmentAssets
    from .models.training import TrainConfig, train
    from .nn.archive import write_atomic

    cfg = _coerce(TrainConfig, {k: v for k, v in config.items() if k != "weight_decay"},
                  seed=args.seed, threads=args.threads, max_epochs=args.epochs)
    if "weight_decay" in config:
        cfg = TrainConfig(**{**cfg.__dict__, "weight_decay": float(config["weight_decay"])})
    manifest = Manifest.read(args.manifest)
    background = args.background or manifest.root / "background"
    assets = AugmentAssets.from_dir(background) if Path(background).is_dir() else None
    result = train(kind, manifest, cfg, assets=assets)
    write_atomic(args.out, result.archive)
    log_path = args.log or f"{args.out}.log"
    Path(log_path).write_text(result.log_text)
    print(f"{kind}: best epoch {result.best_epoch}, validation {result.best_metric:.4f}, "
          f"fingerprint {result.fingerprint:08x} -> {args.out} (log {log_path})")
    return 0


def cmd_enroll(args, config):
    from .audio import AudioClip, load_wav
    from .identity import ProfileDB, enroll
    from .manifest import Manifest
    from .models.architectures import load_embedder

    embedder = load_embedder(args.embedder)
    db = ProfileDB.load(args.db) if Path(args.db).exists() else ProfileDB(embedder.fingerprint, embedder.dim)
    groups: dict[str, list] = {}
    if args.manifest:
        manifest = Manifest.read(args.manifest)
        for row in manifest.select(split=args.split, authenticity="authentic"):
            groups.setdefault(row.singer_id, []).append((row.track_id, manifest.resolve(row)))
    if args.singer:
        if not args.audio:
            raise ConfigError("--singer needs at least one audio file")
        groups.setdefault(args.singer, []).extend((str(p), p) for p in args.audio)
    if not groups:
        raise ConfigError("nothing to enroll: give --manifest or --singer with audio files")
    for sid in sorted(groups):
        clips = []
        for track_id, path in groups[sid]:
            clip = load_wav(path)
            clips.append(AudioClip(clip.samples, clip.sample_rate_hz, track_id))
        profile = enroll(sid, clips, embedder, db, *_windows(config))
        print(f"enrolled {sid} from {profile.count} track(s)")
    db.save(args.db)
    return 0


def cmd_identify(args, config):
    from .audio import load_wav
    from .identity import ProfileDB, identify
    from .models.architectures import load_embedder

    embedder = load_embedder(args.embedder)
    db = ProfileDB.load(args.db)
    results = {}
    for path in args.audio:
        ranking = identify(load_wav(path), embedder, db, *_windows(config))
        results[str(path)] = [{"singer_id": s, "distance": d} for s, d in ranking]
        best, dist = ranking[0]
        print(f"{path}: {best} (cosine distance {dist:.4f})")
        for sid, d in ranking[1 : args.top]:
            print(f"    {sid}  {d:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_detect(args, config):
    from .models.architectures import load_discriminator
    from .pipeline import PipelineConfig, TwoStagePipeline

    cfg = _coerce(PipelineConfig, config, tau=args.tau, threads=args.threads)
    pipe = TwoStagePipeline(load_discriminator(args.discriminator), None, None, cfg)
    verdicts = pipe.run([(str(p), p) for p in args.audio])
    for v in verdicts:
        if v.error:
            print(f"{v.track_id}: error {v.error}")
        else:
            print(f"{v.track_id}: {v.stage1_label} (P(deepfake) = {v.stage1_score:.4f}, tau = {cfg.tau})")
    if args.out:
        from .pipeline import write_verdicts

        write_verdicts(verdicts, args.out)
    return 1 if all(v.error for v in verdicts) else 0


def cmd_pipeline(args, config):
    from .eval import identification_trials, write_trials
    from .manifest import Manifest
    from .pipeline import PipelineConfig, run_pipeline

    cfg = _coerce(PipelineConfig, config, discriminator_path=args.discriminator, embedder_path=args.embedder,
                  db_path=args.db, tau=args.tau, output_path=args.out, threads=args.threads)
    manifest = Manifest.read(args.manifest)
    verdicts = run_pipeline(manifest, cfg, split=args.split)
    flagged = sum(v.stage1_label == "deepfake" for v in verdicts)
    failed = sum(bool(v.error) for v in verdicts)
    print(f"{len(verdicts)} tracks: {flagged} flagged as deepfake, {len(verdicts) - flagged - failed} identified, "
          f"{failed} failed (tau = {cfg.tau}) -> {args.out}")
    if args.trials_out:
        from .identity import ProfileDB

        ok = [v for v in verdicts if not v.error]
        write_trials(identification_trials(ok, ProfileDB.load(args.db), manifest.by_track()), args.trials_out)
    if verdicts and failed == len(verdicts):
        print("every track failed", file=sys.stderr)
        return 1
    return 0


def cmd_evaluate(args, config):
    from .eval import evaluate_trials, format_report, read_trials, write_summary

    summary = evaluate_trials(read_trials(args.trials))
    g = summary["global"]
    if g["computable"]:
        print(f"{g['n_trials']} trials ({g['n_target']} target): EER {100 * g['eer']:.2f}%  AUC {g['auc']:.4f}")
    else:
        print(f"{g['n_trials']} trials: metrics not computable ({g['note']})")
    report = format_report(summary["per_algorithm"])
    print(report, end="")
    if args.report:
        Path(args.report).write_text(report)
    if args.summary:
        write_summary(summary, args.summary)
    return 0


# -- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vocalprint", description="Two-stage singing-voice deepfake screening "
                                     "and singer identification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    parser.add_argument("--config", type=Path, help="key = value settings file")
    parser.add_argument("--threads", type=int, default=None, help="worker threads for data loading / tracks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate the synthetic singer corpus")
    p.add_argument("out", type=Path)
    p.add_argument("--singers", type=int)
    p.add_argument("--tracks", type=int, help="authentic tracks per singer")
    p.add_argument("--duration", type=float, help="seconds per track")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="dump the log-mel spectrogram of a WAV file as .npy")
    p.add_argument("audio", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True)
    p.add_argument("--cmvn", action="store_true", help="per-utterance mean/variance normalization")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("vad", help="energy voice-activity detection")
    p.add_argument("audio", type=Path)
    p.add_argument("-o", "--out", type=Path, help="write the segment table here")
    p.add_argument("--trim", type=Path, help="write the audio with non-vocal spans removed")
    p.set_defaults(func=cmd_vad)

    for name, kind in (("train-d", "D"), ("train-s", "S")):
        p = sub.add_parser(name, help=f"train the {'discriminator' if kind == 'D' else 'singer embedder'}")
        p.add_argument("manifest", type=Path)
        p.add_argument("-o", "--out", type=Path, required=True, help="weight archive to write")
        p.add_argument("--log", type=Path, help="training log (default: <out>.log)")
        p.add_argument("--epochs", type=int, help="maximum epochs")
        p.add_argument("--background", type=Path, help="directory of background stems for augmentation")
        p.set_defaults(func=lambda a, c, kind=kind: _train(kind, a, c))

    p = sub.add_parser("enroll", help="add or replace singer profiles")
    p.add_argument("--embedder", type=Path, required=True)
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--manifest", type=Path, help="enroll every singer's authentic tracks from a split")
    p.add_argument("--split", default="train")
    p.add_argument("--singer", help="singer id for the audio files given")
    p.add_argument("audio", type=Path, nargs="*")
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("identify", help="rank enrolled singers for each audio file")
    p.add_argument("--embedder", type=Path, required=True)
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--top", type=int, default=3)
    p.add_argument("-o", "--out", type=Path, help="JSON rankings")
    p.add_argument("audio", type=Path, nargs="+")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("detect", help="stage 1 only: P(deepfake) per file")
    p.add_argument("--discriminator", type=Path, required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("-o", "--out", type=Path, help="JSON-lines verdicts")
    p.add_argument("audio", type=Path, nargs="+")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("pipeline", help="run both stages over a manifest split")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--discriminator", type=Path, required=True)
    p.add_argument("--embedder", type=Path, required=True)
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--split", default="test")
    p.add_argument("-o", "--out", type=Path, required=True, help="JSON-lines verdicts")
    p.add_argument("--trials-out", type=Path, help="write identification trials for stage-2 tracks")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("evaluate", help="EER / AUC / per-algorithm report from a trials file")
    p.add_argument("trials", type=Path)
    p.add_argument("--report", type=Path, help="per-algorithm table (TSV)")
    p.add_argument("--summary", type=Path, help="all metrics as JSON")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = read_config(args.config) if args.config else {}
        if args.seed is None:
            args.seed = int(config.get("seed", 0))
        if args.threads is None:
            args.threads = int(config.get("threads", 1))
        return args.func(args, config)
    except (VocalprintError, OSError, ValueError) as exc:
        print(f"vocalprint {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
