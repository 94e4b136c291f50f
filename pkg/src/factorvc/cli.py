"""Command-line front door: extract features, train, convert, evaluate."""

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np


def _split_counts(text):
    parts = tuple(int(x) for x in text.split(","))
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"--split wants train,val,test counts, got {text!r}")
    return parts


def _cmd_features_extract(args):
    from .corpus import ingest_corpus
    index = ingest_corpus(args.root, args.split, args.seed, args.out)
    by_split = {}
    for entry in index.entries:
        by_split[entry.split] = by_split.get(entry.split, 0) + 1
    summary = ", ".join(f"{k}={v}" for k, v in sorted(by_split.items()))
    print(f"cached {len(index.entries)} utterances ({summary}); "
          f"{index.num_speakers} training speakers -> {Path(args.out) / 'manifest.json'}")
    return 0


def _cmd_train(args):
    from .corpus import load_index
    from .training import read_config_file, train
    index = load_index(Path(args.cache) / "manifest.json")
    train_cfg, model_cfg, resample_cfg = read_config_file(
        args.config, num_speakers=index.num_speakers)
    final = train(train_cfg, model_cfg, index, args.out,
                  resample_cfg=resample_cfg, resume_from=args.resume)
    print(f"final checkpoint: {final}")
    return 0


def _aspect_set(text):
    return frozenset(part for part in text.split(",") if part)


def _cmd_convert(args):
    from .conversion import (ConversionRequest, convert, load_converter,
                             synthesize_audio)
    from .corpus import featurize_waveform, write_feature_record
    from .features import (NormalizedPitchContour, PitchContour,
                           load_waveform, save_waveform)

    aspects = _aspect_set(args.aspects)
    model = load_converter(args.ckpt)
    src_mel, _, src_norm = featurize_waveform(load_waveform(args.source))
    tgt_mel = tgt_norm = None
    if args.target is not None:
        tgt_mel, _, tgt_norm = featurize_waveform(load_waveform(args.target))
    req = ConversionRequest(src_mel, src_norm, tgt_mel, tgt_norm,
                            aspects=aspects)
    mel = convert(req, model=model)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".wav":
        save_waveform(out, synthesize_audio(mel, iterations=args.iterations))
    else:
        # converted spectrograms carry no pitch track; store an unvoiced one
        t = mel.num_frames
        silent = PitchContour(np.zeros(t), np.zeros(t, dtype=bool))
        norm = NormalizedPitchContour(np.zeros(t), np.zeros(t, dtype=bool))
        tag = "+".join(sorted(aspects)) if aspects else "none"
        write_feature_record(out, mel, silent, norm,
                             f"{Path(args.source).stem}~{tag}", "converted")
    print(f"wrote {out} ({mel.num_frames} frames, aspects: "
          f"{','.join(sorted(aspects)) or 'none'})")
    return 0


def _pair_aspects(raw):
    if raw is None:
        return frozenset()
    if isinstance(raw, str):
        return _aspect_set(raw)
    return frozenset(raw)


def _cmd_evaluate(args):
    from .conversion import load_converter
    from .evaluation import evaluate_pair
    from .features import load_waveform

    pairs = json.loads(Path(args.pairs).read_text())
    if not isinstance(pairs, list) or not pairs:
        raise SystemExit(f"{args.pairs}: expected a non-empty JSON list of pairs")
    model = load_converter(args.ckpt)

    reports = []
    for pair in pairs:
        report = evaluate_pair(
            pair["id"],
            load_waveform(pair["source"]),
            load_waveform(pair["target"]),
            _pair_aspects(pair.get("aspects")),
            model,
        )
        reports.append(report)
        pcc = "nan" if math.isnan(report.logf0_pcc) else f"{report.logf0_pcc:.4f}"
        print(f"{report.pair_id}: mcd_db={report.mcd_db:.4f} logf0_pcc={pcc} "
              f"aspects={report.aspects}")

    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["pair-id", "mcd_db", "logf0_pcc", "aspects"])
        for r in reports:
            pcc = "nan" if math.isnan(r.logf0_pcc) else f"{r.logf0_pcc:.6f}"
            writer.writerow([r.pair_id, f"{r.mcd_db:.6f}", pcc, r.aspects])
    print(f"report: {report_path} ({len(reports)} pairs)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="factorvc",
        description="one-shot voice conversion via factored speech codes")
    sub = parser.add_subparsers(dest="command", required=True)

    features = sub.add_parser("features", help="feature cache management")
    feat_sub = features.add_subparsers(dest="features_command", required=True)
    extract = feat_sub.add_parser(
        "extract", help="featurize a speaker-per-directory wav corpus")
    extract.add_argument("--root", required=True, help="corpus root directory")
    extract.add_argument("--out", required=True, help="feature cache directory")
    extract.add_argument("--seed", type=int, default=0,
                         help="seed for the speaker split shuffle")
    extract.add_argument("--split", type=_split_counts, required=True,
                         metavar="TRAIN,VAL,TEST",
                         help="speaker counts per split, e.g. 100,3,6")
    extract.set_defaults(func=_cmd_features_extract)

    train = sub.add_parser("train", help="run the training loop")
    train.add_argument("--config", required=True, help="flat key/value config file")
    train.add_argument("--cache", required=True,
                       help="feature cache directory (holds manifest.json)")
    train.add_argument("--out", required=True, help="run directory for checkpoints/logs")
    train.add_argument("--resume", default=None, help="checkpoint to resume from")
    train.set_defaults(func=_cmd_train)

    convert = sub.add_parser("convert", help="convert one utterance toward a target")
    convert.add_argument("--ckpt", required=True, help="training checkpoint")
    convert.add_argument("--source", required=True, help="source wav")
    convert.add_argument("--target", default=None,
                         help="target wav (optional when no aspects are selected)")
    convert.add_argument("--aspects", default="",
                         help="comma list from {timbre,pitch,rhythm}; empty = reconstruct")
    convert.add_argument("--out", required=True,
                         help=".wav for audio, anything else for a feature record")
    convert.add_argument("--iterations", type=int, default=32,
                         help="phase-reconstruction iterations for wav output")
    convert.set_defaults(func=_cmd_convert)

    evaluate = sub.add_parser("evaluate", help="score conversion pairs")
    evaluate.add_argument("--pairs", required=True,
                          help='JSON list: [{"id", "source", "target", "aspects"}]')
    evaluate.add_argument("--ckpt", required=True, help="training checkpoint")
    evaluate.add_argument("--report", required=True, help="output CSV path")
    evaluate.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
