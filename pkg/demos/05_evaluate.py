"""Objective scoring of conversions, plus a look at the timbre space.

Converts every source utterance toward a target speaker, scores each pair
with mel-cepstral distortion (DTW-aligned) and log-F0 correlation, writes
the report CSV, and projects all timbre vectors to 2-D to see whether the
two toy speakers separate.
"""

import csv

import numpy as np

from common import OUTPUT, ensure_checkpoint, ensure_corpus
from factorvc.conversion import load_converter
from factorvc.corpus import read_feature_record
from factorvc.evaluation import embed_and_plot, evaluate_pair, speaker_silhouette
from factorvc.features import load_waveform


def main():
    ckpt = ensure_checkpoint()
    index = ensure_corpus()
    model = load_converter(ckpt)

    speakers = sorted({e.speaker for e in index.entries})
    sources = [e for e in index.entries if e.speaker == speakers[0]][:3]
    target = next(e for e in index.entries if e.speaker == speakers[1])
    print(f"converting 3 utterances of {speakers[0]} toward "
          f"{target.utterance_id} (timbre+pitch)\n")

    reports = []
    for i, entry in enumerate(sources):
        report = evaluate_pair(
            f"pair{i}",
            load_waveform(entry.audio_path),
            load_waveform(target.audio_path),
            {"timbre", "pitch"},
            model,
        )
        reports.append(report)
        print(f"  {report.pair_id}: mcd {report.mcd_db:6.2f} dB   "
              f"logf0_pcc {report.logf0_pcc:+.3f}")

    report_csv = OUTPUT / "report.csv"
    with open(report_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["pair-id", "mcd_db", "logf0_pcc", "aspects"])
        for r in reports:
            writer.writerow([r.pair_id, f"{r.mcd_db:.4f}",
                             f"{r.logf0_pcc:.4f}", r.aspects])
    print(f"\nreport: {report_csv}")

    items = []
    for entry in index.entries:
        rec = read_feature_record(entry.feature_path)
        items.append({"utterance_id": entry.utterance_id,
                      "speaker": entry.speaker,
                      "mel": rec["mel"].astype(np.float64),
                      "pitch": rec["pitch_norm"].astype(np.float64)})
    png, csv_path, coords, labels = embed_and_plot(
        items, model, OUTPUT / "timbre_map.png", seed=4)
    sil = speaker_silhouette(coords, labels)
    print(f"timbre map: {png} (+ {csv_path.name}); "
          f"silhouette by speaker {sil:+.3f} "
          f"({'separated' if sil > 0 else 'mixed'})")


if __name__ == "__main__":
    main()
