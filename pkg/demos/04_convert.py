"""One-shot conversion: swap timbre, pitch, rhythm — or any combination.

Takes one utterance from each toy speaker, converts the source toward the
target aspect by aspect, and writes the synthesized audio for each choice.
The frame-count rule is visible in the output: selecting rhythm makes the
output as long as the target; otherwise it stays as long as the source.
"""

import numpy as np

from common import OUTPUT, ensure_checkpoint, ensure_corpus
from factorvc.conversion import (ConversionRequest, convert, load_converter,
                                 synthesize_audio)
from factorvc.corpus import read_feature_record
from factorvc.features import MelSpectrogram, NormalizedPitchContour, save_waveform


def features_of(entry):
    rec = read_feature_record(entry.feature_path)
    mel = MelSpectrogram(rec["mel"].astype(np.float64))
    pitch = NormalizedPitchContour(rec["pitch_norm"].astype(np.float64),
                                   rec["voiced"])
    return mel, pitch


def main():
    ckpt = ensure_checkpoint()
    index = ensure_corpus()
    model = load_converter(ckpt)

    by_speaker = {}
    for entry in index.entries:
        by_speaker.setdefault(entry.speaker, entry)
    (src_name, src_entry), (tgt_name, tgt_entry) = sorted(by_speaker.items())[:2]
    src_mel, src_pitch = features_of(src_entry)
    tgt_mel, tgt_pitch = features_of(tgt_entry)
    print(f"source: {src_entry.utterance_id} ({src_mel.num_frames} frames)")
    print(f"target: {tgt_entry.utterance_id} ({tgt_mel.num_frames} frames)\n")

    out_dir = OUTPUT / "conversions"
    out_dir.mkdir(parents=True, exist_ok=True)
    for aspects in (frozenset(), {"timbre"}, {"pitch"}, {"rhythm"},
                    {"timbre", "pitch", "rhythm"}):
        req = ConversionRequest(src_mel, src_pitch, tgt_mel, tgt_pitch,
                                aspects=aspects)
        mel = convert(req, model=model)
        tag = "+".join(sorted(aspects)) if aspects else "reconstruction"
        wav = out_dir / f"{tag}.wav"
        save_waveform(wav, synthesize_audio(mel, iterations=24))
        print(f"  {tag:<28} {mel.num_frames:4d} frames -> {wav.name}")
    print(f"\naudio in {out_dir}")
    print("(phase comes from an iterative reconstruction; expect utility-"
          "grade fidelity, enough to hear pitch and pacing)")


if __name__ == "__main__":
    main()
