"""Corpus ingestion: walk a speaker-per-directory tree, extract features
once into a binary cache, and persist a human-readable manifest.

Cache record layout (one file per utterance)::

    b"FVC1" | uint32 LE header length | JSON header | raw arrays

The header carries array shapes, dtype tags, and the extraction parameter
block, so a record is self-describing and stale caches are detectable.
Arrays follow in order: mel (float32, C-order), f0_hz (float32),
voiced (uint8), pitch_norm (float32) — all little-endian.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import (
    AudioFormatError,
    MelSpectrogram,
    NormalizedPitchContour,
    PitchContour,
    SAMPLE_RATE,
    Waveform,
    compute_mel,
    extract_pitch,
    extraction_params,
    load_waveform,
    normalize_pitch,
    save_waveform,
)

MAGIC = b"FVC1"

__all__ = [
    "IndexEntry",
    "CorpusIndex",
    "featurize_waveform",
    "write_feature_record",
    "read_feature_record",
    "ingest_corpus",
    "save_index",
    "load_index",
    "generate_toy_corpus",
]


@dataclass(frozen=True)
class IndexEntry:
    utterance_id: str
    speaker: str
    speaker_id: int
    split: str  # "train" | "val" | "test"
    audio_path: str
    feature_path: str


@dataclass
class CorpusIndex:
    entries: list[IndexEntry]
    num_speakers: int  # number of *training* speakers; their ids are 0..K-1
    seed: int
    split_spec: tuple[int, int, int]

    def for_split(self, split):
        return [e for e in self.entries if e.split == split]

    def speakers(self, split=None):
        names = []
        for e in self.entries:
            if (split is None or e.split == split) and e.speaker not in names:
                names.append(e.speaker)
        return names


def featurize_waveform(wave: Waveform):
    mel = compute_mel(wave)
    contour = extract_pitch(wave)
    norm = normalize_pitch(contour)
    return mel, contour, norm


def write_feature_record(path, mel: MelSpectrogram, contour: PitchContour,
                         norm: NormalizedPitchContour, utterance_id, speaker):
    mel_arr = np.ascontiguousarray(mel.frames, dtype="<f4")
    f0_arr = np.ascontiguousarray(contour.f0_hz, dtype="<f4")
    voiced_arr = np.ascontiguousarray(contour.voiced, dtype=np.uint8)
    norm_arr = np.ascontiguousarray(norm.values, dtype="<f4")
    header = {
        "utterance_id": utterance_id,
        "speaker": speaker,
        "num_frames": int(mel_arr.shape[0]),
        "arrays": {
            "mel": {"shape": list(mel_arr.shape), "dtype": "<f4"},
            "f0_hz": {"shape": list(f0_arr.shape), "dtype": "<f4"},
            "voiced": {"shape": list(voiced_arr.shape), "dtype": "|u1"},
            "pitch_norm": {"shape": list(norm_arr.shape), "dtype": "<f4"},
        },
        "params": extraction_params(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(mel_arr.tobytes())
        f.write(f0_arr.tobytes())
        f.write(voiced_arr.tobytes())
        f.write(norm_arr.tobytes())


def read_feature_record(path):
    """Read a cache record back into a dict of arrays plus its header."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a feature cache record")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        out = {"header": header}
        for name in ("mel", "f0_hz", "voiced", "pitch_norm"):
            meta = header["arrays"][name]
            shape = tuple(meta["shape"])
            dtype = np.dtype(meta["dtype"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(count * dtype.itemsize), dtype=dtype)
            out[name] = data.reshape(shape).copy()
    out["voiced"] = out["voiced"].astype(bool)
    mel_t = out["mel"].shape[0]
    if not (mel_t == len(out["f0_hz"]) == len(out["voiced"]) == len(out["pitch_norm"])):
        raise ValueError(f"{path}: mel/pitch frame counts disagree")
    return out


def _record_is_current(path):
    try:
        rec = read_feature_record(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError):
        return False
    return rec["header"].get("params") == extraction_params()


def _scan_speakers(root):
    root = Path(root)
    if not root.is_dir():
        raise AudioFormatError(f"corpus root {root} is not a directory")
    speakers = {}
    for spk_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        wavs = sorted(spk_dir.glob("*.wav"))
        if not wavs:
            warnings.warn(f"speaker directory {spk_dir} has no .wav files; skipped")
            continue
        speakers[spk_dir.name] = wavs
    return speakers


def ingest_corpus(root, split_spec, seed, cache_dir):
    """Featurize every utterance under ``root`` and build a CorpusIndex.

    ``split_spec`` = (train, val, test) speaker counts; the split is by
    speaker, drawn with a seeded shuffle, so the same seed always yields
    the same partition.  Training speakers get ids 0..K-1 (sorted by
    name), validation and test speakers continue from K.
    """
    split_spec = tuple(int(n) for n in split_spec)
    if len(split_spec) != 3 or any(n < 0 for n in split_spec):
        raise ValueError(f"split_spec must be three non-negative counts, got {split_spec}")
    speakers = _scan_speakers(root)
    names = sorted(speakers)
    total = sum(split_spec)
    if total > len(names):
        raise ValueError(
            f"split {split_spec} needs {total} speakers but corpus has {len(names)}")
    if total < len(names):
        warnings.warn(f"{len(names) - total} speakers unused by split {split_spec}")

    order = list(np.random.default_rng(seed).permutation(len(names)))
    picked = [names[i] for i in order[:total]]
    n_train, n_val, _ = split_spec
    groups = {
        "train": sorted(picked[:n_train]),
        "val": sorted(picked[n_train:n_train + n_val]),
        "test": sorted(picked[n_train + n_val:]),
    }

    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    next_id = 0
    for split in ("train", "val", "test"):
        for spk in groups[split]:
            for wav_path in speakers[spk]:
                utt_id = f"{spk}/{wav_path.stem}"
                feat_path = cache_dir / spk / f"{wav_path.stem}.fvc"
                if not _record_is_current(feat_path):
                    try:
                        wave = load_waveform(wav_path)
                        mel, contour, norm = featurize_waveform(wave)
                    except Exception as exc:
                        raise AudioFormatError(
                            f"failed to extract features from {wav_path}: {exc}") from exc
                    write_feature_record(feat_path, mel, contour, norm, utt_id, spk)
                entries.append(IndexEntry(
                    utterance_id=utt_id,
                    speaker=spk,
                    speaker_id=next_id,
                    split=split,
                    audio_path=str(wav_path),
                    feature_path=str(feat_path),
                ))
            next_id += 1

    index = CorpusIndex(entries=entries, num_speakers=len(groups["train"]),
                        seed=int(seed), split_spec=split_spec)
    save_index(index, cache_dir / "manifest.json")
    return index


def save_index(index: CorpusIndex, path):
    doc = {
        "num_speakers": index.num_speakers,
        "seed": index.seed,
        "split_spec": list(index.split_spec),
        "entries": [vars(e) for e in index.entries],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_index(path):
    doc = json.loads(Path(path).read_text())
    entries = [IndexEntry(**e) for e in doc["entries"]]
    return CorpusIndex(entries=entries, num_speakers=int(doc["num_speakers"]),
                       seed=int(doc["seed"]), split_spec=tuple(doc["split_spec"]))


# ---------------------------------------------------------------------------
# Synthetic pseudo-speakers for corpus-free tests and demos.
#
# A pseudo-speaker is a triple (base F0, harmonic rolloff, mean syllable
# rate).  The rolloff — a crude stand-in for vocal-tract timbre — is the
# only cue that separates speakers reliably: base F0 register is erased by
# per-utterance pitch normalization downstream, and the syllable rate is
# jittered per utterance so heavily that speaker ranges overlap.


def _speaker_params(i, num_speakers, rng):
    spread = i / max(1, num_speakers - 1) if num_speakers > 1 else 0.5
    rolloff = 0.25 + 1.6 * spread + rng.uniform(-0.04, 0.04)
    base_f0 = 120.0 + ((i * 53) % 140) + rng.uniform(-5, 5)
    syllable_rate = 3.0 + rng.uniform(-0.3, 0.3)
    return {"rolloff": rolloff, "base_f0": base_f0, "syllable_rate": syllable_rate}


def _synth_utterance(params, rng, seconds):
    n = int(seconds * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE

    # per-utterance pitch movement: slow random walk (semitones) + vibrato
    knots = rng.normal(0.0, 1.5, 6).cumsum()
    walk = np.interp(t, np.linspace(0, seconds, 6), knots)
    vibrato = 0.3 * np.sin(2 * np.pi * 5.5 * t + rng.uniform(0, 2 * np.pi))
    f0 = params["base_f0"] * 2.0 ** ((walk + vibrato) / 12.0)
    f0 = np.clip(f0, 70.0, 450.0)
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE

    max_harm = int(min(12, 7000.0 // float(f0.max())))
    wave = np.zeros(n)
    for k in range(1, max_harm + 1):
        amp = np.exp(-params["rolloff"] * (k - 1))
        wave += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    # syllable-like amplitude envelope with a couple of hard gaps; the rate
    # jitter is deliberately larger than the speaker-to-speaker spread
    rate = params["syllable_rate"] + rng.uniform(-1.4, 1.4)
    env = 0.15 + 0.85 * np.abs(np.sin(np.pi * rate * t + rng.uniform(0, np.pi)))
    for _ in range(rng.integers(1, 3)):
        gap_start = rng.uniform(0.15, seconds - 0.3)
        gap_len = rng.uniform(0.08, 0.2)
        env[(t >= gap_start) & (t < gap_start + gap_len)] = 0.0
    wave *= env
    peak = np.max(np.abs(wave))
    if peak > 0:
        wave *= 0.7 / peak
    return Waveform(wave, SAMPLE_RATE)


def generate_toy_corpus(root, num_speakers=4, utterances_per_speaker=10,
                        seed=0, seconds_range=(1.6, 2.4)):
    """Write a synthetic speaker-per-directory corpus of harmonic tones."""
    root = Path(root)
    master = np.random.SeedSequence([int(seed), 0x70F5])
    spk_seeds = master.spawn(num_speakers)
    for i in range(num_speakers):
        spk_rng = np.random.default_rng(spk_seeds[i])
        params = _speaker_params(i, num_speakers, spk_rng)
        spk_dir = root / f"spk{i:03d}"
        spk_dir.mkdir(parents=True, exist_ok=True)
        for j in range(utterances_per_speaker):
            seconds = float(spk_rng.uniform(*seconds_range))
            wave = _synth_utterance(params, spk_rng, seconds)
            save_waveform(spk_dir / f"utt{j:03d}.wav", wave)
    return root
