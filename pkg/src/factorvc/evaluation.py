"""Objective metrics and embedding inspection.

Spectral distance is mel-cepstral distortion over a DTW alignment; pitch
fidelity is the Pearson correlation of log-F0 over jointly voiced aligned
frames.  Alignment for pitch runs on per-sequence standardized log-F0, so
transposing or linearly rescaling one contour's log values cannot distort
the warp — which is what makes the affine-invariance identity exact.

Timbre vectors are projected to 2-D with a fixed-seed stochastic neighbor
embedding, written as CSV plus a static scatter image.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .features import MelSpectrogram, NormalizedPitchContour, PitchContour

MCD_CONSTANT = 10.0 * math.sqrt(2.0) / math.log(10.0)
CEPSTRAL_ORDER = 13

__all__ = ["MetricReport", "mel_cepstra", "dtw_path", "mcd_dtw",
           "logf0_pcc", "evaluate_pair", "embed_and_plot",
           "speaker_silhouette"]


@dataclass
class MetricReport:
    pair_id: str
    mcd_db: float
    logf0_pcc: float  # NaN marks "undefined" (too few jointly voiced frames)
    aspects: str
    cer: float = None  # reserved for an external recognizer adapter
    wer: float = None

    def __post_init__(self):
        if self.mcd_db < 0:
            raise ValueError("mcd_db must be non-negative")
        if not math.isnan(self.logf0_pcc) and abs(self.logf0_pcc) > 1 + 1e-9:
            raise ValueError("logf0_pcc out of [-1, 1]")


def mel_cepstra(mel, order=CEPSTRAL_ORDER):
    """Cepstra from log-mel frames: orthonormal DCT-II, c0 dropped."""
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    return dct(frames, type=2, norm="ortho", axis=1)[:, 1:order + 1]


def dtw_path(a, b):
    """Monotone alignment path minimizing summed Euclidean local cost.

    Steps (1,1), (1,0), (0,1); ties prefer the diagonal so identical
    sequences align index-to-index.
    """
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    n, m = a.shape[0], b.shape[0]
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    acc = np.full((n, m), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
            if i > 0:
                best = min(best, acc[i - 1, j])
            if j > 0:
                best = min(best, acc[i, j - 1])
            acc[i, j] = cost[i, j] + best
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        candidates = []
        if i > 0 and j > 0:
            candidates.append((acc[i - 1, j - 1], (i - 1, j - 1)))
        if i > 0:
            candidates.append((acc[i - 1, j], (i - 1, j)))
        if j > 0:
            candidates.append((acc[i, j - 1], (i, j - 1)))
        _, (i, j) = min(candidates, key=lambda c: c[0])
        path.append((i, j))
    path.reverse()
    return path


def mcd_dtw(ref, hyp):
    """Mel-cepstral distortion in dB over the DTW-aligned frame pairs."""
    ref = np.asarray(ref, dtype=np.float64)
    hyp = np.asarray(hyp, dtype=np.float64)
    if ref.ndim != 2 or hyp.ndim != 2 or ref.shape[0] < 1 or hyp.shape[0] < 1:
        raise ValueError("cepstra must be non-empty (T, order) matrices")
    if ref.shape[1] != hyp.shape[1] or ref.shape[1] < 2:
        raise ValueError("cepstral order must match and be at least 2")
    path = dtw_path(ref, hyp)
    dists = [float(np.linalg.norm(ref[i] - hyp[j])) for i, j in path]
    return MCD_CONSTANT * float(np.mean(dists))


def _standardize(values):
    std = values.std()
    if std == 0:
        return None
    return (values - values.mean()) / std


def logf0_pcc(src: PitchContour, conv: PitchContour):
    """Pearson correlation of log-F0 over DTW-aligned voiced frames.

    Returns NaN when either contour has fewer than two voiced frames or a
    degenerate (constant) voiced segment.
    """
    s_voiced = np.log(src.f0_hz[src.voiced]) if src.voiced.any() else np.array([])
    c_voiced = np.log(conv.f0_hz[conv.voiced]) if conv.voiced.any() else np.array([])
    if len(s_voiced) < 2 or len(c_voiced) < 2:
        return float("nan")
    s_norm = _standardize(s_voiced)
    c_norm = _standardize(c_voiced)
    if s_norm is None or c_norm is None:
        return float("nan")
    path = dtw_path(s_norm[:, None], c_norm[:, None])
    x = np.array([s_voiced[i] for i, _ in path])
    y = np.array([c_voiced[j] for _, j in path])
    if np.array_equal(x, y):
        return 1.0
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(dx @ dx)) * math.sqrt(float(dy @ dy))
    if denom == 0:
        return float("nan")
    return float(np.clip((dx @ dy) / denom, -1.0, 1.0))


def evaluate_pair(pair_id, source_wave, target_wave, aspects, model,
                  synthesis_iterations=24):
    """Convert source toward target over ``aspects`` and score the result.

    Spectral distance compares the converted mel with the target's; pitch
    correlation compares the source contour against F0 re-extracted from
    the synthesized conversion.
    """
    from .conversion import ConversionRequest, convert, synthesize_audio
    from .corpus import featurize_waveform
    from .features import extract_pitch

    src_mel, src_contour, src_norm = featurize_waveform(source_wave)
    tgt_mel, tgt_contour, tgt_norm = featurize_waveform(target_wave)
    req = ConversionRequest(src_mel, src_norm, tgt_mel, tgt_norm,
                            aspects=frozenset(aspects))
    converted = convert(req, model=model)
    mcd = mcd_dtw(mel_cepstra(tgt_mel), mel_cepstra(converted))
    audio = synthesize_audio(converted, iterations=synthesis_iterations)
    pcc = logf0_pcc(src_contour, extract_pitch(audio)) \
        if len(audio.samples) >= 1024 else float("nan")
    return MetricReport(pair_id=pair_id, mcd_db=mcd, logf0_pcc=pcc,
                        aspects="+".join(sorted(aspects)) if aspects else "none")


# -- embedding inspection -----------------------------------------------------


def _timbre_vector(model, mel_frames, pitch_values):
    from .conversion import _encode_utterance
    mel = MelSpectrogram(np.asarray(mel_frames, dtype=np.float64))
    voiced = np.asarray(pitch_values) != 0
    pitch = NormalizedPitchContour(values=np.asarray(pitch_values, dtype=np.float64),
                                   voiced=voiced)
    codes = _encode_utterance(model, mel, pitch)
    return codes.z_t[0].numpy()


def embed_and_plot(items, model, out_path, seed=0):
    """Project per-utterance timbre vectors to 2-D; write CSV and image.

    ``items``: dicts with keys mel (T,80), pitch (T,), speaker, and
    utterance_id.  Returns (png_path, csv_path, coords, labels).
    """
    labels = [item["speaker"] for item in items]
    counts = {s: labels.count(s) for s in set(labels)}
    if len(counts) < 2 or min(counts.values()) < 2:
        raise ValueError("need at least 2 speakers with 2 utterances each, "
                         f"got {counts}")
    from .conversion import load_converter
    from .model import FactorModel
    if not isinstance(model, FactorModel):
        model = load_converter(model)

    from sklearn.manifold import TSNE
    vectors = np.stack([_timbre_vector(model, it["mel"], it["pitch"])
                        for it in items])
    n = len(items)
    perplexity = max(2, min(30, (n - 1) // 3))
    tsne = TSNE(n_components=2, method="exact", random_state=int(seed),
                perplexity=perplexity, init="pca")
    coords = tsne.fit_transform(vectors.astype(np.float64))

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out_path.with_suffix(".csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["utterance_id", "speaker", "x", "y"])
        for item, (x, y) in zip(items, coords):
            writer.writerow([item["utterance_id"], item["speaker"],
                             f"{x:.6f}", f"{y:.6f}"])

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 5))
    for speaker in sorted(counts):
        mask = np.array([lab == speaker for lab in labels])
        ax.scatter(coords[mask, 0], coords[mask, 1], label=str(speaker), s=28)
    ax.legend(title="speaker", fontsize=8)
    ax.set_xlabel("dim 1")
    ax.set_ylabel("dim 2")
    ax.set_title("timbre embedding (2-D projection)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path, csv_path, coords, labels


def speaker_silhouette(coords, labels):
    from sklearn.metrics import silhouette_score
    return float(silhouette_score(np.asarray(coords), np.asarray(labels)))
