"""One-shot conversion: swap any subset of {timbre, pitch, rhythm} from a
single target utterance into the source, then decode a mel spectrogram.

Each utterance is encoded on its own (padded) time base; the rhythm code's
provider dictates the output length and every other time-varying code is
trimmed or zero-padded to it.  Random resampling stays off here so one
request always yields one answer.

Audio output goes through iterative phase reconstruction from the
pseudo-inverted mel filter bank — an audibility fallback, not a vocoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .features import (
    FRAME_LEN,
    HOP,
    LOG_FLOOR_EPS,
    MelSpectrogram,
    NormalizedPitchContour,
    SAMPLE_RATE,
    Waveform,
    mel_filterbank,
)
from .model import FactorModel, LatentCodes, ModelConfig
from .resample import ResampleConfig

ASPECTS = frozenset({"timbre", "pitch", "rhythm"})

__all__ = ["ASPECTS", "ConversionRequest", "convert", "load_converter",
           "synthesize_audio"]


@dataclass
class ConversionRequest:
    source_mel: MelSpectrogram
    source_pitch: NormalizedPitchContour
    target_mel: MelSpectrogram = None
    target_pitch: NormalizedPitchContour = None
    aspects: frozenset = field(default_factory=frozenset)
    checkpoint: object = None  # path, or a loaded FactorModel

    def __post_init__(self):
        self.aspects = frozenset(self.aspects)
        unknown = self.aspects - ASPECTS
        if unknown:
            raise ValueError(f"unknown aspects {sorted(unknown)}; "
                             f"valid: {sorted(ASPECTS)}")
        if len(self.source_pitch.values) != self.source_mel.num_frames:
            raise ValueError("source mel and pitch frame counts differ")
        needs_mel = self.aspects & {"timbre", "rhythm"}
        if needs_mel and self.target_mel is None:
            raise ValueError(f"aspects {sorted(needs_mel)} need target mel features")
        if "pitch" in self.aspects and self.target_pitch is None:
            raise ValueError("aspect 'pitch' needs the target's pitch contour")
        if self.target_mel is not None and self.target_pitch is not None:
            if len(self.target_pitch.values) != self.target_mel.num_frames:
                raise ValueError("target mel and pitch frame counts differ")


def load_converter(ckpt_path) -> FactorModel:
    """Rebuild a frozen model from a training checkpoint."""
    from .training import load_checkpoint
    payload = load_checkpoint(ckpt_path)
    model = FactorModel(ModelConfig(**payload["model_config"]),
                        ResampleConfig(**payload["resample_config"]))
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model


def _pad_to_multiple(arr, block):
    t = arr.shape[0]
    padded = ((t + block - 1) // block) * block
    if padded == t:
        return arr
    pad = np.zeros((padded - t,) + arr.shape[1:], dtype=arr.dtype)
    return np.concatenate([arr, pad], axis=0)


def _encode_utterance(model, mel: MelSpectrogram, pitch: NormalizedPitchContour):
    crop = model.cfg.crop_frames
    mel_in = _pad_to_multiple(mel.frames.astype(np.float32), crop)
    pitch_in = _pad_to_multiple(pitch.values.astype(np.float32), crop)
    with torch.no_grad():
        codes = model.encode(torch.from_numpy(mel_in).unsqueeze(0),
                             torch.from_numpy(pitch_in).unsqueeze(0),
                             rr_seed=None)
    return codes


def _fit_length(z, t_out):
    t = z.shape[1]
    if t >= t_out:
        return z[:, :t_out]
    pad = torch.zeros(z.shape[0], t_out - t, z.shape[2], dtype=z.dtype)
    return torch.cat([z, pad], dim=1)


def convert(req: ConversionRequest, model: FactorModel = None,
            return_details=False):
    """Decode a mel spectrogram with per-aspect code substitution."""
    if model is None:
        if req.checkpoint is None:
            raise ValueError("no model: supply one or set request.checkpoint")
        if isinstance(req.checkpoint, FactorModel):
            model = req.checkpoint
        else:
            model = load_converter(req.checkpoint)

    src = _encode_utterance(model, req.source_mel, req.source_pitch)
    tgt = None
    if req.target_mel is not None:
        tgt_pitch = req.target_pitch
        if tgt_pitch is None:
            # pitch aspect unused; feed a silent stand-in contour
            tgt_pitch = NormalizedPitchContour(
                values=np.zeros(req.target_mel.num_frames),
                voiced=np.zeros(req.target_mel.num_frames, dtype=bool))
        tgt = _encode_utterance(model, req.target_mel, tgt_pitch)

    providers = {
        "rhythm": "target" if "rhythm" in req.aspects else "source",
        "pitch": "target" if "pitch" in req.aspects else "source",
        "content": "source",
        "timbre": "target" if "timbre" in req.aspects else "source",
    }
    rhythm_mel = req.target_mel if providers["rhythm"] == "target" else req.source_mel
    t_out = rhythm_mel.num_frames

    z_r = (tgt if providers["rhythm"] == "target" else src).z_r[:, :t_out]
    z_p = _fit_length((tgt if providers["pitch"] == "target" else src).z_p, t_out)
    z_c = _fit_length(src.z_c, t_out)
    z_t = (tgt if providers["timbre"] == "target" else src).z_t
    codes = LatentCodes(z_r=z_r, z_p=z_p, z_c=z_c, z_t=z_t)
    with torch.no_grad():
        mel_out = model.decode_speech(codes)[0].numpy().astype(np.float64)
    result = MelSpectrogram(frames=mel_out)

    if not return_details:
        return result
    details = {
        "aspects": sorted(req.aspects),
        "providers": providers,
        "frame_count": t_out,
        "source_frames": req.source_mel.num_frames,
        "target_frames": req.target_mel.num_frames if req.target_mel is not None else None,
    }
    return result, details


# -- phase-reconstruction synthesis ------------------------------------------


def _frame_signal(x, frame_len=FRAME_LEN, hop=HOP):
    n_frames = 1 + (len(x) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def _stft(x, window):
    return np.fft.rfft(_frame_signal(x) * window, axis=1)


def _istft(spec, window, frame_len=FRAME_LEN, hop=HOP):
    frames = np.fft.irfft(spec, n=frame_len, axis=1)
    n_frames = frames.shape[0]
    length = (n_frames - 1) * hop + frame_len
    out = np.zeros(length)
    norm = np.zeros(length)
    for f in range(n_frames):
        start = f * hop
        out[start:start + frame_len] += frames[f] * window
        norm[start:start + frame_len] += window ** 2
    # floor the overlap-add weight at half its steady-state value: samples
    # with full window coverage are normalized exactly, partially covered
    # edge samples fade out instead of being divided by a vanishing window
    return out / np.maximum(norm, 0.5 * norm.max())


def synthesize_audio(mel: MelSpectrogram, iterations=32) -> Waveform:
    """Waveform from a mel spectrogram via iterative phase reconstruction.

    Deterministic: phases start from a fixed-seed random draw.  Quality is
    what a filter-bank pseudo-inverse plus Griffin-Lim style iteration
    buys — intelligibility checks, not production audio.
    """
    power_mel = np.maximum(np.exp(mel.frames) - LOG_FLOOR_EPS, 0.0)
    fb = mel_filterbank()
    power_spec = np.maximum(power_mel @ np.linalg.pinv(fb.T), 0.0)
    magnitude = np.sqrt(power_spec)

    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(FRAME_LEN) / FRAME_LEN)
    init_rng = np.random.default_rng(0x6C1)
    spec = magnitude * np.exp(2j * np.pi * init_rng.random(magnitude.shape))
    for _ in range(int(iterations)):
        x = _istft(spec, window)
        reanalysis = _stft(x, window)
        phase = reanalysis / np.maximum(np.abs(reanalysis), 1e-12)
        spec = magnitude * phase
    x = _istft(spec, window)

    peak = np.max(np.abs(x)) if len(x) else 0.0
    if peak > 1.0:
        x = x * (0.95 / peak)
    return Waveform(x, SAMPLE_RATE)
