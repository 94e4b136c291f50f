"""Acoustic front-end: waveform loading, log-mel spectrograms, pitch contours.

The front-end is fixed to 16 kHz audio analyzed with 1024-sample Hann
windows hopped by 256 samples (no frame centering, so frame t covers
samples [t*hop, t*hop + frame_len)).  Mel filters span 90 Hz to 7.6 kHz
over 80 bands.  Pitch is tracked by normalized autocorrelation over a
50-600 Hz search range and z-normalized per utterance over voiced frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000
FRAME_LEN = 1024
HOP = 256
N_MELS = 80
MEL_FMIN = 90.0
MEL_FMAX = 7600.0
LOG_FLOOR_EPS = 1e-10
F0_MIN = 50.0
F0_MAX = 600.0
VOICING_THRESHOLD = 0.3
ZNORM_EPS = 1e-8


class AudioFormatError(ValueError):
    """Input audio violates the front-end contract (rate, length, layout)."""


@dataclass
class Waveform:
    """Mono audio samples in [-1, 1] at a known sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioFormatError(f"expected mono 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise AudioFormatError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioFormatError("waveform contains non-finite samples")
        peak = float(np.max(np.abs(self.samples))) if self.samples.size else 0.0
        if peak > 1.0 + 1e-6:
            raise AudioFormatError(f"samples exceed [-1, 1] (peak {peak:.4g})")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    """T x 80 matrix of log-compressed mel-band powers."""

    frames: np.ndarray
    frame_hop: int = HOP
    frame_len: int = FRAME_LEN

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS:
            raise ValueError(f"mel frames must be T x {N_MELS}, got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("mel spectrogram must contain at least one frame")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("mel spectrogram contains non-finite entries")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class PitchContour:
    """Per-frame F0 in Hz (0 on unvoiced frames) with a voicing mask."""

    f0_hz: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0_hz.shape != self.voiced.shape or self.f0_hz.ndim != 1:
            raise ValueError("f0_hz and voiced must be 1-D arrays of equal length")
        if np.any((self.f0_hz > 0) != self.voiced):
            raise ValueError("f0_hz must be positive exactly on voiced frames")

    def __len__(self) -> int:
        return len(self.f0_hz)


@dataclass
class NormalizedPitchContour:
    """Per-utterance z-normalized pitch values; unvoiced entries are 0."""

    values: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.values.shape != self.voiced.shape or self.values.ndim != 1:
            raise ValueError("values and voiced must be 1-D arrays of equal length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("normalized pitch contains non-finite entries")

    def __len__(self) -> int:
        return len(self.values)


def load_waveform(path) -> Waveform:
    """Read a mono PCM wav file into a float Waveform."""
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise AudioFormatError(f"cannot read audio file {path}: {exc}") from exc
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: only mono audio is supported (shape {data.shape})")
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample dtype {data.dtype}")
    return Waveform(samples=np.clip(samples, -1.0, 1.0), sample_rate=int(rate))


def save_waveform(path, wave: Waveform) -> None:
    """Write a Waveform as 16-bit PCM."""
    pcm = np.clip(np.round(wave.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, wave.sample_rate, pcm)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = FRAME_LEN,
                   sample_rate: int = SAMPLE_RATE,
                   fmin: float = MEL_FMIN, fmax: float = MEL_FMAX) -> np.ndarray:
    """Triangular mel filters as an (n_mels, n_fft//2 + 1) matrix.

    Band edges are spaced uniformly on the mel scale between fmin and fmax;
    filter i rises from edge i to its center at edge i+1 and falls to edge
    i+2, with unit peak height.
    """
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins_hz = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    fb = np.zeros((n_mels, len(bins_hz)))
    for i in range(n_mels):
        lo, center, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bins_hz - lo) / (center - lo)
        falling = (hi - bins_hz) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def num_frames(num_samples: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    """Frame count for uncentered framing: 1 + floor((len - frame_len) / hop)."""
    if num_samples < frame_len:
        raise AudioFormatError(
            f"input of {num_samples} samples is shorter than one {frame_len}-sample window")
    return 1 + (num_samples - frame_len) // hop


def _check_input(wave: Waveform) -> None:
    if wave.sample_rate != SAMPLE_RATE:
        raise AudioFormatError(
            f"expected {SAMPLE_RATE} Hz input, got {wave.sample_rate} Hz (no silent resampling)")
    num_frames(len(wave.samples))


def _frame(samples: np.ndarray, frame_len: int = FRAME_LEN, hop: int = HOP) -> np.ndarray:
    t = num_frames(len(samples), frame_len, hop)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(t)[:, None]
    return samples[idx]


_HANN = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(FRAME_LEN) / FRAME_LEN)
_MEL_FB = mel_filterbank()


def compute_mel(wave: Waveform) -> MelSpectrogram:
    """Log mel spectrogram of a 16 kHz waveform.

    Pipeline: uncentered 1024-sample Hann-windowed frames hopped by 256,
    magnitude-squared rfft, projection through the 80-band 90 Hz - 7.6 kHz
    filter bank, then natural log with a 1e-10 floor.
    """
    _check_input(wave)
    frames = _frame(wave.samples) * _HANN
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    mel_power = power @ _MEL_FB.T
    return MelSpectrogram(frames=np.log(mel_power + LOG_FLOOR_EPS))


def extraction_params() -> dict:
    """Front-end parameter block stored with every cached feature record."""
    return {
        "sample_rate": SAMPLE_RATE,
        "frame_len": FRAME_LEN,
        "hop": HOP,
        "n_mels": N_MELS,
        "mel_fmin": MEL_FMIN,
        "mel_fmax": MEL_FMAX,
        "log_floor_eps": LOG_FLOOR_EPS,
        "f0_min": F0_MIN,
        "f0_max": F0_MAX,
        "voicing_threshold": VOICING_THRESHOLD,
    }


def _normalized_autocorr(frames: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation r[t, lag] in [-1, 1] for every frame.

    r[lag] = sum_n x[n] x[n+lag] / sqrt(sum_{n<N-lag} x[n]^2 * sum_{n>=lag} x[n]^2),
    i.e. the cosine similarity between the frame and its lagged copy.
    """
    n = frames.shape[1]
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    raw = np.fft.irfft(spec.real ** 2 + spec.imag ** 2, n=nfft, axis=1)[:, :n]
    sq = frames ** 2
    csum = np.cumsum(sq, axis=1)
    total = csum[:, -1][:, None]
    lags = np.arange(n)
    # head energy: samples that stay in-frame when shifted right by lag
    e_head = csum[:, n - 1 - lags]
    # tail energy: samples from lag onward
    e_tail = total - np.concatenate([np.zeros((len(frames), 1)), csum[:, :-1]], axis=1)
    denom = np.sqrt(e_head * e_tail)
    return np.where(denom > 0, raw / np.maximum(denom, 1e-30), 0.0)


def extract_pitch(wave: Waveform) -> PitchContour:
    """Autocorrelation pitch track aligned to the mel frames (same hop).

    A frame is voiced when its best in-range autocorrelation peak exceeds
    the 0.3 voicing threshold; among near-best peaks (>= 90% of the best)
    the shortest lag wins, which suppresses octave-down errors on strongly
    harmonic input.  Peak lags are refined by parabolic interpolation.
    """
    _check_input(wave)
    frames = _frame(wave.samples)
    frames = frames - frames.mean(axis=1, keepdims=True)
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    corr = _normalized_autocorr(frames)

    lag_min = int(SAMPLE_RATE // F0_MAX)          # 26 samples @ 600 Hz
    lag_max = int(math.ceil(SAMPLE_RATE / F0_MIN))  # 320 samples @ 50 Hz
    t = len(frames)
    f0 = np.zeros(t)
    voiced = np.zeros(t, dtype=bool)
    for i in range(t):
        if rms[i] < 1e-6:
            continue
        window = corr[i, lag_min:lag_max + 1]
        interior = window[1:-1]
        is_peak = (interior > window[:-2]) & (interior >= window[2:])
        peak_idx = np.nonzero(is_peak)[0] + 1
        if len(peak_idx) == 0:
            continue
        best = float(window[peak_idx].max())
        if best <= VOICING_THRESHOLD:
            continue
        lag = lag_min + int(peak_idx[window[peak_idx] >= 0.9 * best][0])
        # parabolic refinement around the integer-lag peak
        r_prev, r_mid, r_next = corr[i, lag - 1], corr[i, lag], corr[i, lag + 1]
        denom = r_prev - 2.0 * r_mid + r_next
        delta = 0.5 * (r_prev - r_next) / denom if abs(denom) > 1e-12 else 0.0
        delta = float(np.clip(delta, -0.5, 0.5))
        f0[i] = float(np.clip(SAMPLE_RATE / (lag + delta), F0_MIN, F0_MAX))
        voiced[i] = True
    return PitchContour(f0_hz=f0, voiced=voiced)


def normalize_pitch(contour: PitchContour) -> NormalizedPitchContour:
    """Z-normalize F0 over voiced frames; unvoiced frames stay exactly 0.

    Mean and (population) std are computed over voiced frames only and the
    std is guarded by a 1e-8 epsilon, so all-unvoiced and constant-pitch
    contours normalize to all zeros instead of raising.
    """
    values = np.zeros(len(contour))
    if np.any(contour.voiced):
        voiced_f0 = contour.f0_hz[contour.voiced]
        mean = float(voiced_f0.mean())
        std = float(voiced_f0.std())
        values[contour.voiced] = (voiced_f0 - mean) / (std + ZNORM_EPS)
    return NormalizedPitchContour(values=values, voiced=contour.voiced.copy())
