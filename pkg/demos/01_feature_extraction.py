"""Front-end walkthrough: waveform -> log-mel spectrogram -> pitch contour.

Synthesizes a two-second harmonic tone with vibrato and a silent gap, runs
the full feature chain on it, and saves a picture of what the encoders
actually consume.  No training involved.
"""

import numpy as np

from common import OUTPUT
from factorvc.features import (SAMPLE_RATE, Waveform, compute_mel,
                               extract_pitch, normalize_pitch)


def make_tone(seconds=2.0, f0=160.0):
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    vibrato = f0 * (1.0 + 0.03 * np.sin(2 * np.pi * 5.0 * t))
    phase = 2 * np.pi * np.cumsum(vibrato) / SAMPLE_RATE
    samples = sum(0.5 / k * np.sin(k * phase) for k in (1, 2, 3))
    samples[int(0.9 * SAMPLE_RATE):int(1.15 * SAMPLE_RATE)] = 0.0  # a pause
    return Waveform(0.6 * samples / np.max(np.abs(samples)))


def main():
    wave = make_tone()
    print(f"waveform: {len(wave.samples)} samples at {wave.sample_rate} Hz")

    mel = compute_mel(wave)
    print(f"log-mel:  {mel.frames.shape} (frames x bands), "
          f"range [{mel.frames.min():.1f}, {mel.frames.max():.1f}]")

    contour = extract_pitch(wave)
    voiced = contour.voiced
    print(f"pitch:    {voiced.sum()}/{len(voiced)} frames voiced, "
          f"median F0 {np.median(contour.f0_hz[voiced]):.1f} Hz "
          f"(synthesized around 160 Hz)")

    norm = normalize_pitch(contour)
    v = norm.values[voiced]
    print(f"normalized pitch: mean {v.mean():+.2e}, std {v.std():.3f} "
          f"over voiced frames (per-utterance z-scores)")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    ax1.imshow(mel.frames.T, origin="lower", aspect="auto", cmap="magma")
    ax1.set_ylabel("mel band")
    ax1.set_title("log-mel spectrogram")
    frames = np.arange(len(contour.f0_hz))
    f0_plot = np.where(voiced, contour.f0_hz, np.nan)
    ax2.plot(frames, f0_plot, lw=1.5)
    ax2.set_ylabel("F0 (Hz)")
    ax2.set_xlabel("frame")
    ax2.set_title("pitch contour (gaps = unvoiced)")
    fig.tight_layout()
    OUTPUT.mkdir(parents=True, exist_ok=True)
    out = OUTPUT / "features.png"
    fig.savefig(out, dpi=110)
    print(f"figure: {out}")


if __name__ == "__main__":
    main()
