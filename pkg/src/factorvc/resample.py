"""Random time-resampling used to scrub rhythm from encoder inputs.

The operator chops a sequence into short segments, stretches or squeezes
each one by a random rate with linear interpolation, and restores the
original length by trimming or zero-padding on the right.  Durations of
individual speech events are destroyed while their order and local
spectral content survive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ResampleConfig", "segment_plan", "random_resample"]


@dataclass(frozen=True)
class ResampleConfig:
    seg_min_frames: int = 19
    seg_max_frames: int = 32
    rate_min: float = 0.5
    rate_max: float = 1.5

    def __post_init__(self):
        if not (0 < self.seg_min_frames <= self.seg_max_frames):
            raise ValueError("segment bounds must satisfy 0 < min <= max")
        if not (0 < self.rate_min <= self.rate_max):
            raise ValueError("rate bounds must satisfy 0 < min <= max")


def segment_plan(num_frames, rng_seed, cfg=ResampleConfig()):
    """Partition ``[0, num_frames)`` into segments with random rates.

    Returns a list of ``(start, length, rate)`` tuples.  Lengths are drawn
    uniformly from ``[seg_min_frames, seg_max_frames]``; the final segment
    is capped at whatever remains.  Rates are uniform in
    ``[rate_min, rate_max]``.  The plan is a pure function of the seed.
    """
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    rng = np.random.default_rng(rng_seed)
    plan = []
    pos = 0
    while pos < num_frames:
        length = int(rng.integers(cfg.seg_min_frames, cfg.seg_max_frames + 1))
        length = min(length, num_frames - pos)
        rate = float(rng.uniform(cfg.rate_min, cfg.rate_max))
        plan.append((pos, length, rate))
        pos += length
    return plan


def _stretch(segment, rate):
    """Linearly resample one segment to round(len * rate) frames."""
    length = segment.shape[0]
    new_length = int(np.floor(length * rate + 0.5))  # round half up
    if new_length < 1:
        new_length = 1
    if new_length == length:
        return segment.copy()
    src = np.arange(length, dtype=np.float64)
    dst = np.linspace(0.0, length - 1.0, new_length)
    out = np.empty((new_length, segment.shape[1]), dtype=np.float64)
    for col in range(segment.shape[1]):
        out[:, col] = np.interp(dst, src, segment[:, col].astype(np.float64))
    return out.astype(segment.dtype)


def random_resample(seq, rng_seed, cfg=ResampleConfig()):
    """Apply the random-resampling operator to a (T, D) array.

    The output has exactly the input's shape: the resampled concatenation
    is right-trimmed when it runs long and right-zero-padded when it runs
    short.  Deterministic given ``rng_seed``.
    """
    seq = np.asarray(seq)
    if seq.ndim != 2:
        raise ValueError(f"expected a (T, D) matrix, got shape {seq.shape}")
    num_frames = seq.shape[0]
    plan = segment_plan(num_frames, rng_seed, cfg)
    pieces = [_stretch(seq[start:start + length], rate)
              for start, length, rate in plan]
    warped = np.concatenate(pieces, axis=0)
    if warped.shape[0] >= num_frames:
        return warped[:num_frames]
    pad = np.zeros((num_frames - warped.shape[0], seq.shape[1]), dtype=seq.dtype)
    return np.concatenate([warped, pad], axis=0)
