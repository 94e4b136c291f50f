"""Encoder/decoder/classifier networks for four-factor voice conversion.

Four encoders split a (mel, normalized-pitch) pair into rhythm, pitch,
content and timbre codes; the speech decoder reassembles them into a mel
spectrogram and the pitch decoder predicts the normalized contour from
rhythm + pitch codes alone.  A common classifier reads the timbre vector
and an adversarial classifier — fed through a gradient reversal layer —
reads the pooled remaining codes, pushing speaker identity out of them.

Encoder inputs destined for the content and pitch paths pass through the
random-resampling operator first, so duration patterns can only survive
in the rhythm code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .resample import ResampleConfig, random_resample

__all__ = [
    "ModelConfig",
    "LatentCodes",
    "ClassifierOutput",
    "ParameterGroups",
    "FactorModel",
    "build_model",
    "grl_apply",
    "grl_backprop",
]

N_MEL_BANDS = 80


@dataclass(frozen=True)
class ModelConfig:
    num_speakers: int
    d_r: int = 2
    d_p: int = 64
    d_c: int = 16
    d_t: int = 256
    conv_channels: int = 512
    conv_layers: int = 3
    bilstm_layers: int = 1
    grl_lambda: float = 1.0
    crop_frames: int = 128

    def __post_init__(self):
        dims = (self.num_speakers, self.d_r, self.d_p, self.d_c, self.d_t,
                self.conv_channels, self.conv_layers, self.bilstm_layers,
                self.crop_frames)
        if any(int(d) <= 0 for d in dims):
            raise ValueError("all ModelConfig dimensions must be positive")
        for name in ("d_r", "d_p", "d_c"):
            if getattr(self, name) % 2:
                raise ValueError(f"{name} must be even (bidirectional bottleneck)")
        if self.conv_channels % 2:
            raise ValueError("conv_channels must be even")
        if self.crop_frames < ResampleConfig().seg_max_frames:
            raise ValueError("crop_frames must cover at least one resampling segment")


@dataclass
class LatentCodes:
    """z_r/z_p/z_c: (B, T, d); z_t: (B, d_t)."""
    z_r: torch.Tensor
    z_p: torch.Tensor
    z_c: torch.Tensor
    z_t: torch.Tensor

    def __post_init__(self):
        t = self.z_r.shape[-2]
        if self.z_p.shape[-2] != t or self.z_c.shape[-2] != t:
            raise ValueError("time-varying codes must share one length")


@dataclass
class ClassifierOutput:
    logits: torch.Tensor  # (B, K)
    probs: torch.Tensor   # softmax of logits


@dataclass
class ParameterGroups:
    enc_timbre: list = field(default_factory=list)
    enc_irrelevant: list = field(default_factory=list)
    cls_common: list = field(default_factory=list)
    cls_adv: list = field(default_factory=list)
    decoders: list = field(default_factory=list)
    qnets: list = field(default_factory=list)

    def all_parameters(self):
        return (self.enc_timbre + self.enc_irrelevant + self.cls_common
                + self.cls_adv + self.decoders + self.qnets)


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.lam, None


def grl_apply(x, lam=1.0):
    """Identity in the forward pass; scales gradients by -lam in backward."""
    return _GradReverse.apply(x, lam)


def grl_backprop(upstream_grad, lam):
    """What the reversal layer does to a gradient, as a plain function."""
    return -lam * upstream_grad


def _conv_stack(in_dim, channels, layers):
    blocks = []
    for i in range(layers):
        blocks += [
            nn.Conv1d(in_dim if i == 0 else channels, channels,
                      kernel_size=5, padding=2),
            nn.GroupNorm(max(1, channels // 16), channels),
            nn.ReLU(),
        ]
    return nn.Sequential(*blocks)


class _SequenceEncoder(nn.Module):
    """conv stack -> BiLSTM whose bidirectional output is the bottleneck."""

    def __init__(self, in_dim, out_dim, channels, conv_layers, lstm_layers):
        super().__init__()
        self.convs = _conv_stack(in_dim, channels, conv_layers)
        self.lstm = nn.LSTM(channels, out_dim // 2, num_layers=lstm_layers,
                            batch_first=True, bidirectional=True)

    def forward(self, x):  # x: (B, T, in_dim)
        h = self.convs(x.transpose(1, 2)).transpose(1, 2)
        out, _ = self.lstm(h)
        return out


class _TimbreEncoder(nn.Module):
    """conv stack -> time-average pooling -> linear, one vector per item."""

    def __init__(self, in_dim, out_dim, channels, conv_layers):
        super().__init__()
        self.convs = _conv_stack(in_dim, channels, conv_layers)
        self.proj = nn.Linear(channels, out_dim)

    def forward(self, x):
        h = self.convs(x.transpose(1, 2))
        return self.proj(h.mean(dim=2))


class _SequenceDecoder(nn.Module):
    def __init__(self, in_dim, out_dim, channels, lstm_layers):
        super().__init__()
        self.lstm = nn.LSTM(in_dim, channels // 2, num_layers=lstm_layers,
                            batch_first=True, bidirectional=True)
        self.proj = nn.Linear(channels, out_dim)

    def forward(self, x):
        out, _ = self.lstm(x)
        return self.proj(out)


def _mlp_head(in_dim, num_classes):
    hidden = max(32, in_dim)
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(),
                         nn.Linear(hidden, num_classes))


class FactorModel(nn.Module):
    def __init__(self, cfg: ModelConfig, resample_cfg: ResampleConfig = ResampleConfig()):
        super().__init__()
        self.cfg = cfg
        self.resample_cfg = resample_cfg
        ch, ncl, nll = cfg.conv_channels, cfg.conv_layers, cfg.bilstm_layers
        self.enc_rhythm = _SequenceEncoder(N_MEL_BANDS, cfg.d_r, ch, ncl, nll)
        self.enc_pitch = _SequenceEncoder(1, cfg.d_p, ch, ncl, nll)
        self.enc_content = _SequenceEncoder(N_MEL_BANDS, cfg.d_c, ch, ncl, nll)
        self.enc_timbre = _TimbreEncoder(N_MEL_BANDS, cfg.d_t, ch, ncl)
        dec_in = cfg.d_r + cfg.d_p + cfg.d_c + cfg.d_t
        self.dec_speech = _SequenceDecoder(dec_in, N_MEL_BANDS, ch, nll)
        self.dec_pitch = _SequenceDecoder(cfg.d_r + cfg.d_p, 1, ch, nll)
        self.cls_common = _mlp_head(cfg.d_t, cfg.num_speakers)
        self.cls_adv = _mlp_head(cfg.d_r + cfg.d_p + cfg.d_c, cfg.num_speakers)

    # -- encoding -----------------------------------------------------------

    def _resample_batch(self, batch, rr_seed, stream):
        """Apply random resampling item-wise on the raw input features."""
        arrays = batch.detach().cpu().numpy()
        out = np.stack([
            random_resample(arrays[b], np.random.SeedSequence([rr_seed, b, stream]),
                            self.resample_cfg)
            for b in range(arrays.shape[0])
        ])
        return torch.as_tensor(out, dtype=batch.dtype, device=batch.device)

    def encode(self, mel, pitch, rr_seed=None) -> LatentCodes:
        """mel: (B, T, 80); pitch: (B, T) or (B, T, 1).

        ``rr_seed`` seeds the random-resampling applied on the content and
        pitch paths; ``None`` disables resampling (inference).  The rhythm
        and timbre paths always see the raw mel.
        """
        if mel.dim() != 3 or mel.shape[-1] != N_MEL_BANDS:
            raise ValueError(f"mel must be (B, T, {N_MEL_BANDS}), got {tuple(mel.shape)}")
        if pitch.dim() == 2:
            pitch = pitch.unsqueeze(-1)
        if pitch.shape[:2] != mel.shape[:2] or pitch.shape[-1] != 1:
            raise ValueError("pitch must align with mel frames")
        if rr_seed is None:
            mel_rr, pitch_rr = mel, pitch
        else:
            mel_rr = self._resample_batch(mel, int(rr_seed), stream=0)
            pitch_rr = self._resample_batch(pitch, int(rr_seed), stream=1)
        return LatentCodes(
            z_r=self.enc_rhythm(mel),
            z_p=self.enc_pitch(pitch_rr),
            z_c=self.enc_content(mel_rr),
            z_t=self.enc_timbre(mel),
        )

    # -- decoding -----------------------------------------------------------

    def decode_speech(self, codes: LatentCodes):
        t = codes.z_r.shape[1]
        tiled = codes.z_t.unsqueeze(1).expand(-1, t, -1)
        joint = torch.cat([codes.z_r, codes.z_p, codes.z_c, tiled], dim=-1)
        return self.dec_speech(joint)

    def decode_pitch(self, z_r, z_p):
        if z_r.shape[1] != z_p.shape[1]:
            raise ValueError("rhythm and pitch codes must share one length")
        return self.dec_pitch(torch.cat([z_r, z_p], dim=-1)).squeeze(-1)

    # -- classification -----------------------------------------------------

    def classify_common(self, z_t) -> ClassifierOutput:
        logits = self.cls_common(z_t)
        return ClassifierOutput(logits=logits, probs=F.softmax(logits, dim=-1))

    def classify_adversarial(self, z_r, z_p, z_c, apply_grl=True) -> ClassifierOutput:
        pooled = torch.cat([z_r.mean(dim=1), z_p.mean(dim=1), z_c.mean(dim=1)], dim=-1)
        if apply_grl:
            pooled = grl_apply(pooled, self.cfg.grl_lambda)
        logits = self.cls_adv(pooled)
        return ClassifierOutput(logits=logits, probs=F.softmax(logits, dim=-1))

    # -- bookkeeping ---------------------------------------------------------

    def parameter_groups(self, qnets=None) -> ParameterGroups:
        groups = ParameterGroups(
            enc_timbre=list(self.enc_timbre.parameters()),
            enc_irrelevant=(list(self.enc_rhythm.parameters())
                            + list(self.enc_pitch.parameters())
                            + list(self.enc_content.parameters())),
            cls_common=list(self.cls_common.parameters()),
            cls_adv=list(self.cls_adv.parameters()),
            decoders=(list(self.dec_speech.parameters())
                      + list(self.dec_pitch.parameters())),
            qnets=list(qnets.parameters()) if qnets is not None else [],
        )
        return groups


def build_model(cfg: ModelConfig, seed=0,
                resample_cfg: ResampleConfig = ResampleConfig()) -> FactorModel:
    """Construct a model with seed-determined initial weights."""
    torch.manual_seed(int(seed))
    return FactorModel(cfg, resample_cfg)
