"""Two-phase training loop: fit the variational MI nets on detached codes,
then take one Adam step on the weighted conversion objective.

Every stochastic choice (batch membership, crop offsets, resampling draws)
is a pure function of (config seed, step counter), which is what makes
checkpoint-resume continuations bit-identical to uninterrupted runs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
import yaml

from .corpus import CorpusIndex, read_feature_record
from .mi import CodeMIEstimator, qnet_train_step
from .model import FactorModel, ModelConfig, build_model
from .resample import ResampleConfig

CHECKPOINT_VERSION = 1

__all__ = [
    "TrainConfig",
    "LossBreakdown",
    "TrainState",
    "reconstruction_losses",
    "weighted_total",
    "vc_loss",
    "train_step",
    "train",
    "load_training_set",
    "sample_batch",
    "save_checkpoint",
    "load_checkpoint",
    "restore_state",
    "write_config_file",
    "read_config_file",
]


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 0.01
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    batch_size: int = 16
    max_steps: int = 5000
    seed: int = 0
    checkpoint_every: int = 1000
    crop_frames: int = 128

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be at least 1")


@dataclass
class LossBreakdown:
    s_recon: float
    p_recon: float
    com_cls: float
    adv_cls: float
    mi: float
    total: float

    def check_identity(self, alpha, beta, gamma, rel=1e-6):
        expected = (self.s_recon + self.p_recon + alpha * self.com_cls
                    + beta * self.adv_cls + gamma * self.mi)
        scale = max(abs(expected), 1e-12)
        if abs(self.total - expected) / scale > rel:
            raise AssertionError(
                f"total {self.total} != weighted sum {expected}")

    def as_log_line(self, step, qnet_nll):
        return (f"step={step} s_recon={self.s_recon:.6f} p_recon={self.p_recon:.6f} "
                f"com_cls={self.com_cls:.6f} adv_cls={self.adv_cls:.6f} "
                f"mi={self.mi:.6f} total={self.total:.6f} qnet_nll={qnet_nll:.6f}")


def reconstruction_losses(mel, mel_hat, pitch, pitch_hat):
    """(MAE + MSE) on the spectrogram, MSE on the pitch contour."""
    if mel.shape != mel_hat.shape:
        raise ValueError(f"mel shapes differ: {tuple(mel.shape)} vs {tuple(mel_hat.shape)}")
    if pitch.shape != pitch_hat.shape:
        raise ValueError(f"pitch shapes differ: {tuple(pitch.shape)} vs {tuple(pitch_hat.shape)}")
    s_recon = F.l1_loss(mel_hat, mel) + F.mse_loss(mel_hat, mel)
    p_recon = F.mse_loss(pitch_hat, pitch)
    return s_recon, p_recon


def weighted_total(s_recon, p_recon, com_cls, adv_cls, mi, cfg: TrainConfig):
    return (s_recon + p_recon + cfg.alpha * com_cls
            + cfg.beta * adv_cls + cfg.gamma * mi)


def vc_loss(batch, model: FactorModel, mi_estimator: CodeMIEstimator,
            cfg: TrainConfig, rr_seed):
    """Full forward pass and weighted objective for one batch.

    Returns (LossBreakdown of detached floats, total as a live tensor).
    """
    def checked(name, value):
        if not torch.isfinite(value):
            raise RuntimeError(f"non-finite loss component: {name}")
        return value

    mel, pitch, labels = batch["mel"], batch["pitch"], batch["labels"]
    codes = model.encode(mel, pitch, rr_seed=rr_seed)
    mel_hat = model.decode_speech(codes)
    pitch_hat = model.decode_pitch(codes.z_r, codes.z_p)
    s_recon, p_recon = reconstruction_losses(mel, mel_hat, pitch, pitch_hat)
    checked("s_recon", s_recon)
    checked("p_recon", p_recon)
    com = checked("com_cls", F.cross_entropy(
        model.classify_common(codes.z_t).logits, labels))
    adv = checked("adv_cls", F.cross_entropy(
        model.classify_adversarial(codes.z_r, codes.z_p, codes.z_c).logits, labels))
    try:
        mi = checked("mi", mi_estimator.mi_loss(codes))
    except ValueError as exc:
        raise RuntimeError(f"non-finite loss component: mi ({exc})") from exc
    total = weighted_total(s_recon, p_recon, com, adv, mi, cfg)
    parts = {"s_recon": s_recon, "p_recon": p_recon, "com_cls": com,
             "adv_cls": adv, "mi": mi}
    breakdown = LossBreakdown(total=float(total.detach()),
                              **{k: float(v.detach()) for k, v in parts.items()})
    return breakdown, total


@dataclass
class TrainState:
    model: FactorModel
    mi_estimator: CodeMIEstimator
    vc_optimizer: torch.optim.Optimizer
    q_optimizer: torch.optim.Optimizer
    cfg: TrainConfig
    step: int = 0


def _rr_seed_for(cfg: TrainConfig, step):
    return int(np.random.SeedSequence([cfg.seed, step, 2]).generate_state(1)[0])


def train_step(batch, state: TrainState):
    """Phase 1: q-net likelihood ascent on detached codes.  Phase 2: one
    clipped Adam step on the conversion loss.  Returns (breakdown, nll)."""
    rr_seed = _rr_seed_for(state.cfg, state.step)
    with torch.no_grad():
        frozen_codes = state.model.encode(batch["mel"], batch["pitch"], rr_seed=rr_seed)
    qnet_nll = qnet_train_step(state.mi_estimator, frozen_codes, state.q_optimizer)

    state.vc_optimizer.zero_grad()
    breakdown, total = vc_loss(batch, state.model, state.mi_estimator,
                               state.cfg, rr_seed)
    total.backward()
    torch.nn.utils.clip_grad_norm_(state.model.parameters(), 1.0)
    state.vc_optimizer.step()
    state.step += 1
    return breakdown, qnet_nll


# -- data plumbing -----------------------------------------------------------


def load_training_set(index: CorpusIndex):
    """Materialize the train split into memory as float32 arrays."""
    items = []
    for entry in index.for_split("train"):
        rec = read_feature_record(entry.feature_path)
        items.append({
            "mel": rec["mel"].astype(np.float32),
            "pitch": rec["pitch_norm"].astype(np.float32),
            "label": entry.speaker_id,
            "utterance_id": entry.utterance_id,
        })
    if not items:
        raise ValueError("corpus index has no training entries")
    return items


def _crop_or_pad(arr, offset, crop):
    t = arr.shape[0]
    if t >= crop:
        return arr[offset:offset + crop]
    pad_shape = (crop - t,) + arr.shape[1:]
    return np.concatenate([arr, np.zeros(pad_shape, dtype=arr.dtype)], axis=0)


def sample_batch(items, cfg: TrainConfig, step):
    """Draw a batch as a pure function of (cfg.seed, step)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, step, 1]))
    crop = cfg.crop_frames
    mels, pitches, labels = [], [], []
    for pick in rng.integers(0, len(items), size=cfg.batch_size):
        item = items[int(pick)]
        t = item["mel"].shape[0]
        offset = int(rng.integers(0, t - crop + 1)) if t > crop else 0
        mels.append(_crop_or_pad(item["mel"], offset, crop))
        pitches.append(_crop_or_pad(item["pitch"], offset, crop))
        labels.append(item["label"])
    return {
        "mel": torch.from_numpy(np.stack(mels)),
        "pitch": torch.from_numpy(np.stack(pitches)),
        "labels": torch.tensor(labels, dtype=torch.long),
    }


# -- checkpointing -----------------------------------------------------------


def save_checkpoint(path, state: TrainState, model_cfg: ModelConfig,
                    resample_cfg: ResampleConfig):
    payload = {
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "model_config": asdict(model_cfg),
        "resample_config": asdict(resample_cfg),
        "train_config": asdict(state.cfg),
        "model_state": state.model.state_dict(),
        "mi_state": state.mi_estimator.state_dict(),
        "vc_opt_state": state.vc_optimizer.state_dict(),
        "q_opt_state": state.q_optimizer.state_dict(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path):
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise ValueError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise ValueError(f"checkpoint {path} has no version marker; refusing to load")
    if payload["version"] != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint {path} is version {payload['version']}, "
            f"this build reads version {CHECKPOINT_VERSION}")
    return payload


def _fresh_state(train_cfg: TrainConfig, model_cfg: ModelConfig,
                 resample_cfg: ResampleConfig):
    model = build_model(model_cfg, seed=train_cfg.seed, resample_cfg=resample_cfg)
    mi_est = CodeMIEstimator(model_cfg.d_r, model_cfg.d_p, model_cfg.d_c)
    betas = (train_cfg.adam_beta1, train_cfg.adam_beta2)
    vc_opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr, betas=betas)
    q_opt = torch.optim.Adam(mi_est.parameters(), lr=train_cfg.lr, betas=betas)
    return TrainState(model=model, mi_estimator=mi_est, vc_optimizer=vc_opt,
                      q_optimizer=q_opt, cfg=train_cfg, step=0)


def restore_state(payload, train_cfg=None):
    """Rebuild a TrainState (and its configs) from a checkpoint payload."""
    model_cfg = ModelConfig(**payload["model_config"])
    resample_cfg = ResampleConfig(**payload["resample_config"])
    cfg = train_cfg or TrainConfig(**payload["train_config"])
    state = _fresh_state(cfg, model_cfg, resample_cfg)
    state.model.load_state_dict(payload["model_state"])
    state.mi_estimator.load_state_dict(payload["mi_state"])
    state.vc_optimizer.load_state_dict(payload["vc_opt_state"])
    state.q_optimizer.load_state_dict(payload["q_opt_state"])
    state.step = int(payload["step"])
    return state, model_cfg, resample_cfg


def train(train_cfg: TrainConfig, model_cfg: ModelConfig, index: CorpusIndex,
          out_dir, resample_cfg: ResampleConfig = ResampleConfig(),
          resume_from=None, log_every=1):
    """Run the loop to max_steps, checkpointing and logging along the way.

    Returns the path of the final checkpoint.
    """
    if index.num_speakers < 2:
        raise ValueError("training needs at least 2 speakers in the index")
    if model_cfg.num_speakers != index.num_speakers:
        raise ValueError(
            f"model expects {model_cfg.num_speakers} speakers, "
            f"index has {index.num_speakers}")
    if model_cfg.crop_frames != train_cfg.crop_frames:
        raise ValueError("model and train configs disagree on crop_frames")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        state, model_cfg, resample_cfg = restore_state(
            load_checkpoint(resume_from), train_cfg)
    else:
        state = _fresh_state(train_cfg, model_cfg, resample_cfg)

    items = load_training_set(index)
    log_path = out_dir / "train.log"
    with open(log_path, "a") as log:
        if state.step == 0:
            save_checkpoint(out_dir / "checkpoint_000000.pt", state,
                            model_cfg, resample_cfg)
        while state.step < train_cfg.max_steps:
            batch = sample_batch(items, train_cfg, state.step)
            breakdown, qnet_nll = train_step(batch, state)
            breakdown.check_identity(train_cfg.alpha, train_cfg.beta, train_cfg.gamma)
            if state.step % log_every == 0 or state.step == train_cfg.max_steps:
                log.write(breakdown.as_log_line(state.step, qnet_nll) + "\n")
                log.flush()
            if state.step % train_cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"checkpoint_{state.step:06d}.pt",
                                state, model_cfg, resample_cfg)
    final = save_checkpoint(out_dir / "checkpoint_final.pt", state,
                            model_cfg, resample_cfg)
    return final


# -- flat config file --------------------------------------------------------

_PREFIXES = {"train": TrainConfig, "model": ModelConfig, "resample": ResampleConfig}


def write_config_file(path, train_cfg: TrainConfig, model_cfg: ModelConfig = None,
                      resample_cfg: ResampleConfig = None):
    doc = {}
    for prefix, cfg in (("train", train_cfg), ("model", model_cfg),
                        ("resample", resample_cfg)):
        if cfg is None:
            continue
        for key, value in asdict(cfg).items():
            doc[f"{prefix}.{key}"] = value
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=True))


def read_config_file(path, num_speakers=None):
    """Parse a flat `section.key: value` document into the three configs.

    ``num_speakers`` fills in the model's speaker count when the file does
    not pin one (the usual case: it comes from the corpus manifest).
    """
    doc = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(doc, dict):
        raise ValueError(f"config {path} must be a flat key/value mapping")
    sections = {"train": {}, "model": {}, "resample": {}}
    for key, value in doc.items():
        if "." not in str(key):
            raise ValueError(f"config key {key!r} is not of the form section.key")
        section, name = str(key).split(".", 1)
        if section not in sections:
            raise ValueError(f"unknown config section {section!r} in key {key!r}")
        valid = {f.name for f in fields(_PREFIXES[section])}
        if name not in valid:
            raise ValueError(f"unknown config key {key!r}")
        sections[section][name] = value
    if "num_speakers" not in sections["model"]:
        if num_speakers is None:
            raise ValueError("config does not pin model.num_speakers and no "
                             "corpus value was supplied")
        sections["model"]["num_speakers"] = int(num_speakers)
    train_cfg = TrainConfig(**sections["train"])
    model_cfg = ModelConfig(**sections["model"])
    resample_cfg = ResampleConfig(**sections["resample"])
    return train_cfg, model_cfg, resample_cfg
