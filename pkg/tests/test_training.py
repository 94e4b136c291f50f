import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from factorvc.corpus import generate_toy_corpus, ingest_corpus
from factorvc.mi import CodeMIEstimator
from factorvc.model import ModelConfig, build_model
from factorvc.resample import ResampleConfig
from factorvc.training import (
    LossBreakdown,
    TrainConfig,
    TrainState,
    load_checkpoint,
    load_training_set,
    read_config_file,
    reconstruction_losses,
    restore_state,
    sample_batch,
    save_checkpoint,
    train,
    train_step,
    vc_loss,
    weighted_total,
    write_config_file,
)

TINY_MODEL = dict(d_r=2, d_p=8, d_c=4, d_t=16, conv_channels=32,
                  conv_layers=1, bilstm_layers=1, crop_frames=64)


@pytest.fixture(scope="module")
def toy_index(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    generate_toy_corpus(root, num_speakers=3, utterances_per_speaker=3, seed=1)
    cache = tmp_path_factory.mktemp("cache")
    return ingest_corpus(root, (2, 1, 0), seed=0, cache_dir=cache)


def tiny_state(num_speakers=2, seed=0, lr=1e-3, crop=64):
    cfg = TrainConfig(lr=lr, batch_size=4, seed=seed, crop_frames=crop,
                      max_steps=10)
    model_cfg = ModelConfig(num_speakers=num_speakers, **TINY_MODEL)
    model = build_model(model_cfg, seed=seed)
    mi_est = CodeMIEstimator(model_cfg.d_r, model_cfg.d_p, model_cfg.d_c)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    return TrainState(
        model=model, mi_estimator=mi_est,
        vc_optimizer=torch.optim.Adam(model.parameters(), lr=lr, betas=betas),
        q_optimizer=torch.optim.Adam(mi_est.parameters(), lr=lr, betas=betas),
        cfg=cfg), model_cfg


def random_batch(batch=4, frames=64, num_speakers=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    return {
        "mel": torch.randn(batch, frames, 80, generator=g),
        "pitch": torch.randn(batch, frames, generator=g),
        "labels": torch.randint(0, num_speakers, (batch,), generator=g),
    }


class TestReconstructionLosses:
    def test_perfect_reconstruction_is_zero(self):
        mel = torch.randn(2, 8, 80)
        pitch = torch.randn(2, 8)
        s, p = reconstruction_losses(mel, mel.clone(), pitch, pitch.clone())
        assert s.item() == 0.0 and p.item() == 0.0

    def test_constant_offset(self):
        mel = torch.zeros(2, 8, 80)
        s, _ = reconstruction_losses(mel, torch.ones_like(mel),
                                     torch.zeros(2, 8), torch.zeros(2, 8))
        assert abs(s.item() - 2.0) < 1e-6

    def test_matches_hand_rolled(self):
        g = torch.Generator().manual_seed(3)
        mel = torch.randn(2, 5, 80, generator=g)
        mel_hat = torch.randn(2, 5, 80, generator=g)
        pitch = torch.randn(2, 5, generator=g)
        pitch_hat = torch.randn(2, 5, generator=g)
        s, p = reconstruction_losses(mel, mel_hat, pitch, pitch_hat)
        d = (mel_hat - mel).numpy()
        assert abs(s.item() - (np.abs(d).mean() + (d ** 2).mean())) < 1e-6
        assert abs(p.item() - ((pitch_hat - pitch).numpy() ** 2).mean()) < 1e-6

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            reconstruction_losses(torch.zeros(2, 8, 80), torch.zeros(2, 9, 80),
                                  torch.zeros(2, 8), torch.zeros(2, 8))


class TestVCLoss:
    def test_unit_components_weighted_total(self):
        cfg = TrainConfig()
        total = weighted_total(1.0, 1.0, 1.0, 1.0, 1.0, cfg)
        assert abs(total - 2.21) < 1e-9

    def test_zero_gamma_removes_mi_term(self):
        total_a = weighted_total(1.0, 1.0, 1.0, 1.0, 123.0,
                                 TrainConfig(gamma=0.0))
        total_b = weighted_total(1.0, 1.0, 1.0, 1.0, -55.0,
                                 TrainConfig(gamma=0.0))
        assert total_a == total_b

    def test_breakdown_identity_and_finite(self):
        state, _ = tiny_state()
        batch = random_batch()
        breakdown, total = vc_loss(batch, state.model, state.mi_estimator,
                                   state.cfg, rr_seed=0)
        breakdown.check_identity(state.cfg.alpha, state.cfg.beta, state.cfg.gamma)
        assert math.isfinite(breakdown.total) and breakdown.total > 0
        assert float(total.detach()) == breakdown.total

    def test_identity_violation_caught(self):
        bad = LossBreakdown(s_recon=1, p_recon=1, com_cls=1, adv_cls=1,
                            mi=1, total=5.0)
        with pytest.raises(AssertionError):
            bad.check_identity(0.1, 0.1, 0.01)

    def test_non_finite_component_named(self):
        state, _ = tiny_state()
        batch = random_batch()
        batch["mel"][0, 0, 0] = float("nan")
        with pytest.raises(RuntimeError, match="non-finite loss component"):
            vc_loss(batch, state.model, state.mi_estimator, state.cfg, rr_seed=0)


class TestTrainStep:
    def test_zero_lr_changes_nothing(self):
        state, _ = tiny_state()
        state.vc_optimizer = torch.optim.Adam(state.model.parameters(), lr=0.0)
        state.q_optimizer = torch.optim.Adam(state.mi_estimator.parameters(), lr=0.0)
        before = {n: p.clone() for n, p in state.model.named_parameters()}
        before_q = {n: p.clone() for n, p in state.mi_estimator.named_parameters()}
        train_step(random_batch(), state)
        for n, p in state.model.named_parameters():
            assert torch.equal(p, before[n]), n
        for n, p in state.mi_estimator.named_parameters():
            assert torch.equal(p, before_q[n]), n

    def test_phase_separation(self):
        # q-net lr zero: VC weights move, q-nets hold still — and vice versa
        state, _ = tiny_state()
        state.q_optimizer = torch.optim.Adam(state.mi_estimator.parameters(), lr=0.0)
        q_before = {n: p.clone() for n, p in state.mi_estimator.named_parameters()}
        m_before = {n: p.clone() for n, p in state.model.named_parameters()}
        train_step(random_batch(), state)
        assert all(torch.equal(p, q_before[n])
                   for n, p in state.mi_estimator.named_parameters())
        assert any(not torch.equal(p, m_before[n])
                   for n, p in state.model.named_parameters())

        state, _ = tiny_state()
        state.vc_optimizer = torch.optim.Adam(state.model.parameters(), lr=0.0)
        q_before = {n: p.clone() for n, p in state.mi_estimator.named_parameters()}
        m_before = {n: p.clone() for n, p in state.model.named_parameters()}
        train_step(random_batch(), state)
        assert any(not torch.equal(p, q_before[n])
                   for n, p in state.mi_estimator.named_parameters())
        assert all(torch.equal(p, m_before[n])
                   for n, p in state.model.named_parameters())

    def test_deterministic_loss_sequence(self):
        seqs = []
        for _ in range(2):
            state, _ = tiny_state(seed=7)
            losses = []
            for step in range(3):
                batch = random_batch(seed=step)
                breakdown, nll = train_step(batch, state)
                losses.append((breakdown.total, nll))
            seqs.append(losses)
        assert seqs[0] == seqs[1]

    def test_step_counter_increments(self):
        state, _ = tiny_state()
        assert state.step == 0
        train_step(random_batch(), state)
        assert state.step == 1

    def test_classifier_step_decreases_its_own_loss(self):
        state, _ = tiny_state(lr=1e-3)
        batch = random_batch(seed=5)
        rr_seed = 0
        with torch.no_grad():
            codes = state.model.encode(batch["mel"], batch["pitch"], rr_seed=rr_seed)

        def adv_loss():
            with torch.no_grad():
                out = state.model.classify_adversarial(codes.z_r, codes.z_p, codes.z_c)
                return F.cross_entropy(out.logits, batch["labels"]).item()

        before = adv_loss()
        train_step(batch, state)
        # θ_c2 moved to cut C2's loss on the frozen codes even though the
        # encoders received reversed gradients
        assert adv_loss() < before


class TestDataPlumbing:
    def test_load_training_set(self, toy_index):
        items = load_training_set(toy_index)
        assert len(items) == 6
        assert {i["label"] for i in items} == {0, 1}

    def test_sample_batch_shapes_and_determinism(self, toy_index):
        items = load_training_set(toy_index)
        cfg = TrainConfig(batch_size=5, crop_frames=64, seed=3)
        a = sample_batch(items, cfg, step=11)
        b = sample_batch(items, cfg, step=11)
        assert a["mel"].shape == (5, 64, 80)
        assert a["pitch"].shape == (5, 64)
        assert a["labels"].shape == (5,)
        assert torch.equal(a["mel"], b["mel"])
        assert torch.equal(a["labels"], b["labels"])
        c = sample_batch(items, cfg, step=12)
        assert not torch.equal(a["mel"], c["mel"])

    def test_short_utterances_zero_padded(self, toy_index):
        items = load_training_set(toy_index)
        cfg = TrainConfig(batch_size=4, crop_frames=4096, seed=0)
        batch = sample_batch(items, cfg, step=0)
        assert batch["mel"].shape[1] == 4096
        # every toy utterance is far shorter than 4096 frames
        assert torch.all(batch["mel"][:, -1, :] == 0)


class TestCheckpointing:
    def test_round_trip(self, tmp_path):
        state, model_cfg = tiny_state(seed=4)
        train_step(random_batch(), state)
        path = save_checkpoint(tmp_path / "ck.pt", state, model_cfg, ResampleConfig())
        restored, cfg2, _ = restore_state(load_checkpoint(path))
        assert cfg2 == model_cfg
        assert restored.step == 1
        for (n1, p1), (n2, p2) in zip(state.model.named_parameters(),
                                      restored.model.named_parameters()):
            assert n1 == n2 and torch.equal(p1, p2)
        for (n1, p1), (n2, p2) in zip(state.mi_estimator.named_parameters(),
                                      restored.mi_estimator.named_parameters()):
            assert n1 == n2 and torch.equal(p1, p2)

    def test_versionless_file_refused(self, tmp_path):
        path = tmp_path / "bogus.pt"
        torch.save({"weights": 1}, path)
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)

    def test_garbage_file_refused(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestTrainLoop:
    def test_zero_steps_emits_init_checkpoint(self, toy_index, tmp_path):
        cfg = TrainConfig(max_steps=0, batch_size=2, crop_frames=64, seed=0)
        model_cfg = ModelConfig(num_speakers=2, **TINY_MODEL)
        final = train(cfg, model_cfg, toy_index, tmp_path / "run")
        assert final.exists()
        assert (tmp_path / "run" / "checkpoint_000000.pt").exists()
        payload = load_checkpoint(final)
        assert payload["step"] == 0

    def test_short_run_logs_every_step(self, toy_index, tmp_path):
        cfg = TrainConfig(max_steps=3, batch_size=2, crop_frames=64, seed=0,
                          lr=1e-3)
        model_cfg = ModelConfig(num_speakers=2, **TINY_MODEL)
        train(cfg, model_cfg, toy_index, tmp_path / "run")
        lines = (tmp_path / "run" / "train.log").read_text().strip().splitlines()
        assert len(lines) == 3
        for line in lines:
            fields = dict(kv.split("=") for kv in line.split())
            assert set(fields) == {"step", "s_recon", "p_recon", "com_cls",
                                   "adv_cls", "mi", "total", "qnet_nll"}
            expected = (float(fields["s_recon"]) + float(fields["p_recon"])
                        + cfg.alpha * float(fields["com_cls"])
                        + cfg.beta * float(fields["adv_cls"])
                        + cfg.gamma * float(fields["mi"]))
            assert abs(float(fields["total"]) - expected) < 1e-4

    def test_resume_matches_uninterrupted(self, toy_index, tmp_path):
        cfg = TrainConfig(max_steps=6, batch_size=2, crop_frames=64, seed=5,
                          lr=1e-3, checkpoint_every=3)
        model_cfg = ModelConfig(num_speakers=2, **TINY_MODEL)
        final_a = train(cfg, model_cfg, toy_index, tmp_path / "solid")
        mid = tmp_path / "solid" / "checkpoint_000003.pt"
        assert mid.exists()
        final_b = train(cfg, model_cfg, toy_index, tmp_path / "resumed",
                        resume_from=mid)
        a = load_checkpoint(final_a)["model_state"]
        b = load_checkpoint(final_b)["model_state"]
        assert a.keys() == b.keys()
        for key in a:
            assert torch.equal(a[key], b[key]), key

    def test_single_speaker_rejected(self, toy_index, tmp_path):
        import dataclasses
        lone = dataclasses.replace(toy_index, num_speakers=1)
        cfg = TrainConfig(max_steps=1, crop_frames=64)
        model_cfg = ModelConfig(num_speakers=1, d_r=2, d_p=8, d_c=4, d_t=16,
                                conv_channels=32, conv_layers=1, crop_frames=64)
        with pytest.raises(ValueError, match="2 speakers"):
            train(cfg, model_cfg, lone, tmp_path / "run")


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        cfg = TrainConfig(alpha=0.2, max_steps=7, seed=9)
        model_cfg = ModelConfig(num_speakers=3, **TINY_MODEL)
        rr = ResampleConfig(seg_min_frames=10, seg_max_frames=20)
        path = tmp_path / "run.yaml"
        write_config_file(path, cfg, model_cfg, rr)
        t2, m2, r2 = read_config_file(path)
        assert t2 == cfg and m2 == model_cfg and r2 == rr

    def test_speaker_count_fill_in(self, tmp_path):
        path = tmp_path / "run.yaml"
        write_config_file(path, TrainConfig())
        t2, m2, r2 = read_config_file(path, num_speakers=5)
        assert m2.num_speakers == 5
        assert r2 == ResampleConfig()

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("train.warp_speed: 9\n")
        with pytest.raises(ValueError, match="warp_speed"):
            read_config_file(path, num_speakers=2)

    def test_non_flat_rejected(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("train:\n  alpha: 0.1\n")
        with pytest.raises(ValueError):
            read_config_file(path, num_speakers=2)
