import numpy as np
import pytest
import torch

from factorvc.conversion import (
    ASPECTS,
    ConversionRequest,
    convert,
    load_converter,
    synthesize_audio,
)
from factorvc.features import (
    MelSpectrogram,
    NormalizedPitchContour,
    Waveform,
    compute_mel,
)
from factorvc.model import ModelConfig, build_model

CFG = ModelConfig(num_speakers=2, d_r=2, d_p=8, d_c=4, d_t=16,
                  conv_channels=32, conv_layers=1, bilstm_layers=1,
                  crop_frames=64)


def fake_utterance(frames, seed):
    rng = np.random.default_rng(seed)
    mel = MelSpectrogram(rng.normal(-5.0, 3.0, (frames, 80)))
    values = rng.normal(0.0, 1.0, frames)
    voiced = rng.random(frames) < 0.8
    values[~voiced] = 0.0
    pitch = NormalizedPitchContour(values=values, voiced=voiced)
    return mel, pitch


@pytest.fixture(scope="module")
def model():
    return build_model(CFG, seed=0).eval()


@pytest.fixture(scope="module")
def utterances():
    src = fake_utterance(90, seed=1)   # shorter than one crop
    tgt = fake_utterance(150, seed=2)  # spans two padded crops
    return src, tgt


class TestRequestValidation:
    def test_unknown_aspect_rejected(self, utterances):
        (src_mel, src_pitch), _ = utterances
        with pytest.raises(ValueError, match="unknown aspects"):
            ConversionRequest(src_mel, src_pitch, aspects={"accent"})

    def test_missing_target_mel_rejected(self, utterances):
        (src_mel, src_pitch), _ = utterances
        for aspect in ("timbre", "rhythm"):
            with pytest.raises(ValueError, match="target mel"):
                ConversionRequest(src_mel, src_pitch, aspects={aspect})

    def test_missing_target_pitch_rejected(self, utterances):
        (src_mel, src_pitch), (tgt_mel, _) = utterances
        with pytest.raises(ValueError, match="pitch"):
            ConversionRequest(src_mel, src_pitch, target_mel=tgt_mel,
                              aspects={"pitch"})

    def test_frame_mismatch_rejected(self, utterances):
        (src_mel, _), _ = utterances
        bad_pitch = NormalizedPitchContour(values=np.zeros(7),
                                           voiced=np.zeros(7, bool))
        with pytest.raises(ValueError, match="frame counts"):
            ConversionRequest(src_mel, bad_pitch)

    def test_no_model_no_checkpoint_rejected(self, utterances):
        (src_mel, src_pitch), _ = utterances
        req = ConversionRequest(src_mel, src_pitch)
        with pytest.raises(ValueError, match="checkpoint"):
            convert(req)

    def test_missing_checkpoint_file_rejected(self, utterances, tmp_path):
        (src_mel, src_pitch), _ = utterances
        req = ConversionRequest(src_mel, src_pitch,
                                checkpoint=tmp_path / "missing.pt")
        with pytest.raises(ValueError):
            convert(req)


class TestConvert:
    def test_empty_aspects_is_source_reconstruction(self, model, utterances):
        (src_mel, src_pitch), _ = utterances
        req = ConversionRequest(src_mel, src_pitch)
        out = convert(req, model=model)
        assert out.num_frames == src_mel.num_frames
        # independent recomputation: encode padded source, trim, decode
        from factorvc.conversion import _encode_utterance, _fit_length
        from factorvc.model import LatentCodes
        codes = _encode_utterance(model, src_mel, src_pitch)
        t = src_mel.num_frames
        ref = LatentCodes(z_r=codes.z_r[:, :t],
                          z_p=_fit_length(codes.z_p, t),
                          z_c=_fit_length(codes.z_c, t),
                          z_t=codes.z_t)
        with torch.no_grad():
            expected = model.decode_speech(ref)[0].numpy()
        assert np.array_equal(out.frames, expected.astype(np.float64))

    def test_frame_count_rule_all_subsets(self, model, utterances):
        (src_mel, src_pitch), (tgt_mel, tgt_pitch) = utterances
        subsets = [set(), {"timbre"}, {"pitch"}, {"rhythm"},
                   {"timbre", "pitch"}, {"timbre", "rhythm"},
                   {"pitch", "rhythm"}, {"timbre", "pitch", "rhythm"}]
        for aspects in subsets:
            req = ConversionRequest(src_mel, src_pitch, tgt_mel, tgt_pitch,
                                    aspects=aspects)
            out, details = convert(req, model=model, return_details=True)
            expected_t = tgt_mel.num_frames if "rhythm" in aspects else src_mel.num_frames
            assert out.num_frames == expected_t
            assert details["frame_count"] == expected_t
            assert details["providers"]["content"] == "source"
            for aspect in ("timbre", "pitch", "rhythm"):
                expected_provider = "target" if aspect in aspects else "source"
                assert details["providers"][aspect] == expected_provider

    def test_unselected_aspects_use_source_codes(self, model, utterances):
        (src_mel, src_pitch), (tgt_mel, tgt_pitch) = utterances
        captured = {}
        real_decode = model.decode_speech

        def spy(codes):
            captured["codes"] = codes
            return real_decode(codes)

        from factorvc.conversion import _encode_utterance, _fit_length
        src_codes = _encode_utterance(model, src_mel, src_pitch)
        tgt_codes = _encode_utterance(model, tgt_mel, tgt_pitch)

        model.decode_speech = spy
        try:
            req = ConversionRequest(src_mel, src_pitch, tgt_mel, tgt_pitch,
                                    aspects={"timbre"})
            convert(req, model=model)
        finally:
            model.decode_speech = real_decode
        used = captured["codes"]
        t = src_mel.num_frames
        assert torch.equal(used.z_r, src_codes.z_r[:, :t])
        assert torch.equal(used.z_p, _fit_length(src_codes.z_p, t))
        assert torch.equal(used.z_c, _fit_length(src_codes.z_c, t))
        assert torch.equal(used.z_t, tgt_codes.z_t)

    def test_repeat_requests_bit_identical(self, model, utterances):
        (src_mel, src_pitch), (tgt_mel, tgt_pitch) = utterances
        req = ConversionRequest(src_mel, src_pitch, tgt_mel, tgt_pitch,
                                aspects={"timbre", "pitch", "rhythm"})
        a = convert(req, model=model)
        b = convert(req, model=model)
        assert np.array_equal(a.frames, b.frames)

    def test_checkpoint_round_trip(self, utterances, tmp_path):
        from factorvc.resample import ResampleConfig
        from factorvc.training import TrainConfig, TrainState, save_checkpoint
        from factorvc.mi import CodeMIEstimator
        model = build_model(CFG, seed=3)
        mi_est = CodeMIEstimator(CFG.d_r, CFG.d_p, CFG.d_c)
        state = TrainState(
            model=model, mi_estimator=mi_est,
            vc_optimizer=torch.optim.Adam(model.parameters()),
            q_optimizer=torch.optim.Adam(mi_est.parameters()),
            cfg=TrainConfig(crop_frames=64))
        path = save_checkpoint(tmp_path / "ck.pt", state, CFG, ResampleConfig())
        loaded = load_converter(path)
        (src_mel, src_pitch), _ = utterances
        req = ConversionRequest(src_mel, src_pitch)
        direct = convert(req, model=model.eval())
        via_ckpt = convert(req, model=loaded)
        assert np.array_equal(direct.frames, via_ckpt.frames)


class TestSynthesizeAudio:
    def test_sine_survives_round_trip(self):
        t = np.arange(16000) / 16000
        wave = Waveform(0.5 * np.sin(2 * np.pi * 440.0 * t))
        mel = compute_mel(wave)
        out = synthesize_audio(mel, iterations=24)
        spectrum = np.abs(np.fft.rfft(out.samples))
        freqs = np.fft.rfftfreq(len(out.samples), d=1 / 16000)
        dominant = freqs[np.argmax(spectrum)]
        assert abs(dominant - 440.0) <= 15.0

    def test_silence_yields_near_silence(self):
        import math
        from factorvc.features import LOG_FLOOR_EPS
        mel = MelSpectrogram(np.full((40, 80), math.log(LOG_FLOOR_EPS)))
        out = synthesize_audio(mel, iterations=4)
        rms = np.sqrt(np.mean(out.samples ** 2))
        assert rms < 1e-3

    def test_iterations_improve_consistency(self):
        t = np.arange(16000) / 16000
        wave = Waveform(0.4 * np.sin(2 * np.pi * 330.0 * t)
                        + 0.2 * np.sin(2 * np.pi * 660.0 * t))
        mel = compute_mel(wave)

        def reanalysis_error(iterations):
            out = synthesize_audio(mel, iterations=iterations)
            again = compute_mel(Waveform(out.samples[:len(wave.samples)]))
            frames = min(again.num_frames, mel.num_frames)
            # compare in linear power, where phase coherence shows up;
            # the log floor would otherwise drown the comparison
            diff = np.exp(again.frames[:frames]) - np.exp(mel.frames[:frames])
            return float(np.mean(diff ** 2))

        assert reanalysis_error(32) < reanalysis_error(0)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        mel = MelSpectrogram(rng.normal(-8, 2, (30, 80)))
        a = synthesize_audio(mel, iterations=8)
        b = synthesize_audio(mel, iterations=8)
        assert np.array_equal(a.samples, b.samples)
        assert a.sample_rate == 16000
