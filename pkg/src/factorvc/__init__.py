"""One-shot voice conversion through factored speech codes.

A mel spectrogram and its pitch contour are encoded into four codes —
rhythm, pitch, content, and a time-pooled timbre vector — and decoded
back; swapping a code between utterances converts that aspect alone.
Disentanglement is pushed by random resampling on the inputs, an
adversarial speaker classifier behind a gradient reversal layer, and a
sampled upper bound on the mutual information between the codes.
"""

__version__ = "0.1.0"

from .conversion import ConversionRequest, convert, load_converter, synthesize_audio
from .corpus import CorpusIndex, generate_toy_corpus, ingest_corpus, load_index
from .evaluation import MetricReport, embed_and_plot, logf0_pcc, mcd_dtw, mel_cepstra
from .features import (MelSpectrogram, NormalizedPitchContour, PitchContour,
                       Waveform, compute_mel, extract_pitch, load_waveform,
                       normalize_pitch, save_waveform)
from .mi import CodeMIEstimator, club_estimate
from .model import FactorModel, ModelConfig, build_model, grl_apply
from .resample import ResampleConfig, random_resample, segment_plan
from .training import TrainConfig, load_checkpoint, read_config_file, train, write_config_file

__all__ = [
    "ConversionRequest", "convert", "load_converter", "synthesize_audio",
    "CorpusIndex", "generate_toy_corpus", "ingest_corpus", "load_index",
    "MetricReport", "embed_and_plot", "logf0_pcc", "mcd_dtw", "mel_cepstra",
    "MelSpectrogram", "NormalizedPitchContour", "PitchContour", "Waveform",
    "compute_mel", "extract_pitch", "load_waveform", "normalize_pitch",
    "save_waveform",
    "CodeMIEstimator", "club_estimate",
    "FactorModel", "ModelConfig", "build_model", "grl_apply",
    "ResampleConfig", "random_resample", "segment_plan",
    "TrainConfig", "load_checkpoint", "read_config_file", "train",
    "write_config_file",
]
