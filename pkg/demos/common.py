"""Shared workspace helpers for the demo scripts.

Everything a demo produces lands under demos/output/.  The training demo
creates a small checkpoint that the conversion and evaluation demos reuse;
running those directly will train it on demand (a few seconds on CPU).
"""

from pathlib import Path

OUTPUT = Path(__file__).resolve().parent / "output"
CORPUS = OUTPUT / "corpus"
CACHE = OUTPUT / "cache"
RUN = OUTPUT / "run"


def toy_settings():
    from factorvc.model import ModelConfig
    from factorvc.training import TrainConfig
    train_cfg = TrainConfig(lr=2e-3, batch_size=8, max_steps=400, seed=11,
                            checkpoint_every=200, crop_frames=64)
    model_cfg = ModelConfig(num_speakers=2, d_r=2, d_p=8, d_c=4, d_t=16,
                            conv_channels=32, conv_layers=2, bilstm_layers=1,
                            crop_frames=64)
    return train_cfg, model_cfg


def ensure_corpus():
    from factorvc.corpus import generate_toy_corpus, ingest_corpus, load_index
    manifest = CACHE / "manifest.json"
    if manifest.exists():
        return load_index(manifest)
    print("building toy corpus (2 speakers x 6 utterances) ...")
    generate_toy_corpus(CORPUS, num_speakers=2, utterances_per_speaker=6,
                        seed=11, seconds_range=(1.4, 2.0))
    return ingest_corpus(CORPUS, (2, 0, 0), seed=11, cache_dir=CACHE)


def ensure_checkpoint():
    from factorvc.training import train
    final = RUN / "checkpoint_final.pt"
    if final.exists():
        return final
    index = ensure_corpus()
    train_cfg, model_cfg = toy_settings()
    print(f"training a small model for {train_cfg.max_steps} steps ...")
    return train(train_cfg, model_cfg, index, RUN, log_every=100)
