"""End-to-end training on a synthetic two-speaker corpus.

Generates toy speakers (distinct spectral rolloff and base pitch), caches
features, and runs a few hundred optimizer steps of the full objective:
both reconstructions, the speaker classifier on the timbre code, the
adversarial classifier on the other codes, and the mutual-information
penalty.  Prints the loss trajectory and where the artifacts live.
"""

from common import RUN, ensure_corpus, toy_settings
from factorvc.training import train


def main():
    index = ensure_corpus()
    speakers = sorted({e.speaker for e in index.entries})
    print(f"corpus: {len(index.entries)} utterances from {speakers}")

    train_cfg, model_cfg = toy_settings()
    final = train(train_cfg, model_cfg, index, RUN, log_every=50)
    print(f"\nfinal checkpoint: {final}")

    log = (RUN / "train.log").read_text().strip().splitlines()
    print("loss trajectory (every 100th step):")
    for line in log[::100] + [log[-1]]:
        print(f"  {line}")


if __name__ == "__main__":
    main()
