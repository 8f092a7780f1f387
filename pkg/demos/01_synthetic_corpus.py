"""Render a small labeled synthetic corpus and look at what is in it.

The generator draws per-utterance parameters (fundamental frequency, RMS
level, spectral tilt, noise mix), renders a harmonic tone with slow
amplitude modulation, and derives activation/valence/dominance labels as
squashed linear functions of the log-parameters. The whole corpus is a
deterministic function of the seed.
"""

import json
from pathlib import Path

import numpy as np

from cpcser.audio import SynthConfig, read_wav, write_corpus

OUT = Path(__file__).parent / "out" / "corpus"


def main():
    config = SynthConfig(n_utterances=12, duration_range=(1.0, 3.0),
                         label_noise=0.02)
    manifest = write_corpus(OUT, config, seed=7, fractions=(0.6, 0.2, 0.2))
    print(f"wrote corpus under {OUT}\n")

    records = [json.loads(line) for line in Path(manifest).read_text().splitlines()]
    print(f"{'id':<10} {'split':<6} {'act':>6} {'val':>6} {'dom':>6}  duration")
    for rec in records:
        clip = read_wav(rec["path"])
        seconds = len(clip.samples) / clip.sample_rate
        print(f"{rec['id']:<10} {rec['split']:<6} "
              f"{rec['activation']:>6.2f} {rec['valence']:>6.2f} "
              f"{rec['dominance']:>6.2f}  {seconds:.2f}s")

    labels = np.array([[r["activation"], r["valence"], r["dominance"]]
                       for r in records])
    print("\nlabel means:", np.round(labels.mean(axis=0), 3))
    print("label stds: ", np.round(labels.std(axis=0), 3))


if __name__ == "__main__":
    main()
