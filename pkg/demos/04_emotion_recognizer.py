"""Train the attention recognizer on LFBE features of a synthetic corpus.

The recognizer projects each frame, runs multi-head self-attention over
time, pools with [mean; std], and regresses activation/valence/dominance
with a CCC loss. This is the supervised ("Sup") setup of the harness.
"""

import json
from pathlib import Path

from cpcser.audio import SynthConfig, write_corpus
from cpcser.cpc import CpcConfig
from cpcser.harness import ExperimentConfig, run_sup
from cpcser.metrics import aggregate_runs, format_table

OUT = Path(__file__).parent / "out" / "recognizer"


def main():
    corpus = write_corpus(
        OUT / "corpus",
        SynthConfig(n_utterances=24, duration_range=(0.6, 1.2),
                    label_noise=0.01),
        seed=5, fractions=(0.5, 0.2, 0.3))

    config = ExperimentConfig(
        setup="Sup", label_corpus=str(corpus), workdir=str(OUT / "runs"),
        epochs=15, batch_size=4, lr=2e-3, seeds=[0], utterance_seconds=1.0,
        cpc=CpcConfig(encoder_channels=8, latent_dim=8, gru_hidden=12,
                      horizon=2, negatives=5),
        recognizer=dict(n_heads=2, d_model=32, dense_hidden=16, dropout_p=0.1),
    )
    record = run_sup(config, seed=0)

    print(f"best epoch {record.best_epoch}, validation loss {record.val_loss:.3f}")
    print("\nper-epoch log:")
    for line in Path(record.log).read_text().splitlines()[::3]:
        entry = json.loads(line)
        print(f"  epoch {entry['epoch']:2d}  val CCC {entry['val_ccc_avg']:+.3f}")

    print("\ntest results:")
    print(format_table([{"method": "Sup",
                         **aggregate_runs([record.test_report])}]))


if __name__ == "__main__":
    main()
