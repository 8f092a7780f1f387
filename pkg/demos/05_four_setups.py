"""Compare the four experimental setups at desk scale.

Sup trains the recognizer on LFBE. JointCPC trains CPC and recognizer
end-to-end with a combined CCC + infoNCE loss. MiniCPC pre-trains CPC on
the labeled corpus audio, then trains the recognizer on frozen contexts.
PreCPC pre-trains on a larger unlabeled corpus first. At this miniature
scale the numbers are noisy; the point is that all four paths run end to
end and produce comparable reports.
"""

from pathlib import Path

from cpcser.audio import SynthConfig, write_corpus
from cpcser.cpc import CpcConfig
from cpcser.harness import RUNNERS, ExperimentConfig
from cpcser.metrics import aggregate_runs, format_table

OUT = Path(__file__).parent / "out" / "four_setups"


def main():
    label = write_corpus(
        OUT / "label",
        SynthConfig(n_utterances=24, duration_range=(0.6, 1.2),
                    label_noise=0.01),
        seed=11, fractions=(0.5, 0.2, 0.3))
    pretrain = write_corpus(
        OUT / "pretrain",
        SynthConfig(n_utterances=48, duration_range=(0.6, 1.2)),
        seed=12)

    rows = []
    for setup in ("Sup", "JointCPC", "MiniCPC", "PreCPC"):
        config = ExperimentConfig(
            setup=setup,
            label_corpus=str(label),
            pretrain_corpus=str(pretrain) if setup == "PreCPC" else None,
            workdir=str(OUT / "runs"),
            epochs=15, batch_size=4, lr=2e-3, seeds=[0],
            utterance_seconds=1.0, pretrain_steps=120, pretrain_batch_size=8,
            cpc=CpcConfig(encoder_channels=16, latent_dim=16, gru_hidden=24,
                          horizon=3, negatives=12),
            recognizer=dict(n_heads=2, d_model=32, dense_hidden=16,
                            dropout_p=0.1),
        )
        record = RUNNERS[setup](config, seed=0)
        rows.append({"method": setup, **aggregate_runs([record.test_report])})
        print(f"{setup}: best epoch {record.best_epoch}, "
              f"val loss {record.val_loss:.3f}")

    print()
    print(format_table(rows))


if __name__ == "__main__":
    main()
