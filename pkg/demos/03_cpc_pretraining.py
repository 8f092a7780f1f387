"""Pre-train a small CPC model on pitch glides and watch infoNCE fall.

The encoder downsamples raw 16 kHz audio by 160x into latent vectors; the
GRU summarizes the past into a context; per-horizon heads predict future
latents. The loss is the cross-entropy of picking the true future latent
among negatives sampled from the same sequence, so chance level is
ln(1 + negatives).
"""

import numpy as np

from cpcser.cpc import CpcConfig, CpcModel, aggregate, encode, info_nce_loss
from cpcser.optim import Adam

SAMPLE_RATE = 16000


def glide(rng, seconds=2.0):
    n = int(seconds * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    f_start, f_end = np.exp(rng.uniform(np.log(120.0), np.log(1200.0), size=2))
    freq = f_start * (f_end / f_start) ** (t / t[-1])
    phase = 2 * np.pi * np.cumsum(freq) / SAMPLE_RATE
    return 0.1 * (np.sin(phase) + 0.5 * np.sin(2 * phase)) \
        + 0.005 * rng.standard_normal(n)


def main():
    rng = np.random.default_rng(0)
    clips = np.stack([glide(rng) for _ in range(8)])

    config = CpcConfig(encoder_channels=16, latent_dim=16, gru_hidden=24,
                       horizon=3, negatives=12)
    model = CpcModel(config, seed=2)
    opt = Adam(model.parameters(), lr=2e-3)

    chance = np.log(config.negatives + 1)
    print(f"chance level: ln({config.negatives + 1}) = {chance:.3f}\n")
    for step in range(150):
        z = encode(clips, model)
        c = aggregate(z, model)
        loss = info_nce_loss(z, c, model, sampler_seed=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 25 == 0 or step == 149:
            print(f"step {step:3d}  infoNCE {loss.item():.3f}")

    print("\nthe model now identifies true future latents well above chance")


if __name__ == "__main__":
    main()
