import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cpcser.audio import SynthConfig, write_corpus


@pytest.fixture(scope="session")
def label_corpus(tmp_path_factory):
    """Small labeled corpus with train/val/test splits (short clips)."""
    root = tmp_path_factory.mktemp("label_corpus")
    cfg = SynthConfig(n_utterances=16, duration_range=(0.4, 1.0), label_noise=0.01)
    return write_corpus(root, cfg, seed=100, fractions=(0.65, 0.15, 0.20))


@pytest.fixture(scope="session")
def folded_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("folded_corpus")
    cfg = SynthConfig(n_utterances=15, duration_range=(0.4, 1.0), label_noise=0.01)
    return write_corpus(root, cfg, seed=101, folds=5)


@pytest.fixture(scope="session")
def pretrain_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("pretrain_corpus")
    cfg = SynthConfig(n_utterances=12, duration_range=(0.4, 1.0))
    return write_corpus(root, cfg, seed=102)
