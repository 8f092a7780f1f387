"""Self-supervised speech representation learning and dimensional emotion
recognition: CPC pre-training, an attention-based recognizer, and a
desk-scale experiment harness over synthetic corpora."""

__version__ = "0.1.0"
