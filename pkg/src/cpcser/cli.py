"""Command-line entry point.

Subcommands: synth-corpus, pretrain, train, evaluate, extract-features,
export-embeddings, report. A JSON config file is the source of truth for
training runs; flags override individual fields. Every command exits
nonzero with a one-line diagnostic on stderr when something goes wrong.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .audio import (
    SynthConfig, SynthFamily, fix_length, read_wav, write_corpus,
    write_feature_file,
)
from .checkpoint import load_cpc_model, load_recognizer
from .cpc import extract_features
from .harness import (
    ExperimentConfig, RunRecord, load_corpus, pretrain_cpc, run_setup,
)
from .metrics import (
    CccReport, aggregate_runs, format_table, read_report_csv, write_report_csv,
)
from .recognizer import forward_batch
from . import tensor as T

log = logging.getLogger("cpcser")

SETUP_ORDER = ("Sup", "JointCPC", "MiniCPC", "PreCPC")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cpcser",
        description="CPC speech representation pre-training and dimensional "
                    "emotion recognition experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="render a synthetic labeled corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=64, help="number of utterances")
    p.add_argument("--duration-min", type=float, default=2.0, help="shortest clip, seconds")
    p.add_argument("--duration-max", type=float, default=12.0, help="longest clip, seconds")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--folds", type=int, default=0, help="emit fold0..foldN-1 splits instead of train/val/test")
    p.add_argument("--families", type=int, default=1, help="number of distinct signal families")
    p.add_argument("--label-noise", type=float, default=0.02, help="stddev of label jitter")

    p = sub.add_parser("pretrain", help="CPC pre-training with infoNCE")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--manifest", default=None, help="override the pretraining corpus manifest")
    p.add_argument("--out", default=None, help="checkpoint output path")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--steps", type=int, default=None, help="override pretrain step count")
    p.add_argument("--workdir", default=None, help="run output root")

    p = sub.add_parser("train", help="run the configured setup over all seeds")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int, default=None, help="replace the seed list with one seed")
    p.add_argument("--epochs", type=int, default=None, help="override epoch count")
    p.add_argument("--workdir", default=None, help="run output root")

    p = sub.add_parser("evaluate", help="CCC report for a trained recognizer")
    p.add_argument("--checkpoint", required=True, help="recognizer checkpoint")
    p.add_argument("--manifest", required=True, help="corpus manifest to score")
    p.add_argument("--cpc-checkpoint", default=None, help="CPC checkpoint for feature extraction")
    p.add_argument("--split", default="test", help="which split to score")
    p.add_argument("--seconds", type=float, default=10.0, help="fixed utterance length")

    p = sub.add_parser("extract-features", help="dump CPC context features per utterance")
    p.add_argument("--checkpoint", required=True, help="CPC checkpoint")
    p.add_argument("--manifest", required=True, help="corpus manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seconds", type=float, default=10.0, help="fixed utterance length")

    p = sub.add_parser("export-embeddings", help="pooled utterance embeddings as CSV")
    p.add_argument("--checkpoint", required=True, help="CPC checkpoint")
    p.add_argument("--manifest", required=True, help="corpus manifest")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--seconds", type=float, default=10.0, help="fixed utterance length")

    p = sub.add_parser("report", help="aggregate run records into the results table")
    p.add_argument("--records", default=None, help="directory of run record JSON files")
    p.add_argument("--from-csv", default=None, help="re-render a previously written report CSV")
    p.add_argument("--out", default=None, help="also write the table as CSV")

    return parser


def iter_flags():
    """Every option string of every subcommand (used for doc parity checks)."""
    parser = build_parser()
    flags = set()
    for action in parser._subparsers._group_actions[0].choices.values():
        for act in action._actions:
            for opt in act.option_strings:
                if opt.startswith("--"):
                    flags.add(opt)
    return sorted(flags)


# ---- command implementations ----

def cmd_synth_corpus(args):
    families = [SynthFamily() for _ in range(args.families)]
    if args.families == 2:
        # two well-separated signal families for embedding-space probes
        families = [
            SynthFamily(f0_range=(85.0, 110.0), noise_range=(0.0, 0.1)),
            SynthFamily(f0_range=(240.0, 310.0), noise_range=(0.0, 0.1)),
        ]
    cfg = SynthConfig(
        n_utterances=args.count,
        duration_range=(args.duration_min, args.duration_max),
        label_noise=args.label_noise,
        families=families,
    )
    manifest = write_corpus(args.out, cfg, seed=args.seed, folds=args.folds)
    print(manifest)


def _load_config(args):
    config = ExperimentConfig.from_json(args.config)
    if getattr(args, "workdir", None):
        config.workdir = args.workdir
    if getattr(args, "seed", None) is not None:
        config.seeds = [args.seed]
        config.repeats = 1
    if getattr(args, "epochs", None) is not None:
        config.epochs = args.epochs
    if getattr(args, "steps", None) is not None:
        config.pretrain_steps = args.steps
    return config


def cmd_pretrain(args):
    config = _load_config(args)
    manifest = args.manifest or config.pretrain_corpus or config.label_corpus
    seed = config.seeds[0]
    out = args.out or str(Path(config.workdir) / f"cpc_seed{seed}.ckpt")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    pretrain_cpc(config, manifest, seed, out,
                 log_path=str(Path(out).with_suffix(".jsonl")))
    print(out)


def cmd_train(args):
    config = _load_config(args)
    records = run_setup(config)
    reports = [r.test_report for r in records]
    row = {"method": config.setup, **aggregate_runs(reports)}
    print(format_table([row]))


def _features_for(recognizer, manifest, seconds, cpc_checkpoint):
    from .audio import AudioClip, compute_lfbe

    utts = load_corpus(manifest)
    waves = {u.id: fix_length(read_wav(u.path), seconds).samples for u in utts}
    if recognizer.config.input_dim == 40:
        feats = {uid: compute_lfbe(AudioClip(w)).frames for uid, w in waves.items()}
    else:
        if not cpc_checkpoint:
            raise ValueError(
                "recognizer expects CPC features; pass --cpc-checkpoint")
        cpc_model = load_cpc_model(cpc_checkpoint)
        feats = {uid: extract_features(w, cpc_model) for uid, w in waves.items()}
    return utts, feats


def cmd_evaluate(args):
    model = load_recognizer(args.checkpoint)
    utts, feats = _features_for(model, args.manifest, args.seconds,
                                args.cpc_checkpoint)
    ids = [u.id for u in utts if args.split in ("all", u.split)]
    if len(ids) < 2:
        raise ValueError(f"split '{args.split}' has fewer than 2 utterances")
    with T.no_grad():
        preds = forward_batch([feats[u] for u in ids], model)
    labels = np.stack([u.labels for u in utts if u.id in set(ids)])
    report = CccReport.from_arrays(preds.data, labels)
    print(json.dumps(report.as_dict(), sort_keys=True))


def cmd_extract_features(args):
    cpc_model = load_cpc_model(args.checkpoint)
    utts = load_corpus(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for u in utts:
        wave = fix_length(read_wav(u.path), args.seconds).samples
        write_feature_file(out_dir / f"{u.id}.f32", extract_features(wave, cpc_model))
    print(out_dir)


def cmd_export_embeddings(args):
    from .audio import read_manifest

    cpc_model = load_cpc_model(args.checkpoint)
    records = read_manifest(args.manifest)
    if not records:
        raise ValueError(f"{args.manifest}: empty manifest")
    dim = cpc_model.config.gru_hidden
    extra_keys = [k for k in ("family", "category") if k in records[0]]
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = (["id", "activation", "valence", "dominance"] + extra_keys
                  + [f"e{i}" for i in range(dim)])
        writer.writerow(header)
        for rec in records:
            wave = fix_length(read_wav(rec["path"]), args.seconds).samples
            emb = extract_features(wave, cpc_model).mean(axis=0)
            row = [rec["id"], repr(rec.get("activation", 0.0)),
                   repr(rec.get("valence", 0.0)), repr(rec.get("dominance", 0.0))]
            row += [rec[k] for k in extra_keys]
            row += [repr(float(v)) for v in emb]
            writer.writerow(row)
    print(out_path)


def collect_report_rows(records_dir):
    paths = sorted(Path(records_dir).rglob("record.json"))
    if not paths:
        raise ValueError(f"{records_dir}: no run records found")
    by_setup = {}
    for p in paths:
        record = RunRecord.load(p)
        by_setup.setdefault(record.setup, []).append(record.test_report)
    rows = []
    for setup in SETUP_ORDER:
        if setup in by_setup:
            rows.append({"method": setup, **aggregate_runs(by_setup[setup])})
    return rows


def cmd_report(args):
    if args.from_csv:
        rows = read_report_csv(args.from_csv)
    elif args.records:
        rows = collect_report_rows(args.records)
    else:
        raise ValueError("report needs --records or --from-csv")
    print(format_table(rows))
    if args.out:
        write_report_csv(args.out, rows)


COMMANDS = {
    "synth-corpus": cmd_synth_corpus,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "extract-features": cmd_extract_features,
    "export-embeddings": cmd_export_embeddings,
    "report": cmd_report,
}


def main(argv=None):
    level = os.environ.get("CPCSER_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"cpcser {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
