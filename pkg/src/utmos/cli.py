"""Command-line entry point: ``utmos <subcommand> ...``.

Exit status 0 on success, 2 for usage problems (bad flags, missing files,
schema or config violations) and 1 for runtime failures. Failures print one
``error: kind=<type> message=<text>`` line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys

import joblib
import numpy as np
import yaml

from . import config as cfgmod
from .augment import AugmentConfig, augment, sample_augmentation
from .dataset import (
    SAMPLE_RATE,
    load_dataset,
    load_waveforms,
    mean_listener_targets,
    prepare_audio,
    write_predictions,
    write_wav,
)
from .errors import (
    ConfigurationError,
    CoverageError,
    DatasetError,
    ScoreRangeError,
    TranscriptLookupError,
    VocabularyError,
)
from .metrics import evaluate
from .pipeline import _lookup_backend, build_plan, load_run_dataset, run_extract_embeddings, run_train_strong
from .stacking import StageScores, fit_stack, stack_predict
from .strong import StrongCheckpoint
from .textproc import PhonemeProvider, extract_references, read_references, read_transcripts, write_references
from .weak import build_learner_bank, domain_ids, predict_weak, read_embeddings, train_weak, write_embeddings

USAGE_ERRORS = (FileNotFoundError, IsADirectoryError, DatasetError, ConfigurationError, ScoreRangeError,
                VocabularyError, TranscriptLookupError, CoverageError, yaml.YAMLError)


def _load(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfgmod.RunConfig(**{**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__}, "seed": args.seed})
    return cfg


def cmd_train_strong(args) -> None:
    cfg = _load(args)
    ckpt = run_train_strong(cfg)
    ckpt.save(args.out)
    print(f"step={ckpt.step} dev_system_srcc={ckpt.dev_system_srcc:.6f} checkpoint={args.out}")


def cmd_infer(args) -> None:
    ckpt = StrongCheckpoint.load(args.ckpt)
    scorer = ckpt.to_scorer()
    ds = load_dataset(args.ratings, args.audio_dir, split="infer")
    ids = ds.ids()
    waves = load_waveforms(ds, ids)
    ph = rf = None
    if scorer.model.phoneme_encoder is not None:
        if not args.transcripts:
            raise ConfigurationError("checkpoint uses a phoneme encoder; pass --transcripts")
        provider = PhonemeProvider.from_file(args.transcripts)
        if args.references:
            refs = {r.utterance_id: r.reference for r in read_references(args.references)}
        else:
            refs = {r.utterance_id: r.reference for r in extract_references(provider.records(), args.eps, args.min_pts)}
        ph = [provider(u) for u in ids]
        rf = [refs[u] for u in ids]
    preds = scorer.predict_waves([waves[u] for u in ids], [ds.utterance(u).domain_id for u in ids], ph, rf)
    write_predictions(args.out, dict(zip(ids, preds)))
    print(f"wrote {len(ids)} predictions to {args.out}")


def cmd_extract_embeddings(args) -> None:
    cfg = _load(args)
    ds = load_run_dataset(cfg)
    tables = run_extract_embeddings(cfg, ds, backends=args.backend or None)
    write_embeddings(args.out, tables)
    print(f"wrote {sum(len(t) for t in tables.values())} embeddings for {len(tables)} backend(s) to {args.out}")


def cmd_train_weak(args) -> None:
    cfg = _load(args)
    ds = load_run_dataset(cfg)
    tables = read_embeddings(args.embeddings)
    targets = mean_listener_targets(ds, ds.ids("train"))
    fitted = []
    columns = []
    for spec in build_learner_bank(cfg.weak.backends, cfg.weak.methods, cfg.weak.domains, cfg.weak.hyperparams):
        table = _lookup_backend(tables, spec.backend_id)
        ids = domain_ids(ds, "train", spec.domain_tag)
        model = train_weak(spec, table, {u: targets[u] for u in ids}, cfgmod.sub_seed(cfg.seed, f"weak:{spec.name}"))
        fitted.append(model)
        if args.predictions and "test" in ds.splits:
            columns.append([p.score for p in predict_weak(model, table, ds.ids("test"))])
    joblib.dump(fitted, args.out)
    if args.predictions and columns:
        StageScores(ds.ids("test"), [m.name for m in fitted], np.column_stack(columns)).to_csv(args.predictions)
    print(f"fitted {len(fitted)} weak learner(s) -> {args.out}")


def cmd_cluster_refs(args) -> None:
    records = read_transcripts(args.transcripts)
    refs = extract_references(records, args.eps, args.min_pts)
    write_references(args.out, refs)
    n_clusters = len({r.cluster_id for r in refs if r.cluster_id >= 0})
    n_noise = sum(r.cluster_id < 0 for r in refs)
    print(f"clusters={n_clusters} noise={n_noise} -> {args.out}")


def cmd_train_stack(args) -> None:
    cfg = cfgmod.load_config(args.plan)
    if args.seed is not None:
        cfg = cfgmod.RunConfig(**{**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__}, "seed": args.seed})
    ds = load_run_dataset(cfg)
    waves = load_waveforms(ds)
    embeddings = read_embeddings(args.embeddings) if args.embeddings else None
    plan = build_plan(cfg, ds, waves, embeddings)
    train_ids = ds.ids("train")
    fitted = fit_stack(plan, train_ids, mean_listener_targets(ds, train_ids))
    split_ids = {name: ds.ids(name) for name in ds.splits}
    joblib.dump({"fitted": fitted, "split_ids": split_ids}, args.out)
    if args.scores:
        fitted.stage1_scores.to_csv(args.scores)
    print(f"stacked {len(plan.learners)} stage-1 learner(s) -> {args.out}")


def cmd_stack_predict(args) -> None:
    bundle = joblib.load(args.stack)
    ids = bundle["split_ids"].get(args.split)
    if ids is None:
        raise ConfigurationError(f"split {args.split!r} not in the stacked dataset ({sorted(bundle['split_ids'])})")
    write_predictions(args.out, stack_predict(bundle["fitted"], ids))
    print(f"wrote {len(ids)} predictions to {args.out}")


def cmd_evaluate(args) -> None:
    report = evaluate(args.pred, args.ratings)
    print(report.as_table())
    print()
    print("\n".join(report.as_lines()))


def cmd_augment_preview(args) -> None:
    wave = prepare_audio(args.input)
    cfg = AugmentConfig(f_t=args.f_t, f_p=args.f_p)
    rng = np.random.default_rng(args.seed)
    f_t, f_p = sample_augmentation(cfg, np.random.default_rng(args.seed))
    out = augment(wave, cfg, rng)
    write_wav(args.output, out, SAMPLE_RATE)
    print(f"f_t={f_t:.4f} f_p={f_p:.1f} samples_in={wave.size} samples_out={out.size}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="utmos", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    raw = argparse.RawDescriptionHelpFormatter

    def add(name, fn, help, keys=()):
        p = sub.add_parser(name, help=help, description=help,
                           epilog=cfgmod.describe_keys(*keys) if keys else None, formatter_class=raw)
        p.set_defaults(func=fn)
        return p

    p = add("train-strong", cmd_train_strong, "train a strong learner and write its checkpoint",
            ("seed", "data", "strong", "augment", "textproc"))
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="strong.ckpt.json")

    p = add("infer", cmd_infer, "predict MOS for the utterances of a ratings CSV with a strong checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ratings", required=True)
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--transcripts")
    p.add_argument("--references")
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--min-pts", type=int, default=2)
    p.add_argument("--out", default="predictions.csv")

    p = add("extract-embeddings", cmd_extract_embeddings, "mean-pooled backend embeddings for every utterance",
            ("seed", "data", "weak"))
    p.add_argument("--config", required=True)
    p.add_argument("--backend", action="append", help="backend id; repeatable; defaults to weak.backends")
    p.add_argument("--out", default="embeddings.csv")

    p = add("train-weak", cmd_train_weak, "fit the weak-learner bank on the train split",
            ("seed", "data", "weak"))
    p.add_argument("--config", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="weak.joblib")
    p.add_argument("--predictions", help="write per-learner test-split predictions here")

    p = add("cluster-refs", cmd_cluster_refs, "cluster ASR transcripts and write reference sequences",
            ("textproc",))
    p.add_argument("--transcripts", required=True)
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--min-pts", type=int, default=2)
    p.add_argument("--out", default="references.tsv")

    p = add("train-stack", cmd_train_stack, "fit stages 1-3 of the stacking ensemble",
            ("seed", "data", "strong", "augment", "textproc", "weak", "stacking"))
    p.add_argument("--plan", required=True, help="run config holding the stacking section")
    p.add_argument("--embeddings", help="precomputed embeddings CSV (extracted when absent)")
    p.add_argument("--seed", type=int)
    p.add_argument("--scores", help="write stage-1 out-of-fold scores CSV here")
    p.add_argument("--out", default="stack.joblib")

    p = add("stack-predict", cmd_stack_predict, "final stacked predictions for one split")
    p.add_argument("--stack", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default="predictions.csv")

    p = add("evaluate", cmd_evaluate, "utterance- and system-level MSE/LCC/SRCC/KTAU")
    p.add_argument("--pred", required=True)
    p.add_argument("--ratings", required=True)

    p = add("augment-preview", cmd_augment_preview, "write one randomly augmented copy of a WAV file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--f-t", type=float, default=0.1)
    p.add_argument("--f-p", type=float, default=300.0)
    p.add_argument("input")
    p.add_argument("output")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: kind={type(exc).__name__} message={exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: kind={type(exc).__name__} message={exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
