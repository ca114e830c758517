#!/usr/bin/env python3
"""
Command-line pipeline for the sparse sentence VAE family.

Usage:
    python -m hsvae synth --classes 2 --seed 7 --out ./runs/desk
    python -m hsvae train --out ./runs/desk --variant HSVAE --alpha 8 --beta 2
    python -m hsvae eval-hoyer --out ./runs/desk
    python -m hsvae classify --out ./runs/desk --samples 5
    python -m hsvae analyze-gamma --out ./runs/desk
    python -m hsvae class-kl --out ./runs/desk
    python -m hsvae gradcheck --out ./runs/gradcheck

Every subcommand reads an optional --config file (INI sections [model],
[train], [classifier], [synth], [data]); flags override file values. All
randomness flows from --seed through derived streams (seed XOR a BLAKE2b tag
of the stream purpose). Exit status: 0 ok, 1 contract error, 2 numeric error.
"""

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from .analysis import (
    class_kl_matrix,
    gamma_class,
    mean_off_diagonal,
    pattern_distance_matrix,
    spearman_link,
    write_class_kl_csv,
    write_gamma_class_csv,
)
from .classify import simple_classifier, train_classifier
from .config import RunConfig, Variant, load_run_config, update_run_config, write_ini
from .diffcore.rng import RngStream
from .diffcore.tensor import default_dtype
from .errors import ContractError, NumericError
from .gradcheck import GROUPS as GRADCHECK_GROUPS, run_suite
from .metrics import MODES, ReconstructionReport, average_hoyer, write_codes_csv
from .model.checkpoint import checkpoint_id, load_checkpoint
from .model.network import TextVAE
from .textdata import (
    LabeledCorpus,
    Splits,
    Vocab,
    build_vocab,
    clean_line,
    corpus_stats,
    encode_corpus,
    load_corpus,
    make_batch,
    preprocess,
    read_corpus_file,
    split_per_class,
    synth_generate,
    write_corpus_file,
    write_jsonl,
)
from .training import evaluate, fit

logger = logging.getLogger(__name__)

VOCAB_FILE = "vocab.txt"
MODEL_FILE = "model.ckpt"


# Argument plumbing

def _config_flag(parser: argparse.ArgumentParser, flag: str, key: str, help: str, **kwargs) -> None:
    """Add a flag that overrides config key `key`; the key is shown in --help."""
    dest = key.replace(".", "__")
    parser.add_argument(flag, dest=dest, default=None, help=f"{help} (config: {key})", **kwargs)
    keys = parser.get_default("config_keys") or []
    parser.set_defaults(config_keys=keys + [key])


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {key: getattr(args, key.replace(".", "__")) for key in (args.config_keys or [])}
    if args.seed is not None:
        overrides["train.seed"] = args.seed
        overrides["synth.seed"] = args.seed
    return overrides


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ContractError(f"{what} not found: {path}")
    return path


def _dtype(run: RunConfig):
    return np.float64 if run.train.dtype == "float64" else np.float32


def _vocab_path(args: argparse.Namespace, corpus: Path) -> Path:
    return Path(args.vocab) if getattr(args, "vocab", None) else corpus.parent / VOCAB_FILE


def _load_labeled(path: Path, vocab: Vocab, run: RunConfig) -> LabeledCorpus:
    return load_corpus(str(path), vocab=vocab, labeled=True, max_length=run.data.max_length)


def _load_model(path: Path, vocab: Vocab, run: RunConfig) -> TextVAE:
    ckpt = load_checkpoint(str(path))
    if ckpt.vocab_size != len(vocab):
        raise ContractError(f"checkpoint {path} has vocab_size {ckpt.vocab_size}, vocab file has {len(vocab)}")
    return ckpt.build_model(_dtype(run))


def _banner(title: str, lines: Sequence[str], next_step: Optional[str] = None) -> None:
    logger.info("=" * 60)
    logger.info(title)
    logger.info("=" * 60)
    for line in lines:
        logger.info(line)
    if next_step:
        logger.info("")
        logger.info(f"Next step: {next_step}")


def _write_splits(out: Path, splits: Splits) -> None:
    for name in ("train", "dev", "test"):
        part: LabeledCorpus = getattr(splits, name)
        write_corpus_file(str(out / f"{name}.txt"), part.tokens(), part.labels)
    write_jsonl(str(out / "splits.jsonl"), splits.manifest)


def _synth_splits(run: RunConfig) -> Tuple[LabeledCorpus, Splits]:
    """Synthetic corpus and its 80/10/10 per-class split."""
    spec = run.synth
    corpus = synth_generate(spec)
    eval_n = max(1, spec.sentences_per_class // 10)
    train_n = spec.sentences_per_class - 2 * eval_n
    if train_n < 1:
        raise ContractError(f"synth.sentences_per_class={spec.sentences_per_class} is too small to split")
    return corpus, split_per_class(corpus, train_n, eval_n, seed=spec.seed)


# Subcommands

def cmd_preprocess(args: argparse.Namespace, run: RunConfig, out: Path) -> None:
    source = _require_file(Path(args.input), "input file")
    data = run.data
    lines, labels = read_corpus_file(str(source), labeled=not args.unlabeled)
    result = preprocess(lines, labels, max_length=data.max_length, pretokenized=data.pretokenized)
    vocab = build_vocab(result.sentences, cap=data.vocab_cap)
    corpus = encode_corpus(result, vocab)

    out.mkdir(parents=True, exist_ok=True)
    write_corpus_file(str(out / "corpus.txt"), result.sentences, result.labels)
    vocab.save(str(out / VOCAB_FILE))
    lines_out = [
        f"Sentences: {len(corpus)} (dropped {result.dropped}, truncated {result.truncated})",
        f"Vocabulary: {len(vocab)} ids including reserved",
    ]
    if corpus.labeled and not args.no_split:
        splits = split_per_class(corpus, data.train_per_class, data.eval_per_class, seed=run.train.seed)
        _write_splits(out, splits)
        lines_out.append(f"Splits: train={len(splits.train)} dev={len(splits.dev)} test={len(splits.test)}")
    lines_out.append(f"Output: {out}")
    _banner("PREPROCESSING COMPLETE", lines_out, f"python -m hsvae train --out {out}")


def cmd_synth(args: argparse.Namespace, run: RunConfig, out: Path) -> None:
    corpus, splits = _synth_splits(run)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus_file(str(out / "corpus.txt"), corpus.tokens(), corpus.labels)
    corpus.vocab.save(str(out / VOCAB_FILE))
    _write_splits(out, splits)
    _banner("SYNTHETIC CORPUS GENERATED", [
        f"Classes: {run.synth.num_classes} x {run.synth.sentences_per_class} sentences",
        f"Shared fraction: {run.synth.shared_fraction}",
        f"Vocabulary: {len(corpus.vocab)} ids including reserved",
        f"Splits: train={len(splits.train)} dev={len(splits.dev)} test={len(splits.test)}",
        f"Output: {out}",
    ], f"python -m hsvae train --out {out}")


def cmd_train(args: argparse.Namespace, run: RunConfig, out: Path) -> None:
    corpus_path = _require_file(Path(args.corpus) if args.corpus else out / "train.txt", "training corpus")
    vocab = Vocab.load(str(_require_file(_vocab_path(args, corpus_path), "vocab file")))
    dev_path = Path(args.dev) if args.dev else corpus_path.parent / "dev.txt"
    resume_path = _require_file(Path(args.resume), "checkpoint") if args.resume else None

    corpus = _load_labeled(corpus_path, vocab, run)
    dev = _load_labeled(dev_path, vocab, run) if dev_path.is_file() else None
    out.mkdir(parents=True, exist_ok=True)
    with default_dtype(_dtype(run)):
        resume = None
        if resume_path is not None:
            resume = load_checkpoint(str(resume_path))
            model = _load_model(resume_path, vocab, run)
        else:
            model = TextVAE(run.model, len(vocab), rng=RngStream(run.train.seed).derive("init"))
        result = fit(model, corpus, run.train, log_path=str(out / "train_log.jsonl"),
                     checkpoint_dir=str(out / "checkpoints"), dev_corpus=dev, resume=resume,
                     progress=True)
    if result.final_checkpoint:
        shutil.copyfile(result.final_checkpoint, out / MODEL_FILE)
    write_ini(run, str(out / "config.ini"))

    last = result.history[-1] if result.history else {}
    _banner("TRAINING COMPLETE", [
        f"Variant: {model.variant.value}",
        f"Sentences: {len(corpus)}  Steps: {result.steps}",
        f"Final objective: {last.get('objective', float('nan')):.4f}",
        f"Checkpoint: {out / MODEL_FILE}",
    ], f"python -m hsvae eval-hoyer --out {out}")


def cmd_eval_hoyer(args: argparse.Namespace, run: RunConfig, out: Path) -> None:
    ckpt_path = _require_file(Path(args.checkpoint) if args.checkpoint else out / MODEL_FILE, "checkpoint")
    corpus_path = _require_file(Path(args.corpus) if args.corpus else out / "test.txt", "evaluation corpus")
    vocab = Vocab.load(str(_require_file(_vocab_path(args, corpus_path), "vocab file")))
    modes = MODES if args.mode == "both" else (args.mode,)

    corpus = _load_labeled(corpus_path, vocab, run)
    model = _load_model(ckpt_path, vocab, run)
    split = corpus_path.stem
    root = RngStream(run.train.seed)
    records = []
    out.mkdir(parents=True, exist_ok=True)
    with default_dtype(_dtype(run)):
        for mode in modes:
            report, codes = average_hoyer(corpus, model, mode, root.derive(f"eval-hoyer:{mode}"))
            record = {"variant": model.variant.value, "checkpoint": checkpoint_id(str(ckpt_path)), "split": split}
            record.update(report.model_dump())
            records.append(record)
            if args.dump_codes:
                write_codes_csv(str(out / f"codes-{mode}.csv"), codes)
        terms = evaluate(model, corpus, batch_size=run.train.batch_size, seed=run.train.seed)
    write_jsonl(str(out / "hoyer.jsonl"), records)
    recon = ReconstructionReport(
        variant=model.variant.value, checkpoint=checkpoint_id(str(ckpt_path)), split=split,
        sentences=len(corpus), reconstruction=terms["reconstruction"], kl_z=terms["kl_z"],
        kl_gamma=terms["kl_gamma"], objective=terms["objective"],
    )
    write_jsonl(str(out / "reconstruction.jsonl"), [recon.model_dump()])
    _banner("AVERAGE HOYER", [
        *(f"{r['mode']}: {r['average_hoyer']:.4f}" for r in records),
        f"Reconstruction log-likelihood: {recon.reconstruction:.3f}",
        f"Report: {out / 'hoyer.jsonl'}",
    ], f"python -m hsvae classify --out {out}")


def cmd_classify(args: argparse.Namespace, run: RunConfig, out: Path) -> None:
    train_path = _require_file(Path(args.train_corpus) if args.train_corpus else out / "train.txt", "training corpus")
    eval_path = _require_file(Path(args.eval_corpus) if args.eval_corpus else out / "test.txt", "evaluation corpus")
    vocab = Vocab.load(str(_require_file(_vocab_path(args, train_path), "vocab file")))
    ckpt_path = None
    if not args.simple:
        ckpt_path = _require_file(Path(args.checkpoint) if args.checkpoint else out / MODEL_FILE, "checkpoint")

    train = _load_labeled(train_path, vocab, run)
    test = _load_labeled(eval_path, vocab, run)
    unseen = sorted(set(test.classes) - set(train.classes))
    if unseen:
        raise ContractError(f"evaluation classes missing from the training corpus: {', '.join(unseen)}")
    test = LabeledCorpus(test.sentences, test.labels, vocab, list(train.classes))
    out.mkdir(parents=True, exist_ok=True)
    with default_dtype(_dtype(run)):
        if args.simple:
            _, report = simple_classifier(train, run.model, run.classifier, test, seed=run.train.seed,
                                          split=eval_path.stem)
        else:
            model = _load_model(ckpt_path, vocab, run)
            _, report = train_classifier(train, model, run.classifier, test, seed=run.train.seed,
                                         encoder_checkpoint=checkpoint_id(str(ckpt_path)),
                                         split=eval_path.stem, progress=True)
    write_jsonl(str(out / "accuracy.jsonl"), [report.model_dump()])
    _banner("CLASSIFICATION COMPLETE", [
        f"Variant: {report.variant}  K={report.k}",
        f"Accuracy ({report.split}): {report.accuracy:.4f}",
        f"Report: {out / 'accuracy.jsonl'}",
    ], f"python -m hsvae analyze-gamma --out {out}")


def cmd_analyze_gamma(args: argparse.Namespace, run: RunConfig, out: Path) -> None:
    ckpt_path = _require_file(Path(args.checkpoint) if args.checkpoint else out / MODEL_FILE, "checkpoint")
    corpus_path = _require_file(Path(args.corpus) if args.corpus else out / "test.txt", "corpus")
    vocab = Vocab.load(str(_require_file(_vocab_path(args, corpus_path), "vocab file")))

    corpus = _load_labeled(corpus_path, vocab, run)
    model = _load_model(ckpt_path, vocab, run)
    with default_dtype(_dtype(run)):
        patterns = gamma_class(corpus, model)
    distances = pattern_distance_matrix(patterns)
    out.mkdir(parents=True, exist_ok=True)
    write_gamma_class_csv(str(out / "gamma_class.csv"), patterns)
    distances.to_csv(out / "pattern_distance.csv")
    lines = [f"{p.class_id}: {''.join('1' if g >= 0.5 else '0' for g in p.gamma)} (n={p.support})"
             for p in patterns]
    if len(patterns) > 1:
        lines.append(f"Mean pattern distance: {mean_off_diagonal(distances.to_numpy()):.3f}")
    lines.append(f"Output: {out / 'gamma_class.csv'}")
    _banner("GAMMA_CLASS PATTERNS", lines, f"python -m hsvae class-kl --out {out}")


def cmd_class_kl(args: argparse.Namespace, run: RunConfig, out: Path) -> None:
    corpus_path = _require_file(Path(args.corpus) if args.corpus else out / "train.txt", "corpus")
    vocab = Vocab.load(str(_require_file(_vocab_path(args, corpus_path), "vocab file")))
    corpus = _load_labeled(corpus_path, vocab, run)
    klm = class_kl_matrix(corpus, smoothing=args.smoothing)
    out.mkdir(parents=True, exist_ok=True)
    write_class_kl_csv(str(out / "class_kl.csv"), klm)
    _banner("CLASS KL DIVERGENCE", [
        f"Classes: {len(klm.class_ids)}",
        f"Mean off-diagonal KL: {klm.mean_off_diagonal():.4f}",
        f"Output: {out / 'class_kl.csv'}",
    ])


def cmd_gradcheck(args: argparse.Namespace, run: RunConfig, out: Path) -> None:
    results = run_suite(seed=run.train.seed, groups=args.groups)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(str(out / "gradcheck.jsonl"), [r.model_dump() for r in results])
    failed = [r for r in results if not r.passed]
    _banner("GRADIENT CHECK", [
        f"Checks: {len(results)}  Failed: {len(failed)}",
        f"Worst relative error: {max(r.max_rel_error for r in results):.2e}",
        f"Report: {out / 'gradcheck.jsonl'}",
    ])
    if failed:
        raise NumericError(f"gradient check failed: {', '.join(r.name for r in failed)}")


def cmd_demo_decode(args: argparse.Namespace, run: RunConfig, out: Path) -> None:
    ckpt_path = _require_file(Path(args.checkpoint) if args.checkpoint else out / MODEL_FILE, "checkpoint")
    vocab = Vocab.load(str(_require_file(Path(args.vocab) if args.vocab else ckpt_path.parent / VOCAB_FILE,
                                         "vocab file")))
    model = _load_model(ckpt_path, vocab, run)
    rng = RngStream(run.train.seed).derive("demo-decode")

    with default_dtype(_dtype(run)):
        if args.sentence:
            ids = vocab.encode(clean_line(args.sentence))
            if ids.size == 0:
                raise ContractError("--sentence is empty after cleaning")
            codes = [model.posterior_mean_codes(make_batch([ids]))[0]]
            source = "posterior mean"
        else:
            codes = [model.sample_prior_code(rng) for _ in range(args.samples)]
            source = "prior"
        decoded = [" ".join(vocab.decode(model.greedy_decode(z, args.max_length))) for z in codes]

    out.mkdir(parents=True, exist_ok=True)
    (out / "decoded.txt").write_text("".join(f"{line}\n" for line in decoded), encoding="utf-8")
    _banner(f"GREEDY DECODING ({source})", [*decoded, f"Output: {out / 'decoded.txt'}"])


def cmd_stats(args: argparse.Namespace, run: RunConfig, out: Path) -> None:
    corpus_path = _require_file(Path(args.corpus) if args.corpus else out / "corpus.txt", "corpus")
    vocab_path = _vocab_path(args, corpus_path)
    vocab = Vocab.load(str(vocab_path)) if vocab_path.is_file() else None
    corpus = load_corpus(str(corpus_path), vocab=vocab, labeled=not args.unlabeled,
                         vocab_cap=run.data.vocab_cap, max_length=run.data.max_length)
    stats = corpus_stats(corpus)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stats.json").write_text(stats.model_dump_json() + "\n", encoding="utf-8")
    _banner("CORPUS STATISTICS", [
        f"Sentences: {stats.sentences}",
        f"Vocabulary: {stats.vocab_size}",
        f"Length min/avg/max: {stats.min_length} / {stats.avg_length} / {stats.max_length}",
        f"Classes: {stats.num_classes}",
        *(f"  {label}: {count}" for label, count in stats.per_class.items()),
    ])


def _parse_grid(values: Sequence[str], over: str) -> List[Tuple[str, Dict[str, float]]]:
    settings = []
    for raw in values:
        parts = [p for p in raw.split(",") if p]
        try:
            numbers = [float(p) for p in parts]
        except ValueError:
            raise ContractError(f"invalid --grid entry '{raw}'")
        if over == "overlap":
            if len(numbers) != 1:
                raise ContractError(f"--grid entries for overlap are single fractions, got '{raw}'")
            settings.append((f"shared={numbers[0]:g}", {"shared_fraction": numbers[0]}))
            continue
        if len(numbers) != 2:
            raise ContractError(f"--grid entries for {over} are 'a,b' pairs, got '{raw}'")
        if over == "prior":
            settings.append((f"alpha={numbers[0]:g},beta={numbers[1]:g}",
                             {"prior_alpha": numbers[0], "prior_beta": numbers[1]}))
        else:
            settings.append((f"psi={numbers[0]:g},lambda={numbers[1]:g}",
                             {"psi": numbers[0], "lam": numbers[1]}))
    return settings


def _train_for_sweep(run: RunConfig, seed: int, train: LabeledCorpus, run_dir: Path) -> TextVAE:
    train_config = run.train.model_copy(update={"seed": seed})
    model = TextVAE(run.model, len(train.vocab), rng=RngStream(seed).derive("init"))
    fit(model, train, train_config, log_path=str(run_dir / "train_log.jsonl"),
        checkpoint_dir=str(run_dir / "checkpoints"))
    return model


def cmd_sweep(args: argparse.Namespace, run: RunConfig, out: Path) -> None:
    settings = _parse_grid(args.grid, args.over)
    section = "synth" if args.over == "overlap" else "model"
    setting_runs = [(tag, update_run_config(run, section, update)) for tag, update in settings]
    seeds = args.seeds
    rows: List[Dict[str, Any]] = []

    if args.over == "overlap":
        if run.model.variant is not Variant.HSVAE:
            raise ContractError("the overlap sweep analyzes gamma_class and needs model.variant = HSVAE")
    else:
        train_path = _require_file(Path(args.corpus) if args.corpus else out / "train.txt", "training corpus")
        eval_path = _require_file(Path(args.eval_corpus) if args.eval_corpus else out / "dev.txt", "evaluation corpus")
        vocab = Vocab.load(str(_require_file(_vocab_path(args, train_path), "vocab file")))
        train = _load_labeled(train_path, vocab, run)
        held_out = _load_labeled(eval_path, vocab, run)

    with default_dtype(_dtype(run)):
        for tag, setting_run in setting_runs:
            if args.over == "overlap":
                _, splits = _synth_splits(setting_run)
                train, held_out = splits.train, splits.test
                class_kl = class_kl_matrix(train).mean_off_diagonal()
            for seed in seeds:
                logger.info(f"Sweep {tag} seed {seed}")
                run_dir = out / "sweep" / tag.replace(",", "_").replace("=", "-") / f"seed-{seed}"
                model = _train_for_sweep(setting_run, seed, train, run_dir)
                row: Dict[str, Any] = {"setting": tag, "seed": seed}
                for mode in MODES:
                    report, _ = average_hoyer(held_out, model, mode, RngStream(seed).derive(f"sweep-hoyer:{mode}"))
                    row[f"hoyer_{mode.split('-')[1]}"] = report.average_hoyer
                if args.over == "overlap":
                    distances = pattern_distance_matrix(gamma_class(held_out, model))
                    row["class_kl"] = class_kl
                    row["pattern_distance"] = mean_off_diagonal(distances.to_numpy())
                rows.append(row)

    frame = pd.DataFrame(rows)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "sweep.csv", index=False, float_format="%.6g")
    metrics = [c for c in frame.columns if c not in ("setting", "seed")]
    summary = frame.groupby("setting", sort=False)[metrics].agg(["mean", "std"])
    summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
    summary.to_csv(out / "sweep_summary.csv", float_format="%.6g")

    lines = [f"{setting}: mean hoyer {r['hoyer_mean_mean']:.4f} (+/- {r['hoyer_mean_std']:.4f}), "
             f"sample hoyer {r['hoyer_sample_mean']:.4f} (+/- {r['hoyer_sample_std']:.4f})"
             for setting, r in summary.iterrows()]
    if args.over == "overlap" and len(summary) >= 3:
        rho = spearman_link(summary["class_kl_mean"].tolist(), summary["pattern_distance_mean"].tolist())
        (out / "spearman.json").write_text(json.dumps({"spearman": rho}, sort_keys=True) + "\n", encoding="utf-8")
        lines.append(f"Spearman(class KL, pattern distance): {rho:.3f}")
    lines.append(f"Output: {out / 'sweep_summary.csv'}")
    _banner("SPARSITY SWEEP COMPLETE", lines)


# Parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', type=str, default=None, help='INI-style run configuration file')
    common.add_argument('--seed', type=int, default=None,
                        help='Root seed for every derived random stream (config: train.seed, synth.seed)')
    common.add_argument('--out', '-o', type=Path, default=Path('./runs/default'),
                        help='Output directory (default: ./runs/default)')
    common.add_argument('--verbose', '-v', action='store_true', help='Enable verbose logging')

    parser = argparse.ArgumentParser(
        prog='hsvae',
        description='Sparse latent codes for sentences: HSVAE and baselines',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Desk-scale pipeline on a synthetic corpus
  %(prog)s synth --classes 2 --seed 7 --out ./runs/desk
  %(prog)s train --out ./runs/desk --variant HSVAE --alpha 8 --beta 2
  %(prog)s eval-hoyer --out ./runs/desk

  # Real corpus (label<TAB>sentence per line)
  %(prog)s preprocess --input ./data/yelp.tsv --out ./runs/yelp --config config/full-scale.ini
        """
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    def add(name: str, handler, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help, description=help,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(handler=handler, config_keys=[])
        return p

    p = add('preprocess', cmd_preprocess, 'Clean a raw corpus, build the vocabulary and per-class splits')
    p.add_argument('--input', '-i', required=True, help='Raw corpus file')
    p.add_argument('--unlabeled', action='store_true', help='Lines carry no label column')
    p.add_argument('--no-split', action='store_true', help='Skip train/dev/test sampling')
    _config_flag(p, '--pretokenized', 'data.pretokenized', 'Input is already cleaned; only split on whitespace',
                 action='store_true')
    _config_flag(p, '--vocab-cap', 'data.vocab_cap', 'Most frequent words kept', type=int)
    _config_flag(p, '--max-length', 'data.max_length', 'Truncate longer sentences', type=int)
    _config_flag(p, '--train-per-class', 'data.train_per_class', 'Training sentences per class', type=int)
    _config_flag(p, '--eval-per-class', 'data.eval_per_class', 'Dev and test sentences per class', type=int)

    p = add('synth', cmd_synth, 'Generate a synthetic labeled corpus with controllable class overlap')
    _config_flag(p, '--classes', 'synth.num_classes', 'Number of classes', type=int)
    _config_flag(p, '--class-vocab', 'synth.class_vocab_size', 'Exclusive words per class', type=int)
    _config_flag(p, '--shared-vocab', 'synth.shared_vocab_size', 'Words shared by all classes', type=int)
    _config_flag(p, '--shared-fraction', 'synth.shared_fraction', 'Probability a token is a shared word', type=float)
    _config_flag(p, '--min-length', 'synth.min_length', 'Shortest sentence', type=int)
    _config_flag(p, '--max-length', 'synth.max_length', 'Longest sentence', type=int)
    _config_flag(p, '--sentences-per-class', 'synth.sentences_per_class', 'Sentences per class', type=int)

    def model_flags(p: argparse.ArgumentParser) -> None:
        _config_flag(p, '--variant', 'model.variant', 'Model variant',
                     choices=[v.value for v in Variant])
        _config_flag(p, '--alpha', 'model.prior_alpha', 'Beta prior alpha on the gates', type=float)
        _config_flag(p, '--beta', 'model.prior_beta', 'Beta prior beta on the gates', type=float)
        _config_flag(p, '--psi', 'model.psi', 'Weight of the latent KL', type=float)
        _config_flag(p, '--lambda', 'model.lambda', 'Weight of the gate KL (and MMD)', type=float)
        _config_flag(p, '--latent-dim', 'model.latent_dim', 'Latent dimension D', type=int)
        _config_flag(p, '--hidden-dim', 'model.hidden_dim', 'GRU hidden size', type=int)
        _config_flag(p, '--embed-dim', 'model.embed_dim', 'Word embedding size', type=int)
        _config_flag(p, '--epochs', 'train.epochs', 'Training epochs', type=int)
        _config_flag(p, '--batch-size', 'train.batch_size', 'Sentences per batch', type=int)
        _config_flag(p, '--lr', 'train.lr', 'Adam learning rate', type=float)
        _config_flag(p, '--kl-schedule', 'train.kl_schedule', 'KL weight schedule', choices=['constant', 'linear'])
        _config_flag(p, '--warmup-steps', 'train.warmup_steps', 'Linear schedule warmup steps', type=int)
        _config_flag(p, '--dtype', 'train.dtype', 'Floating point precision', choices=['float32', 'float64'])

    def vocab_flag(p: argparse.ArgumentParser) -> None:
        p.add_argument('--vocab', type=str, default=None, help=f'Vocab file (default: {VOCAB_FILE} next to the corpus)')

    p = add('train', cmd_train, 'Train a model and write checkpoints and an epoch log')
    p.add_argument('--corpus', type=str, default=None, help='Training corpus (default: OUT/train.txt)')
    p.add_argument('--dev', type=str, default=None, help='Dev corpus (default: dev.txt next to the corpus, if present)')
    p.add_argument('--resume', type=str, default=None, help='Checkpoint to continue training from')
    vocab_flag(p)
    model_flags(p)
    _config_flag(p, '--dev-hoyer', 'train.dev_hoyer', 'Average Hoyer on the dev corpus after every epoch',
                 action='store_true')

    p = add('eval-hoyer', cmd_eval_hoyer, 'Average Hoyer of posterior codes, plus held-out ELBO terms')
    p.add_argument('--checkpoint', type=str, default=None, help=f'Model checkpoint (default: OUT/{MODEL_FILE})')
    p.add_argument('--corpus', type=str, default=None, help='Evaluation corpus (default: OUT/test.txt)')
    p.add_argument('--mode', choices=list(MODES) + ['both'], default='both', help='Code extraction mode')
    p.add_argument('--dump-codes', action='store_true', help='Write the code matrices as CSV')
    vocab_flag(p)

    p = add('classify', cmd_classify, 'Train a classifier on latent codes and report test accuracy')
    p.add_argument('--checkpoint', type=str, default=None, help=f'Encoder checkpoint (default: OUT/{MODEL_FILE})')
    p.add_argument('--train-corpus', type=str, default=None, help='Classifier training corpus (default: OUT/train.txt)')
    p.add_argument('--eval-corpus', type=str, default=None, help='Evaluation corpus (default: OUT/test.txt)')
    p.add_argument('--simple', action='store_true', help='Train the end-to-end GRU baseline instead')
    vocab_flag(p)
    _config_flag(p, '--samples', 'classifier.samples', 'Posterior samples K per prediction', type=int)
    _config_flag(p, '--hidden-width', 'classifier.hidden_width', 'MLP hidden width', type=int)
    _config_flag(p, '--hidden-layers', 'classifier.hidden_layers', 'MLP hidden layers', type=int)
    _config_flag(p, '--epochs', 'classifier.epochs', 'Classifier epochs', type=int)
    _config_flag(p, '--lr', 'classifier.lr', 'Classifier learning rate', type=float)
    _config_flag(p, '--unfrozen', 'classifier.frozen', 'Fine-tune the encoder as well',
                 action='store_const', const=False)
    _config_flag(p, '--embed-dim', 'model.embed_dim', 'Word embedding size of the simple baseline', type=int)
    _config_flag(p, '--hidden-dim', 'model.hidden_dim', 'GRU hidden size of the simple baseline', type=int)

    p = add('analyze-gamma', cmd_analyze_gamma, 'Per-class binarized gate patterns of an HSVAE model')
    p.add_argument('--checkpoint', type=str, default=None, help=f'HSVAE checkpoint (default: OUT/{MODEL_FILE})')
    p.add_argument('--corpus', type=str, default=None, help='Labeled corpus (default: OUT/test.txt)')
    vocab_flag(p)

    p = add('class-kl', cmd_class_kl, 'Pairwise KL between smoothed class unigram distributions')
    p.add_argument('--corpus', type=str, default=None, help='Labeled corpus (default: OUT/train.txt)')
    p.add_argument('--smoothing', type=float, default=1.0, help='Additive smoothing (default: 1.0)')
    vocab_flag(p)

    p = add('gradcheck', cmd_gradcheck, 'Finite-difference check of every gradient')
    p.add_argument('--groups', nargs='+', choices=GRADCHECK_GROUPS, default=None,
                   help='Check groups to run (default: all)')

    p = add('demo-decode', cmd_demo_decode, 'Greedy decoding from prior draws or an encoded sentence')
    p.add_argument('--checkpoint', type=str, default=None, help=f'Model checkpoint (default: OUT/{MODEL_FILE})')
    p.add_argument('--vocab', type=str, default=None, help=f'Vocab file (default: {VOCAB_FILE} next to the checkpoint)')
    p.add_argument('--sentence', type=str, default=None, help='Sentence to encode and reconstruct')
    p.add_argument('--samples', type=int, default=5, help='Prior draws when no sentence is given (default: 5)')
    p.add_argument('--max-length', type=int, default=30, help='Longest decoded sentence (default: 30)')

    p = add('stats', cmd_stats, 'Corpus statistics table')
    p.add_argument('--corpus', type=str, default=None, help='Corpus file (default: OUT/corpus.txt)')
    p.add_argument('--unlabeled', action='store_true', help='Lines carry no label column')
    vocab_flag(p)

    p = add('sweep', cmd_sweep, 'Sparsity stability across settings and seeds')
    p.add_argument('--over', choices=['prior', 'weights', 'overlap'], default='prior',
                   help="Swept quantity: 'alpha,beta' pairs, 'psi,lambda' pairs, or synthetic shared fractions")
    p.add_argument('--grid', nargs='+', required=True, help="Settings, e.g. --grid 1,1 8,2 2,8")
    p.add_argument('--seeds', nargs='+', type=int, default=[0, 1, 2], help='Training seeds (default: 0 1 2)')
    p.add_argument('--corpus', type=str, default=None, help='Training corpus (default: OUT/train.txt)')
    p.add_argument('--eval-corpus', type=str, default=None, help='Evaluation corpus (default: OUT/dev.txt)')
    vocab_flag(p)
    model_flags(p)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        run = load_run_config(args.config, _overrides(args))
        args.handler(args, run, args.out)
    except ContractError as e:
        logger.error(f"{args.command}: {e}")
        return 1
    except NumericError as e:
        logger.error(f"{args.command}: {e}")
        return 2
    return 0


if __name__ == '__main__':
    sys.exit(main())
