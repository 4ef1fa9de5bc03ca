"""Command-line front end: ``scriptgauge <verb> [flags]``.

Verbs: split, train, evaluate, predict, analyze, baseline.  Every output
directory receives a ``run_meta.txt`` recording the verb, the flags, the
seed and the format versions, so a run can be reproduced from its outputs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (GENRES, SPLIT_FILES, LoadStats, Rating, class_distribution, load_corpus,
                     read_split, stratified_split, write_split)
from .evaluation import (BAD_WORD_HEADER, bad_word_rows, bad_word_table, build_report, write_report,
                         write_table)
from .lexicon import EMOTIONS, bad_word_ratio, emotion_vector, load_bad_words, load_emotion_lexicon
from .model import (FORMAT_VERSION, CheckpointError, ModelConfig, RatingClassifier, load_checkpoint,
                    save_checkpoint, train)
from .text import build_vocabulary, load_embeddings, script_tokens

log = logging.getLogger("scriptgauge")

REPORT_VERSION = 1
VERBS = ("split", "train", "evaluate", "predict", "analyze", "baseline")


class UsageError(Exception):
    pass


# -- argument parsing --------------------------------------------------

def _common(top: bool) -> argparse.ArgumentParser:
    # Accepted before or after the verb.  Subparser copies suppress their
    # defaults so they cannot overwrite a value given before the verb.
    default = None if top else argparse.SUPPRESS
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=default, help="seed for every random stream of the run")
    p.add_argument("--threads", type=int, default=default,
                   help="cap on worker and BLAS threads (1 guarantees bitwise determinism)")
    p.add_argument("-v", "--verbose", action="store_true", default=False if top else argparse.SUPPRESS,
                   help="log progress to stderr")
    return p


def _model_flags(p: argparse.ArgumentParser) -> None:
    """Flags that override config-file values (which override built-in defaults)."""
    p.add_argument("--config", help="flat key = value file mirroring the model configuration")
    p.add_argument("--emotion-lexicon", help="NRC-format word/category/flag TSV")
    p.add_argument("--embeddings", help="word-per-line pretrained vectors")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--hidden", dest="d_hidden", type=int)
    p.add_argument("--dense", dest="d_dense", type=int)
    p.add_argument("--dropout", dest="dropout_rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seq-len", type=int)
    p.add_argument("--l2", dest="l2_lambda", type=float)
    p.add_argument("--emb-dim", dest="d_emb", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--use-emotion", dest="use_emotion", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--use-genre", dest="use_genre", action=argparse.BooleanOptionalAction, default=None)


OVERRIDE_KEYS = ("epochs", "learning_rate", "d_hidden", "d_dense", "dropout_rate", "batch_size", "seq_len",
                 "l2_lambda", "d_emb", "dtype", "use_emotion", "use_genre")


def build_parser() -> argparse.ArgumentParser:
    common = _common(top=False)
    parser = argparse.ArgumentParser(prog="scriptgauge", parents=[_common(top=True)],
                                     description="Predict MPAA ratings from movie scripts.")
    parser.add_argument("--version", action="version", version=f"scriptgauge {__version__}")
    sub = parser.add_subparsers(dest="verb", metavar="VERB")
    sub.required = True

    p = sub.add_parser("split", parents=[common], help="stratified 80:10:10 split of a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="directory for train/valid/test.jsonl")
    p.add_argument("--lenient", action="store_true", help="skip malformed lines instead of aborting")

    p = sub.add_parser("train", parents=[common], help="train the LSTM+attention classifier")
    p.add_argument("--split-dir", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    _model_flags(p)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint and write analysis tables")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--bad-words", nargs="+", default=None)
    p.add_argument("--k", type=int, default=10, help="length of the ranked word lists")

    p = sub.add_parser("predict", parents=[common], help="rate every movie of a corpus file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", help="output file (default: standard output)")

    p = sub.add_parser("analyze", parents=[common], help="corpus statistics, bad-word and emotion tables")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emotion-lexicon")
    p.add_argument("--bad-words", nargs="+", default=None)
    p.add_argument("--k", type=int, default=10)

    p = sub.add_parser("baseline", parents=[common], help="fit and evaluate a comparison system")
    p.add_argument("--kind", required=True, choices=("threshold", "svm", "cnn"))
    p.add_argument("--split-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bad-words", nargs="+", default=None)
    p.add_argument("--c-grid", type=float, nargs="+", default=[1, 10, 100, 1000])
    p.add_argument("--svm-epochs", type=int, default=30)
    p.add_argument("--k", type=int, default=10)
    _model_flags(p)
    return parser


# -- helpers -----------------------------------------------------------

def _require_files(*pairs) -> None:
    """Fail fast, before any long computation, on missing inputs."""
    for flag, path in pairs:
        if path is None:
            continue
        for item in path if isinstance(path, list) else [path]:
            if not Path(item).exists():
                raise UsageError(f"{flag}: no such file or directory: {item}")


def _require_split_dir(path) -> None:
    for name in SPLIT_FILES:
        if not (Path(path) / name).is_file():
            raise UsageError(f"--split-dir: {path} lacks {name}")


def write_run_meta(out_dir, args: argparse.Namespace, seed: int, extra: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [("verb", args.verb), ("seed", seed)]
    for key in sorted(vars(args)):
        if key in ("verb", "seed", "verbose"):
            continue
        value = getattr(args, key)
        if value is None:
            continue
        if isinstance(value, list):
            value = " ".join(str(v) for v in value)
        rows.append((f"flag.{key}", value))
    rows += sorted((extra or {}).items())
    rows += [("version.package", __version__), ("version.checkpoint", FORMAT_VERSION),
             ("version.report", REPORT_VERSION)]
    with (out / "run_meta.txt").open("w", encoding="utf-8", newline="\n") as fh:
        for key, value in rows:
            fh.write(f"{key}\t{value}\n")


def model_config(args: argparse.Namespace, **fixed) -> ModelConfig:
    overrides = {k: getattr(args, k) for k in OVERRIDE_KEYS if getattr(args, k, None) is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    overrides.update(fixed)
    if args.config:
        return ModelConfig.load(args.config, **overrides)
    return ModelConfig(**overrides)


def _thread_limit(threads):
    if threads is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


def fit_classifier(args, config: ModelConfig, split):
    """Vocabulary from the training split, frozen embeddings, then training."""
    if config.use_emotion and not args.emotion_lexicon:
        raise UsageError("--emotion-lexicon is required when use_emotion is enabled")
    if not args.embeddings:
        raise UsageError("--embeddings is required")
    lexicon = load_emotion_lexicon(args.emotion_lexicon) if args.emotion_lexicon else None
    vocab = build_vocabulary(split.train, config.min_count)
    table = load_embeddings(args.embeddings, vocab, config.d_emb, dtype=config.np_dtype)
    log.info("embedding coverage %.4f over %d words", table.coverage(), len(vocab))
    model = RatingClassifier(config, vocab, table.matrix, lexicon if config.use_emotion else None)
    return train(model, split, config)


def _model_report(model: RatingClassifier, records, bad_words, k):
    preds = model.predict(records)
    full = [script_tokens(r) for r in records]
    emotions = [emotion_vector(t, model.lexicon) for t in full] if model.lexicon is not None else None
    has_attention = all(p.attention is not None for p in preds)
    return build_report(records, [int(p.rating) for p in preds], emotions=emotions,
                        tokens=[p.tokens for p in preds] if has_attention else None,
                        attention=[p.attention for p in preds] if has_attention else None,
                        bad_words=bad_words, k=k, full_tokens=full)


# -- verbs -------------------------------------------------------------

def cmd_split(args) -> None:
    _require_files(("--corpus", args.corpus))
    seed = 0 if args.seed is None else args.seed
    stats = LoadStats()
    corpus = load_corpus(args.corpus, strict=not args.lenient, stats=stats)
    split = stratified_split(corpus, seed=seed)
    write_split(split, args.out)
    write_run_meta(args.out, args, seed, {
        "records": len(corpus), "skipped_lines": stats.skipped, "duplicate_ids": stats.duplicates,
        "train": len(split.train), "valid": len(split.validation), "test": len(split.test)})


def cmd_train(args) -> None:
    _require_files(("--config", args.config), ("--emotion-lexicon", args.emotion_lexicon),
                   ("--embeddings", args.embeddings))
    _require_split_dir(args.split_dir)
    config = model_config(args)
    result = fit_classifier(args, config, read_split(args.split_dir, config.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out)
    write_table(out.parent / "history.tsv", ["epoch", "train_loss", "val_weighted_f1"],
                [(r.epoch, r.train_loss, r.val_f1) for r in result.history])
    write_run_meta(out.parent, args, config.seed,
                   {"best_epoch": result.best_epoch, "best_val_weighted_f1": f"{result.best_val_f1:.6f}"})


def cmd_evaluate(args) -> None:
    _require_files(("--ckpt", args.ckpt), ("--bad-words", args.bad_words))
    _require_split_dir(args.split_dir)
    bad_words = load_bad_words(args.bad_words) if args.bad_words else None
    model = load_checkpoint(args.ckpt)
    if args.threads is not None:
        model.config.threads = args.threads
    split = read_split(args.split_dir)
    records = {"train": split.train, "valid": split.validation, "test": split.test}[args.split]
    write_report(_model_report(model, records, bad_words, args.k), args.out)
    write_run_meta(args.out, args, model.config.seed, {"evaluated": len(records)})


def format_prediction(pred) -> str:
    probs = " ".join(f"{float(p):.6f}" for p in pred.probs)
    return f"{pred.id}\t{pred.rating.label}\t{probs}"


def cmd_predict(args) -> None:
    _require_files(("--ckpt", args.ckpt), ("--input", args.input))
    model = load_checkpoint(args.ckpt)
    if args.threads is not None:
        model.config.threads = args.threads
    records = load_corpus(args.input, strict=True)
    lines = [format_prediction(p) + "\n" for p in model.predict(records)]
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("".join(lines), encoding="utf-8", newline="\n")
        write_run_meta(out.parent, args, model.config.seed, {"predicted": len(records)})
    else:
        sys.stdout.writelines(lines)


def cmd_analyze(args) -> None:
    _require_files(("--corpus", args.corpus), ("--emotion-lexicon", args.emotion_lexicon),
                   ("--bad-words", args.bad_words))
    corpus = load_corpus(args.corpus, strict=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ratings, genres = class_distribution(corpus)
    n = len(corpus)
    write_table(out / "class_distribution.tsv", ["class", "count", "share"],
                [(r.label, ratings[r], ratings[r] / n) for r in Rating])
    write_table(out / "genre_distribution.tsv", ["genre", "count"], [(g.value, genres[g]) for g in GENRES])
    cross = {g: [0] * len(Rating) for g in GENRES}
    for record in corpus:
        for g in record.genres:
            cross[g][record.rating] += 1
    write_table(out / "genre_by_rating.tsv", ["genre"] + [r.label for r in Rating],
                [[g.value] + cross[g] for g in GENRES])
    tokens = [script_tokens(r) for r in corpus]
    by_class = {r: [t for rec, t in zip(corpus, tokens) if rec.rating == r] for r in Rating}
    if args.emotion_lexicon:
        lexicon = load_emotion_lexicon(args.emotion_lexicon)
        rows = []
        for r in Rating:
            if by_class[r]:
                mean = np.mean([emotion_vector(t, lexicon) for t in by_class[r]], axis=0)
                rows.append([r.label] + [float(x) for x in mean])
        write_table(out / "emotion_means.tsv", ["class"] + list(EMOTIONS), rows)
    if args.bad_words:
        bad_words = load_bad_words(args.bad_words)
        tables = bad_word_table({r: v for r, v in by_class.items() if v}, bad_words, args.k)
        write_table(out / "bad_words.tsv", BAD_WORD_HEADER, bad_word_rows(tables))
    write_run_meta(out, args, 0 if args.seed is None else args.seed, {"records": n})


def _ratios(records, bad_words):
    ratios = []
    for record in records:
        toks = script_tokens(record)
        if not toks:
            raise ValueError(f"record {record.id!r}: script has no tokens")
        ratios.append(bad_word_ratio(toks, bad_words))
    return ratios


def cmd_baseline(args) -> None:
    from .baselines import fit_thresholds, svm_fit

    _require_files(("--bad-words", args.bad_words), ("--config", args.config),
                   ("--emotion-lexicon", args.emotion_lexicon), ("--embeddings", args.embeddings))
    _require_split_dir(args.split_dir)
    seed = 0 if args.seed is None else args.seed
    bad_words = load_bad_words(args.bad_words) if args.bad_words else None
    lexicon = load_emotion_lexicon(args.emotion_lexicon) if args.emotion_lexicon else None
    split = read_split(args.split_dir, seed)
    test = split.test
    extra = {}
    if args.kind == "threshold":
        if bad_words is None:
            raise UsageError("--bad-words is required for the threshold baseline")
        model = fit_thresholds(list(zip(_ratios(split.train, bad_words), (r.rating for r in split.train))))
        predicted = [int(model.predict(x)) for x in _ratios(test, bad_words)]
        extra = {f"threshold.t{i + 1}": repr(t) for i, t in enumerate(model.thresholds)}
    elif args.kind == "svm":
        model = svm_fit(split.train, split.validation, args.c_grid, lexicon, epochs=args.svm_epochs, seed=seed)
        predicted = model.predict_records(test).tolist()
        extra = {"svm.C": repr(float(model.C)), "svm.features": model.featurizer.dim}
    else:
        config = model_config(args, encoder="cnn")
        result = fit_classifier(args, config, split)
        report = _model_report(result.model, test, bad_words, args.k)
        write_report(report, args.out)
        write_run_meta(args.out, args, config.seed, {"best_epoch": result.best_epoch})
        return
    full = [script_tokens(r) for r in test]
    emotions = [emotion_vector(t, lexicon) for t in full] if lexicon is not None else None
    report = build_report(test, predicted, emotions=emotions, bad_words=bad_words, k=args.k, full_tokens=full)
    write_report(report, args.out)
    write_run_meta(args.out, args, seed, extra)


COMMANDS = {"split": cmd_split, "train": cmd_train, "evaluate": cmd_evaluate, "predict": cmd_predict,
            "analyze": cmd_analyze, "baseline": cmd_baseline}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 and a usage line on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        with _thread_limit(args.threads):
            COMMANDS[args.verb](args)
    except (UsageError, CheckpointError, OSError, ValueError, KeyError) as exc:
        message = " ".join(str(exc).split()) or type(exc).__name__
        print(f"scriptgauge {args.verb}: error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
