"""Command-line entry points: train, eval, analyze, sample, range.

Exit codes: 0 success, 1 user error (bad config, missing file, corrupt
checkpoint), 2 runtime fault (non-finite loss, unexpected failure).
"""

import argparse
import csv
import logging
import os
import sys
from itertools import islice
from pathlib import Path

import numpy as np

from . import autograd as ag
from .checkpoint import (
    load_checkpoint,
    model_from_blocks,
    restore_trainer,
    save_checkpoint,
)
from .compression import CompressionLossReport
from .config import OUTPUT_ROOT_ENV, load_config
from .data import (
    TokenStream,
    Vocabulary,
    contiguous_batches,
    detokenize,
    read_corpus,
    split_words,
    tokenize,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DegenerateInputError,
    DimensionError,
    TrainingFault,
)
from .evaluation import attention_bucket_report, evaluate
from .memory import range_report
from .model import CompressiveTransformer
from .sampling import generate
from .training import Trainer, train_loop

logger = logging.getLogger("compressive")

USER_ERRORS = (ConfigError, DataError, CheckpointError, DegenerateInputError, DimensionError,
               FileNotFoundError)


# -- helpers ---------------------------------------------------------------------

def _out_dir(arg, default):
    out = Path(arg) if arg else Path(default)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _vocab_from_blocks(blocks):
    words = blocks["meta"].get("vocab")
    return Vocabulary("word", words) if words else Vocabulary.bytes()


def _encode(text, vocab):
    stream = tokenize(text, vocab.kind, vocab=vocab)
    return stream.ids


def _text_counts(text, kind):
    n_words = len(split_words(text))
    n_chars = len(text.encode("utf-8")) - 1 if kind == "char" else 0
    return n_chars, n_words


def _epochs(ids, batch_size, n_s):
    while True:
        yield from contiguous_batches(ids, batch_size, n_s)


def _evaluate_text(model, text, vocab, max_windows=None, **kwargs):
    ids = _encode(text, vocab)
    n_chars, n_words = _text_counts(text, vocab.kind)
    if max_windows:
        # truncated evaluations normalise by the tokens actually scored
        n_chars, n_words = 0, 0
    return evaluate(model, ids, max_windows=max_windows or None,
                    n_chars=n_chars or None, n_words=n_words, **kwargs)


def _sizes(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"memory sizes must be comma-separated integers, got {text!r}") from None


# -- commands ----------------------------------------------------------------------

def cmd_train(args):
    cfg = load_config(args.config)
    seed = cfg.run.seed if args.seed is None else args.seed
    train_text = read_corpus(cfg.data.train)
    if cfg.data.kind == "word":
        vocab = Vocabulary.from_words(split_words(train_text))
        if len(vocab) > cfg.model.vocab_size:
            raise ConfigError(f"[model] vocab_size {cfg.model.vocab_size} is smaller than the "
                              f"word vocabulary ({len(vocab)})")
    else:
        vocab = Vocabulary.bytes()
        if cfg.model.vocab_size < 256:
            raise ConfigError("[model] vocab_size must be >= 256 for byte-level data")
    ids = _encode(train_text, vocab)
    out = _out_dir(args.out, cfg.run.out_dir)

    with ag.precision(cfg.run.precision):
        model = CompressiveTransformer(cfg.model, seed=seed)
        trainer = Trainer(model, cfg.schedule, cfg.data.batch_size)
        if args.resume:
            blocks = load_checkpoint(args.resume)
            model = model_from_blocks(blocks)
            trainer = restore_trainer(blocks, Trainer(model, cfg.schedule, cfg.data.batch_size))
        echo = cfg.echo()
        echo["run"]["seed"] = seed
        extra = {"vocab": vocab.itos if vocab.kind == "word" else None}

        def save(path, tr):
            save_checkpoint(path, tr.model, tr, run_config=echo, extra=extra)

        batches = _epochs(ids, cfg.data.batch_size, cfg.model.n_s)
        batches = islice(batches, trainer.step * cfg.schedule.unroll_windows, None)
        remaining = max(cfg.run.steps - trainer.step, 0)
        try:
            train_loop(trainer, batches, remaining, out_dir=out,
                       checkpoint_every=cfg.run.checkpoint_every, save_checkpoint=save)
        except TrainingFault as exc:
            print(f"training fault at step {exc.step}: {exc}; wrote {out / 'diagnostic.ckpt'}",
                  file=sys.stderr)
            return 2
        save(out / "final.ckpt", trainer)
        print(f"trained {trainer.step} steps; checkpoint {out / 'final.ckpt'}")
        if cfg.data.valid:
            report = _evaluate_text(model, read_corpus(cfg.data.valid), vocab,
                                    max_windows=cfg.run.eval_windows)
            report.write_csv(out / "valid.csv")
            print(f"validation loss {report.mean_loss:.6f} nats/token")
    return 0


def cmd_eval(args):
    blocks = load_checkpoint(args.checkpoint)
    model = model_from_blocks(blocks)
    vocab = _vocab_from_blocks(blocks)
    text = read_corpus(args.corpus)
    out = _out_dir(args.out, "eval")
    max_windows = args.max_windows
    if max_windows is None:
        max_windows = blocks["config"].get("run", {}).get("run", {}).get("eval_windows", 0)
    cfg = model.config
    if args.n_cm_eval or args.n_m_eval:
        n_ms = _sizes(args.n_m_eval) if args.n_m_eval else [cfg.n_m]
        n_cms = _sizes(args.n_cm_eval) if args.n_cm_eval else [cfg.n_cm]
        pairs = [(m, c) for m in n_ms for c in n_cms]
    else:
        pairs = [(cfg.n_m, cfg.n_cm)]
    fields = ["n_m", "n_cm", "n_tokens", "total_loss_nats", "loss_per_token_nats", "bpc", "word_ppl"]
    with ag.precision("double" if model.embedding.dtype == np.float64 else "single"), \
            open(out / "eval.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for n_m, n_cm in pairs:
            report = _evaluate_text(model, text, vocab, max_windows=max_windows, n_m=n_m, n_cm=n_cm)
            row = report.metrics()
            writer.writerow({k: row[k] for k in fields})
            print(f"n_m={n_m} n_cm={n_cm} loss={report.mean_loss:.6f} nats/token "
                  f"bpc={report.bpc:.4f} word_ppl={report.word_ppl:.3f}")
    return 0


def cmd_analyze(args):
    blocks = load_checkpoint(args.checkpoint)
    model = model_from_blocks(blocks)
    vocab = _vocab_from_blocks(blocks)
    ids = _encode(read_corpus(args.corpus), vocab)
    out = _out_dir(args.out, "analysis")
    report = evaluate(model, ids, trace=True, max_windows=args.sequences)
    if not report.traces:
        raise DegenerateInputError("corpus too short for a single window")
    buckets = attention_bucket_report(report, model.config.n_s)
    buckets.write_csv(out / "attention_buckets.csv")
    losses = report.layer_losses or [float("nan")] * model.config.n_layers
    CompressionLossReport(losses, model.config.compression.variant,
                          step=blocks["meta"]["step"]).write_csv(out / "compression_loss.csv")
    for region, bucket, mean, err in buckets.rows():
        print(f"{region:>17} {bucket} {mean:.6f} +/- {err:.6f}")
    return 0


def cmd_sample(args):
    if not 0.0 < args.p <= 1.0:
        raise ConfigError(f"--p must lie in (0, 1], got {args.p}")
    blocks = load_checkpoint(args.checkpoint)
    model = model_from_blocks(blocks)
    vocab = _vocab_from_blocks(blocks)
    prefix = _encode(args.prefix, vocab)
    rng = np.random.default_rng(args.seed)
    tokens = generate(model, prefix, args.length, p=args.p, rng=rng)
    text = detokenize(TokenStream(np.asarray(tokens, dtype=np.int64), vocab, vocab.kind))
    sys.stdout.write(text + "\n")
    return 0


def cmd_range(args):
    ours = range_report(args.layers, args.n_m, args.n_cm, args.c, args.n_s)
    window = args.n_m + args.n_cm
    txl = range_report(args.layers, window, 0, 1, args.n_s)
    ratio = ours.max_temporal_range / txl.max_temporal_range
    print(f"{'model':<12}{'n_m':>8}{'n_cm':>8}{'range':>10}{'cost':>10}")
    print(f"{'compressive':<12}{args.n_m:>8}{args.n_cm:>8}{ours.max_temporal_range:>10}"
          f"{ours.attention_cost:>10}")
    print(f"{'txl':<12}{window:>8}{0:>8}{txl.max_temporal_range:>10}{txl.attention_cost:>10}")
    print(f"range ratio {ratio:.4f}, cost ratio {ours.attention_cost / txl.attention_cost:.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="compressive",
                                     description="Compressive Transformer language models")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--resume", metavar="CHECKPOINT")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, optionally sweeping memory sizes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--n-cm-eval", help="comma-separated compressed memory sizes")
    p.add_argument("--n-m-eval", help="comma-separated memory sizes")
    p.add_argument("--max-windows", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="attention buckets and per-layer compression loss")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--sequences", type=int, default=64, help="windows to trace")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sample", help="nucleus sampling from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prefix", default="")
    p.add_argument("--length", type=int, default=200)
    p.add_argument("--p", type=float, default=0.98)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("range", help="temporal range and attention cost against a TXL window")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--n-m", type=int, default=512)
    p.add_argument("--n-cm", type=int, default=512)
    p.add_argument("--c", type=int, default=3)
    p.add_argument("--n-s", type=int, default=512)
    p.set_defaults(func=cmd_range)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingFault as exc:
        print(f"training fault: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort fault report
        print(f"fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
