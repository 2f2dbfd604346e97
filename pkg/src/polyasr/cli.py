"""Command-line driver.

Subcommands: gen-corpus, build-vocab, stats, train, decode, score, compare.
Exit codes: 0 success, 1 usage/config error, 2 runtime error.  Diagnostics go
to stderr; machine-readable output goes to files under the output directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiment
from .config import ConfigError, dump_default_config, load_config
from .tokenization import Strategy, TokenizationError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; the contract reserves 2 for
    # runtime failures, so route usage problems through our own exception.
    def error(self, message):
        raise UsageError(message)


def _add_common(parser):
    parser.add_argument("--config", type=Path, default=None,
                        help="experiment YAML (defaults to the shipped recipe)")
    parser.add_argument("--output-dir", type=Path, default=None,
                        help="override the config's output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")


def _add_strategy(parser, required=True):
    parser.add_argument(
        "--strategy",
        choices=[s.value for s in Strategy],
        required=required,
        help="vocabulary strategy",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="polyasr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate train/test manifests and features")
    _add_common(p)

    p = sub.add_parser("build-vocab", help="build vocabulary files for a strategy")
    _add_common(p)
    _add_strategy(p)
    p.add_argument("--threshold", type=int, default=None,
                   help="char-vs-subword distinct-character threshold")
    p.add_argument("--subword-cap", type=int, default=None, help="BPE inventory cap")

    p = sub.add_parser("stats", help="tokens-per-second diagnostics")
    _add_common(p)
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=None,
                   help="restrict to one strategy (default: all three)")
    p.add_argument("--split", choices=["train", "test"], default="train")

    p = sub.add_parser("train", help="train a transducer for a strategy")
    _add_common(p)
    _add_strategy(p)
    p.add_argument("--steps", type=int, default=None,
                   help="run at most this many additional steps (checkpoint is suffixed)")
    p.add_argument("--total-steps", type=int, default=None, help="override schedule length")
    p.add_argument("--peak-lr", type=float, default=None, help="override peak learning rate")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")

    p = sub.add_parser("decode", help="decode a split with a trained checkpoint")
    _add_common(p)
    _add_strategy(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--beam-width", type=int, default=None)
    p.add_argument("--decode-mode", choices=["beam", "greedy"], default=None)

    p = sub.add_parser("score", help="score a hypothesis file against references")
    _add_common(p)
    p.add_argument("--hypotheses", type=Path, required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")

    p = sub.add_parser("compare", help="three-way comparison or precomputed-results mode")
    _add_common(p)
    p.add_argument("--checkpoint-shared-char", type=Path, default=None)
    p.add_argument("--checkpoint-shared-char-subword", type=Path, default=None)
    p.add_argument("--checkpoint-lang-specific", type=Path, default=None)
    p.add_argument("--precomputed-results", type=Path, default=None,
                   help="TSV (condition, model, wer_percent); skips decoding")
    p.add_argument("--split", choices=["train", "test"], default="test")

    p = sub.add_parser("default-config", help="print the default config as YAML")
    return parser


def _overrides(args) -> dict:
    out: dict = {}
    if getattr(args, "output_dir", None) is not None:
        out["output_dir"] = str(args.output_dir)
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    vocab: dict = {}
    if getattr(args, "threshold", None) is not None:
        vocab["threshold"] = args.threshold
    if getattr(args, "subword_cap", None) is not None:
        vocab["subword_cap"] = args.subword_cap
    if vocab:
        out["vocabulary"] = vocab
    train: dict = {}
    if getattr(args, "total_steps", None) is not None:
        train["total_steps"] = args.total_steps
    if getattr(args, "peak_lr", None) is not None:
        train["peak_lr"] = args.peak_lr
    if train:
        out["train"] = train
    decode: dict = {}
    if getattr(args, "beam_width", None) is not None:
        decode["beam_width"] = args.beam_width
    if getattr(args, "decode_mode", None) is not None:
        decode["mode"] = args.decode_mode
    if decode:
        out["decode"] = decode
    return out


def _run(args) -> int:
    if args.command == "default-config":
        sys.stdout.write(dump_default_config())
        return 0

    config = load_config(args.config, _overrides(args))

    if args.command == "gen-corpus":
        train_path, test_path = experiment.gen_corpus(config)
        print(f"wrote {train_path} and {test_path}", file=sys.stderr)
        return 0

    if args.command == "build-vocab":
        directory = experiment.build_vocab(config, Strategy.parse(args.strategy))
        print(f"wrote vocabulary files under {directory}", file=sys.stderr)
        return 0

    if args.command == "stats":
        strategies = [Strategy.parse(args.strategy)] if args.strategy else None
        directory = experiment.compute_stats(config, strategies, split=args.split)
        print(f"wrote stats report under {directory}", file=sys.stderr)
        return 0

    if args.command == "train":
        checkpoint = experiment.train(
            config,
            Strategy.parse(args.strategy),
            resume=args.resume,
            stop_after=args.steps,
        )
        print(f"wrote {checkpoint}", file=sys.stderr)
        return 0

    if args.command == "decode":
        out = experiment.decode(
            config, Strategy.parse(args.strategy), args.checkpoint, split=args.split
        )
        print(f"wrote {out}", file=sys.stderr)
        return 0

    if args.command == "score":
        _, pooled, out = experiment.score(config, args.hypotheses, split=args.split)
        print(f"wrote {out} (pooled error rate {pooled.wer_percent:.1f}%)", file=sys.stderr)
        return 0

    if args.command == "compare":
        if args.precomputed_results is not None:
            _, out = experiment.compare_precomputed(
                args.precomputed_results, config.output_dir / "compare"
            )
            print(f"wrote {out}", file=sys.stderr)
            return 0
        checkpoints = {
            Strategy.SHARED_CHAR: args.checkpoint_shared_char,
            Strategy.SHARED_CHAR_SUBWORD: args.checkpoint_shared_char_subword,
            Strategy.LANGUAGE_SPECIFIC: args.checkpoint_lang_specific,
        }
        missing = [s.value for s, p in checkpoints.items() if p is None]
        if missing:
            raise UsageError(
                "compare needs --precomputed-results or all three checkpoints "
                f"(missing: {', '.join(missing)})"
            )
        _, directory = experiment.compare(config, checkpoints, split=args.split)
        print(f"wrote comparison bundle under {directory}", file=sys.stderr)
        return 0

    raise UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _run(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (TokenizationError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
