"""Command-line interface: stats, synth, train, infer, eval.

Settings merge in a fixed precedence: built-in defaults, then a
key=value config file, then command-line flags, then the DGT_SEED
environment variable (seed only, highest). Every effective value is
echoed before the command runs, and nothing in any output depends on
wall-clock time, so identical runs produce identical bytes.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    CorpusFormatError,
    compute_stats,
    load_corpus,
    load_predictions,
    write_corpus,
    write_predictions,
)
from .decoding import DecodeConfig, batch_decode
from .metrics import corpus_wer
from .model import ModelConfig, TranscriptionModel
from .seeding import STREAM_EVAL_SPLIT, stream_rng
from .synthetic import build_rules, generate_corpus
from .tokenizer import Vocabulary
from .training import TrainConfig, train


class AlignmentError(ValueError):
    """Prediction and reference indices do not line up."""


class ConfigError(ValueError):
    """Bad key or value in a config file or flag set."""


# Every tunable the config file and flags may set, with its default.
# None means "unset, derive later" for the int-or-none keys.
DEFAULTS: dict[str, object] = {
    "seed": 0,
    "d_model": 128,
    "n_heads": 4,
    "decoder_layers": 2,
    "encoder_layers": None,
    "d_ff": None,
    "dropout": 0.1,
    "max_positions": 512,
    "max_gen_len": 1024,
    "batch_size": 4,
    "learning_rate": 3e-4,
    "weight_decay": 1e-2,
    "val_fraction": 0.1,
    "max_epochs": 50,
    "patience": 5,
    "sort_window": 64,
    "val_max_gen_len": None,
    "district_tokens": True,
    "strategy": "greedy",
    "beam_width": 4,
}

_INT_OR_NONE = ("encoder_layers", "d_ff", "val_max_gen_len")


def _parse_value(key: str, raw: str):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    if key in _INT_OR_NONE:
        return None if raw.lower() in ("none", "") else int(raw)
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def read_config_file(path: str | Path) -> dict[str, object]:
    """Parse a key=value settings file; '#' starts a comment line."""
    values: dict[str, object] = {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        try:
            values[key] = _parse_value(key, raw.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{line_no}: {exc}") from None
    return values


def merge_settings(args: argparse.Namespace) -> dict[str, object]:
    """defaults <- config file <- explicit flags <- DGT_SEED."""
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for key in DEFAULTS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    env_seed = os.environ.get("DGT_SEED")
    if env_seed:
        try:
            merged["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"DGT_SEED must be an integer, got {env_seed!r}") from None
    return merged


def _echo(command: str, merged: dict[str, object], keys, out) -> None:
    print(f"run: {command} (dgt {__version__})", file=out)
    for key in sorted(keys):
        print(f"config: {key}={merged[key]}", file=out)


def _model_config(merged: dict[str, object], vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        d_model=merged["d_model"],
        n_heads=merged["n_heads"],
        decoder_layers=merged["decoder_layers"],
        encoder_layers=merged["encoder_layers"],
        d_ff=merged["d_ff"],
        dropout_p=merged["dropout"],
        max_positions=merged["max_positions"],
        max_gen_len=merged["max_gen_len"],
    )


def _train_config(merged: dict[str, object]) -> TrainConfig:
    return TrainConfig(
        batch_size=merged["batch_size"],
        learning_rate=merged["learning_rate"],
        weight_decay=merged["weight_decay"],
        val_fraction=merged["val_fraction"],
        seed=merged["seed"],
        max_epochs=merged["max_epochs"],
        patience=merged["patience"],
        sort_window=merged["sort_window"],
        val_max_gen_len=merged["val_max_gen_len"],
        use_district_tokens=merged["district_tokens"],
    )


def _decode_config(merged: dict[str, object]) -> DecodeConfig:
    return DecodeConfig(
        max_gen_len=merged["max_gen_len"],
        strategy=merged["strategy"],
        beam_width=merged["beam_width"],
    )


_MODEL_KEYS = ("d_model", "n_heads", "decoder_layers", "encoder_layers", "d_ff",
               "dropout", "max_positions", "max_gen_len")
_TRAIN_KEYS = ("batch_size", "learning_rate", "weight_decay", "val_fraction", "seed",
               "max_epochs", "patience", "sort_window", "val_max_gen_len", "district_tokens")
_DECODE_KEYS = ("strategy", "beam_width", "max_gen_len")


def _format_column(label: str, stats) -> str:
    return (
        f"{label}: max_len={stats.max_len} min_len={stats.min_len} "
        f"mean_len={stats.mean_len:.2f} median_len={stats.median_len:.2f} "
        f"unique_words={stats.unique_word_count}"
    )


def cmd_stats(args, out) -> int:
    train_examples = load_corpus(args.train, expect_targets=not args.no_targets)
    test_examples = load_corpus(args.test, expect_targets=False) if args.test else None
    stats = compute_stats(train_examples, test_examples)
    print(_format_column("train contents", stats.train_contents), file=out)
    if stats.train_ipa is not None:
        print(_format_column("train ipa", stats.train_ipa), file=out)
    if test_examples is not None:
        print(_format_column("test contents", stats.test_contents), file=out)
        print(f"oov: count={stats.oov_count} rate={100.0 * stats.oov_rate:.2f}%", file=out)
    return 0


def cmd_synth(args, out) -> int:
    merged = merge_settings(args)
    _echo("synth", merged, ("seed",), out)
    districts = [d for d in args.districts.split(",") if d]
    if len(districts) < 2:
        raise ConfigError("synth needs at least two comma-separated districts")
    if args.min_word_len > args.max_word_len:
        raise ConfigError("min word length exceeds max word length")
    rules = build_rules(districts, args.graphemes, args.ambiguous)
    corpus = generate_corpus(
        rules, districts, args.per_district, (args.min_word_len, args.max_word_len),
        merged["seed"],
    )
    write_corpus(args.out, corpus.examples)
    floor = corpus.floor
    print(f"wrote: {args.out} ({len(corpus.examples)} rows)", file=out)
    print(
        f"floor: accuracy={100.0 * floor.accuracy:.2f}% min_wer={floor.min_wer:.2f}% "
        f"ambiguous_words={100.0 * floor.ambiguous_word_fraction:.2f}%",
        file=out,
    )
    return 0


def _metrics_log_lines(merged: dict[str, object], districts, result) -> list[str]:
    lines = [f"# dgt train log (dgt {__version__})"]
    for key in sorted(_MODEL_KEYS + _TRAIN_KEYS):
        lines.append(f"# config: {key}={merged[key]}")
    lines.append(f"# districts: {','.join(districts)}")
    lines.append("epoch,train_loss,val_wer,best")
    for record in result.history:
        lines.append(
            f"{record.epoch},{record.train_loss:.6f},{record.val_wer:.4f},{int(record.best)}"
        )
    lines.append(f"# best_epoch: {result.best_epoch}")
    lines.append(f"# best_val_wer: {result.best_val_wer:.4f}")
    return lines


def cmd_train(args, out) -> int:
    merged = merge_settings(args)
    _echo("train", merged, _MODEL_KEYS + _TRAIN_KEYS, out)
    examples = load_corpus(args.train, expect_targets=True)
    # Registration order is first appearance in the file, so the id
    # assignment is reproducible from the data alone.
    vocab = Vocabulary().register_districts([ex.district for ex in examples])
    model = TranscriptionModel(_model_config(merged, vocab.size), seed=merged["seed"])
    result = train(model, examples, _train_config(merged), vocab)

    model.load_state_dict(result.best_state)
    save_checkpoint(
        args.out, model, vocab,
        step=result.global_step,
        meta={
            "kind": "model",
            "district_tokens": merged["district_tokens"],
            "best_epoch": result.best_epoch,
            "best_val_wer": result.best_val_wer,
        },
    )
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".log")
    log_path.write_text("\n".join(_metrics_log_lines(merged, vocab.districts, result)) + "\n",
                        encoding="utf-8")
    print(f"checkpoint: {args.out}", file=out)
    print(f"log: {log_path}", file=out)
    print(f"best: epoch={result.best_epoch} val_wer={result.best_val_wer:.4f}", file=out)
    return 0


def cmd_infer(args, out) -> int:
    merged = merge_settings(args)
    _echo("infer", merged, _DECODE_KEYS, out)
    model, vocab, payload = load_checkpoint(args.checkpoint)
    district_tokens = bool(payload.meta.get("district_tokens", True))
    examples = load_corpus(args.input, expect_targets=False)
    rows = [(ex.contents, ex.district if district_tokens else None) for ex in examples]
    results = batch_decode(model, vocab, rows, _decode_config(merged))
    predictions = []
    failures = 0
    for ex, row in zip(examples, results):
        if row.ok:
            predictions.append((ex.index, row.text))
        else:
            failures += 1
            print(f"row index={ex.index}: {row.error}", file=sys.stderr)
    write_predictions(args.out, predictions)
    print(f"wrote: {args.out} ({len(predictions)} rows, {failures} failed)", file=out)
    return 2 if failures else 0


def _wer_line(label: str, breakdown) -> str:
    return (
        f"{label}: wer={breakdown.wer:.4f}% S={breakdown.substitutions} "
        f"D={breakdown.deletions} I={breakdown.insertions} N={breakdown.ref_words}"
    )


def cmd_eval(args, out) -> int:
    merged = merge_settings(args)
    _echo("eval", merged, ("seed",), out)
    references = load_corpus(args.references, expect_targets=True)
    predictions = load_predictions(args.predictions)
    ref_indices = {ex.index for ex in references}
    missing = sorted(ref_indices - set(predictions))
    extra = sorted(set(predictions) - ref_indices)
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"indices missing from predictions: {missing[:20]}")
        if extra:
            parts.append(f"prediction indices without references: {extra[:20]}")
        raise AlignmentError("; ".join(parts))

    pairs = [(ex.ipa, predictions[ex.index]) for ex in references]
    print(_wer_line("overall", corpus_wer(pairs)), file=out)

    by_district: dict[str, list[tuple[str, str]]] = {}
    for ex in references:
        by_district.setdefault(ex.district, []).append((ex.ipa, predictions[ex.index]))
    for district in sorted(by_district):
        print(_wer_line(f"district {district}", corpus_wer(by_district[district])), file=out)

    if args.split:
        order = sorted(ref_indices)
        perm = stream_rng(merged["seed"], STREAM_EVAL_SPLIT).permutation(len(order))
        half = len(order) // 2
        public = {order[i] for i in perm[:half]}
        ref_by_index = {ex.index: ex for ex in references}
        public_pairs = [(ref_by_index[i].ipa, predictions[i]) for i in sorted(public)]
        private_pairs = [
            (ref_by_index[i].ipa, predictions[i]) for i in order if i not in public
        ]
        print(_wer_line("public", corpus_wer(public_pairs)), file=out)
        print(_wer_line("private", corpus_wer(private_pairs)), file=out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgt",
        description="District-conditioned byte-level text-to-IPA toolkit",
    )
    parser.add_argument("--version", action="version", version=f"dgt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_stats = sub.add_parser("stats", help="corpus statistics and OOV analysis")
    p_stats.add_argument("--train", required=True, help="training corpus (with ipa column)")
    p_stats.add_argument("--test", help="test corpus (no ipa column)")
    p_stats.add_argument("--no-targets", action="store_true",
                         help="treat the train file as target-free (no ipa column)")

    p_synth = sub.add_parser("synth", help="generate a synthetic district corpus")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--districts", default="d1,d2", help="comma-separated labels")
    p_synth.add_argument("--graphemes", type=int, default=10)
    p_synth.add_argument("--ambiguous", type=int, default=3)
    p_synth.add_argument("--per-district", type=int, default=2000)
    p_synth.add_argument("--min-word-len", type=int, default=2)
    p_synth.add_argument("--max-word-len", type=int, default=8)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--train", required=True, help="training corpus")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--log", help="metrics log path (default: checkpoint with .log)")

    p_infer = sub.add_parser("infer", help="transcribe a corpus with a checkpoint")
    p_infer.add_argument("--checkpoint", required=True)
    p_infer.add_argument("--input", required=True)
    p_infer.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="score predictions against references")
    p_eval.add_argument("--predictions", required=True)
    p_eval.add_argument("--references", required=True)
    p_eval.add_argument("--split", action="store_true",
                        help="also report a seeded 50:50 public/private split")

    for p in (p_synth, p_train, p_infer, p_eval):
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--seed", type=int, default=None)
    for p in (p_train,):
        p.add_argument("--d-model", type=int, default=None, dest="d_model")
        p.add_argument("--n-heads", type=int, default=None, dest="n_heads")
        p.add_argument("--decoder-layers", type=int, default=None, dest="decoder_layers")
        p.add_argument("--encoder-layers", type=int, default=None, dest="encoder_layers")
        p.add_argument("--d-ff", type=int, default=None, dest="d_ff")
        p.add_argument("--dropout", type=float, default=None)
        p.add_argument("--max-positions", type=int, default=None, dest="max_positions")
        p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
        p.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
        p.add_argument("--weight-decay", type=float, default=None, dest="weight_decay")
        p.add_argument("--val-fraction", type=float, default=None, dest="val_fraction")
        p.add_argument("--max-epochs", type=int, default=None, dest="max_epochs")
        p.add_argument("--patience", type=int, default=None)
        p.add_argument("--sort-window", type=int, default=None, dest="sort_window")
        p.add_argument("--val-max-gen-len", type=int, default=None, dest="val_max_gen_len")
        p.add_argument("--no-district-tokens", action="store_const", const=False,
                       default=None, dest="district_tokens")
    for p in (p_train, p_infer):
        p.add_argument("--max-gen-len", type=int, default=None, dest="max_gen_len")
    for p in (p_infer,):
        p.add_argument("--strategy", choices=("greedy", "beam"), default=None)
        p.add_argument("--beam-width", type=int, default=None, dest="beam_width")

    return parser


_COMMANDS = {
    "stats": cmd_stats,
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
}


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args, out)
    except (CorpusFormatError, CheckpointError, ConfigError, AlignmentError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
