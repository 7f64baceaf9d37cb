"""District-conditioned byte-level text-to-IPA transcription toolkit."""

__version__ = "0.1.0"

from .data import Example, CorpusStats, compute_stats, encode_corpus, load_corpus, write_corpus
from .decoding import DecodeConfig, batch_decode, beam_decode, greedy_decode
from .metrics import WerBreakdown, cer, corpus_wer, wer
from .model import ModelConfig, TranscriptionModel, resize_embeddings
from .synthetic import RuleSet, RewriteRule, ambiguity_floor, build_rules, generate_corpus
from .tokenizer import Vocabulary
from .training import AdamW, TrainConfig, evaluate_wer, split_train_val, train

__all__ = [
    "AdamW",
    "CorpusStats",
    "DecodeConfig",
    "Example",
    "ModelConfig",
    "RewriteRule",
    "RuleSet",
    "TrainConfig",
    "TranscriptionModel",
    "Vocabulary",
    "WerBreakdown",
    "ambiguity_floor",
    "batch_decode",
    "beam_decode",
    "build_rules",
    "cer",
    "compute_stats",
    "corpus_wer",
    "encode_corpus",
    "evaluate_wer",
    "generate_corpus",
    "greedy_decode",
    "load_corpus",
    "resize_embeddings",
    "split_train_val",
    "train",
    "wer",
    "write_corpus",
    "__version__",
]
