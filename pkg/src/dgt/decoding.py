"""Autoregressive decoding: greedy (default) and beam search.

Generation runs the encoder once per input, then feeds the growing
target prefix back through the decoder. The prefix starts with the pad
id as the start-of-sequence marker, matching how training shifts
targets. Everything here is deterministic: argmax ties break toward the
lowest token id, and beam candidates are ordered by (score, ids).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import no_grad
from .tokenizer import EOS_ID, PAD_ID, Vocabulary

_STRATEGIES = ("greedy", "beam")


@dataclass(frozen=True)
class DecodeConfig:
    max_gen_len: int = 1024
    strategy: str = "greedy"
    beam_width: int = 4

    def __post_init__(self):
        if self.max_gen_len < 1:
            raise ValueError(f"max_gen_len must be >= 1, got {self.max_gen_len}")
        if self.strategy not in _STRATEGIES:
            raise ValueError(f"strategy must be one of {_STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "beam" and self.beam_width < 2:
            raise ValueError(f"beam_width must be >= 2, got {self.beam_width}")


def _generation_cap(model, config: DecodeConfig) -> int:
    # The prefix holds the start token plus everything emitted so far,
    # so the position table bounds emission at max_positions - 1.
    return min(config.max_gen_len, model.config.max_positions - 1)


def _last_logits(model, enc_out, prefix: list[int]) -> np.ndarray:
    logits = model.decoder_logits(enc_out, None, np.asarray([prefix], dtype=np.int64))
    return logits.data[0, -1]


def greedy_decode_ids(model, vocab: Vocabulary, text: str, district: str | None = None,
                      config: DecodeConfig | None = None) -> list[int]:
    """Emitted token ids (eos included when produced) for one input."""
    config = config or DecodeConfig()
    if not text:
        return []
    source = np.asarray([vocab.encode(text, district)], dtype=np.int64)
    cap = _generation_cap(model, config)
    emitted: list[int] = []
    with no_grad():
        enc_out = model.encode_source(source, None)
        prefix = [PAD_ID]
        for _ in range(cap):
            next_id = int(np.argmax(_last_logits(model, enc_out, prefix)))
            emitted.append(next_id)
            if next_id == EOS_ID:
                break
            prefix.append(next_id)
    return emitted


def greedy_decode(model, vocab: Vocabulary, text: str, district: str | None = None,
                  config: DecodeConfig | None = None) -> str:
    """Transcribe one input string; empty input transcribes to ""."""
    return vocab.decode(greedy_decode_ids(model, vocab, text, district, config))


def beam_decode(model, vocab: Vocabulary, text: str, district: str | None = None,
                config: DecodeConfig | None = None) -> str:
    """Beam search over summed token log-probabilities.

    Finished beams (those that emitted eos) keep competing on raw score;
    no length normalization is applied, so results are reproducible and
    width 1 would coincide with greedy.
    """
    config = config or DecodeConfig(strategy="beam")
    if not text:
        return ""
    source = np.asarray([vocab.encode(text, district)], dtype=np.int64)
    cap = _generation_cap(model, config)
    with no_grad():
        enc_out = model.encode_source(source, None)
        # Each beam: (negated score, emitted ids tuple, finished flag).
        beams: list[tuple[float, tuple[int, ...], bool]] = [(0.0, (), False)]
        for _ in range(cap):
            candidates: list[tuple[float, tuple[int, ...], bool]] = []
            any_open = False
            for neg_score, ids, done in beams:
                if done:
                    candidates.append((neg_score, ids, True))
                    continue
                any_open = True
                logits = _last_logits(model, enc_out, [PAD_ID, *ids]).astype(np.float64)
                shifted = logits - logits.max()
                log_probs = shifted - np.log(np.exp(shifted).sum())
                top = np.argsort(-log_probs, kind="stable")[: config.beam_width]
                for token in top:
                    token = int(token)
                    candidates.append(
                        (neg_score - float(log_probs[token]), ids + (token,), token == EOS_ID)
                    )
            if not any_open:
                break
            candidates.sort(key=lambda c: (c[0], c[1]))
            beams = candidates[: config.beam_width]
        best = min(beams, key=lambda c: (c[0], c[1]))
    return vocab.decode(list(best[1]))


def decode_text(model, vocab: Vocabulary, text: str, district: str | None = None,
                config: DecodeConfig | None = None) -> str:
    config = config or DecodeConfig()
    if config.strategy == "beam":
        return beam_decode(model, vocab, text, district, config)
    return greedy_decode(model, vocab, text, district, config)


@dataclass(frozen=True)
class RowResult:
    """Outcome of decoding one row: a transcription or an error message."""

    text: str | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def batch_decode(model, vocab: Vocabulary, rows: Sequence[tuple[str, str | None]],
                 config: DecodeConfig | None = None) -> list[RowResult]:
    """Decode rows independently, in order; failures never stop the batch."""
    results: list[RowResult] = []
    for text, district in rows:
        try:
            results.append(RowResult(decode_text(model, vocab, text, district, config)))
        except Exception as exc:  # per-row isolation is the contract
            results.append(RowResult(None, f"{type(exc).__name__}: {exc}"))
    return results
