"""Byte-level encoder-decoder transformer for dialect-conditioned transcription.

The depth is asymmetric on purpose: a heavy encoder reads the (district
marker + text) byte sequence, a light decoder emits transcription bytes.
Blocks are pre-layer-norm residual, positions are fixed sinusoids, and
the input embedding and output projection are untied so the vocabulary
can grow without touching trained rows.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import tensor as T
from .seeding import STREAM_INIT, STREAM_RESIZE, stream_rng
from .tensor import Tensor
from .tokenizer import PAD_ID, UnknownIdError

INIT_STD = 0.02


class SequenceLengthError(ValueError):
    """A sequence exceeds the model's position table."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``encoder_layers`` defaults to three times ``decoder_layers``.
    ``d_ff`` defaults to 10 * d_model, which keeps the encoder stack at
    least 2.5x the decoder stack by parameter count at every depth pair
    (at 4x the ratio tops out near 2.25 because each decoder layer
    carries two attention blocks).
    """

    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    decoder_layers: int = 2
    encoder_layers: int | None = None
    d_ff: int | None = None
    dropout_p: float = 0.1
    max_positions: int = 512
    max_gen_len: int = 1024

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ValueError(f"vocab_size must be positive, got {self.vocab_size}")
        if self.d_model < 2 or self.d_model % 2:
            raise ValueError(f"d_model must be even and >= 2, got {self.d_model}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ValueError(
                f"n_heads must divide d_model, got {self.n_heads} for d_model {self.d_model}"
            )
        if self.decoder_layers < 1:
            raise ValueError(f"decoder_layers must be >= 1, got {self.decoder_layers}")
        if self.encoder_layers is None:
            object.__setattr__(self, "encoder_layers", 3 * self.decoder_layers)
        elif self.encoder_layers < 1:
            raise ValueError(f"encoder_layers must be >= 1, got {self.encoder_layers}")
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 10 * self.d_model)
        elif self.d_ff < 1:
            raise ValueError(f"d_ff must be >= 1, got {self.d_ff}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.max_positions < 2:
            raise ValueError(f"max_positions must be >= 2, got {self.max_positions}")
        if self.max_gen_len < 1:
            raise ValueError(f"max_gen_len must be >= 1, got {self.max_gen_len}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def sinusoidal_positions(max_positions: int, d_model: int, dtype=T.DEFAULT_DTYPE) -> np.ndarray:
    """Fixed sin/cos position table [max_positions, d_model]."""
    pos = np.arange(max_positions, dtype=np.float64)[:, None]
    dim = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, dim / d_model)
    table = np.zeros((max_positions, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(dtype)


def _normal(rng: np.random.Generator, shape, std: float, dtype) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def _keep_to_additive(keep: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Boolean keep-mask -> additive scores term, broadcast to ``shape``."""
    try:
        keep = np.broadcast_to(keep, shape)
    except ValueError as exc:
        raise T.ShapeError(f"mask {keep.shape} does not broadcast to scores {shape}") from exc
    return np.where(keep, 0.0, T.MASK_FILL)


class MultiHeadAttention:
    """Scaled dot-product attention with per-head projections.

    The optional mask is a boolean keep-mask broadcastable to the score
    matrix [batch, heads, queries, keys]; False entries are excluded
    before the softmax and rows with nothing left to attend to yield a
    zero context vector instead of NaN.
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, dtype):
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.w_query = _normal(rng, (d_model, d_model), INIT_STD, dtype)
        self.w_key = _normal(rng, (d_model, d_model), INIT_STD, dtype)
        self.w_value = _normal(rng, (d_model, d_model), INIT_STD, dtype)
        self.w_out = _normal(rng, (d_model, d_model), INIT_STD, dtype)
        self.b_query = _zeros(d_model, dtype)
        self.b_key = _zeros(d_model, dtype)
        self.b_value = _zeros(d_model, dtype)
        self.b_out = _zeros(d_model, dtype)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "w_query": self.w_query, "b_query": self.b_query,
            "w_key": self.w_key, "b_key": self.b_key,
            "w_value": self.w_value, "b_value": self.b_value,
            "w_out": self.w_out, "b_out": self.b_out,
        }

    def _split(self, x: Tensor, batch: int, length: int) -> Tensor:
        x = T.reshape(x, (batch, length, self.n_heads, self.d_head))
        return T.transpose(x, (0, 2, 1, 3))

    def forward(self, query: Tensor, key: Tensor, value: Tensor, keep_mask=None) -> Tensor:
        if query.ndim != 3 or key.ndim != 3 or value.ndim != 3:
            raise T.ShapeError("attention inputs must be [batch, length, d_model]")
        if key.shape != value.shape:
            raise T.ShapeError(f"key {key.shape} and value {value.shape} shapes differ")
        batch, n_q, _ = query.shape
        n_k = key.shape[1]

        q = self._split(T.add_bias(T.matmul(query, self.w_query), self.b_query), batch, n_q)
        k = self._split(T.add_bias(T.matmul(key, self.w_key), self.b_key), batch, n_k)
        v = self._split(T.add_bias(T.matmul(value, self.w_value), self.b_value), batch, n_k)

        scores = T.mul_const(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.d_head))
        if keep_mask is not None:
            additive = _keep_to_additive(np.asarray(keep_mask, dtype=bool), scores.shape)
            scores = T.add_const(scores, additive)
        weights = T.softmax(scores, axis=-1)
        if keep_mask is not None:
            # A row that attends to nothing comes out of softmax uniform
            # (all scores equally masked); force its context to zero.
            row_keep = np.broadcast_to(keep_mask, scores.shape).any(axis=-1, keepdims=True)
            if not row_keep.all():
                weights = T.mul_const(weights, row_keep.astype(weights.dtype))
        context = T.matmul(weights, v)
        context = T.reshape(T.transpose(context, (0, 2, 1, 3)), (batch, n_q, self.d_model))
        return T.add_bias(T.matmul(context, self.w_out), self.b_out)


class FeedForward:
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator, dtype):
        self.w1 = _normal(rng, (d_model, d_ff), INIT_STD, dtype)
        self.b1 = _zeros(d_ff, dtype)
        self.w2 = _normal(rng, (d_ff, d_model), INIT_STD, dtype)
        self.b2 = _zeros(d_model, dtype)

    def parameters(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def forward(self, x: Tensor) -> Tensor:
        hidden = T.relu(T.add_bias(T.matmul(x, self.w1), self.b1))
        return T.add_bias(T.matmul(hidden, self.w2), self.b2)


class Norm:
    def __init__(self, d_model: int, dtype, eps: float = 1e-5):
        self.gain = _ones(d_model, dtype)
        self.bias = _zeros(d_model, dtype)
        self.eps = eps

    def parameters(self) -> dict[str, Tensor]:
        return {"gain": self.gain, "bias": self.bias}

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


def _maybe_dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or p == 0.0:
        return x
    return T.dropout(x, p, rng)


class EncoderLayer:
    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype):
        self.attn = MultiHeadAttention(config.d_model, config.n_heads, rng, dtype)
        self.ff = FeedForward(config.d_model, config.d_ff, rng, dtype)
        self.attn_norm = Norm(config.d_model, dtype)
        self.ff_norm = Norm(config.d_model, dtype)
        self.dropout_p = config.dropout_p

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for prefix, module in (
            ("attn", self.attn), ("attn_norm", self.attn_norm),
            ("ff", self.ff), ("ff_norm", self.ff_norm),
        ):
            for name, p in module.parameters().items():
                out[f"{prefix}.{name}"] = p
        return out

    def forward(self, x: Tensor, keep_mask, rng) -> Tensor:
        h = self.attn_norm.forward(x)
        x = T.add(x, _maybe_dropout(self.attn.forward(h, h, h, keep_mask), self.dropout_p, rng))
        h = self.ff_norm.forward(x)
        return T.add(x, _maybe_dropout(self.ff.forward(h), self.dropout_p, rng))


class DecoderLayer:
    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype):
        self.self_attn = MultiHeadAttention(config.d_model, config.n_heads, rng, dtype)
        self.cross_attn = MultiHeadAttention(config.d_model, config.n_heads, rng, dtype)
        self.ff = FeedForward(config.d_model, config.d_ff, rng, dtype)
        self.self_norm = Norm(config.d_model, dtype)
        self.cross_norm = Norm(config.d_model, dtype)
        self.ff_norm = Norm(config.d_model, dtype)
        self.dropout_p = config.dropout_p

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for prefix, module in (
            ("self_attn", self.self_attn), ("self_norm", self.self_norm),
            ("cross_attn", self.cross_attn), ("cross_norm", self.cross_norm),
            ("ff", self.ff), ("ff_norm", self.ff_norm),
        ):
            for name, p in module.parameters().items():
                out[f"{prefix}.{name}"] = p
        return out

    def forward(self, x: Tensor, enc_out: Tensor, causal_keep, cross_keep, rng) -> Tensor:
        h = self.self_norm.forward(x)
        x = T.add(x, _maybe_dropout(self.self_attn.forward(h, h, h, causal_keep), self.dropout_p, rng))
        h = self.cross_norm.forward(x)
        x = T.add(
            x, _maybe_dropout(self.cross_attn.forward(h, enc_out, enc_out, cross_keep), self.dropout_p, rng)
        )
        h = self.ff_norm.forward(x)
        return T.add(x, _maybe_dropout(self.ff.forward(h), self.dropout_p, rng))


class TranscriptionModel:
    """The full seq2seq stack over byte-level ids.

    ``forward`` is teacher forcing for one example: ``target_prefix_ids``
    are the decoder inputs as given (the caller supplies the start token
    and shifting), and row t of the logits predicts the token that
    follows position t.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=T.DEFAULT_DTYPE):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = stream_rng(seed, STREAM_INIT)
        d = config.d_model
        # Construction order fixes the init stream; do not reorder.
        self.embedding = _normal(rng, (config.vocab_size, d), d ** -0.5, self.dtype)
        self.positions = sinusoidal_positions(config.max_positions, d, self.dtype)
        self.encoder = [EncoderLayer(config, rng, self.dtype) for _ in range(config.encoder_layers)]
        self.encoder_norm = Norm(d, self.dtype)
        self.decoder = [DecoderLayer(config, rng, self.dtype) for _ in range(config.decoder_layers)]
        self.decoder_norm = Norm(d, self.dtype)
        self.out_weight = _normal(rng, (d, config.vocab_size), INIT_STD, self.dtype)
        self.out_bias = _zeros(config.vocab_size, self.dtype)

    # -- parameter access ---------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {"embedding": self.embedding}
        for i, layer in enumerate(self.encoder):
            for name, p in layer.parameters().items():
                out[f"encoder.{i}.{name}"] = p
        for name, p in self.encoder_norm.parameters().items():
            out[f"encoder_norm.{name}"] = p
        for i, layer in enumerate(self.decoder):
            for name, p in layer.parameters().items():
                out[f"decoder.{i}.{name}"] = p
        for name, p in self.decoder_norm.parameters().items():
            out[f"decoder_norm.{name}"] = p
        out["out_weight"] = self.out_weight
        out["out_bias"] = self.out_bias
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def encoder_parameter_count(self) -> int:
        params = self.named_parameters()
        return sum(p.size for n, p in params.items() if n.startswith(("encoder.", "encoder_norm.")))

    def decoder_parameter_count(self) -> int:
        params = self.named_parameters()
        return sum(p.size for n, p in params.items() if n.startswith(("decoder.", "decoder_norm.")))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise ValueError(f"state dict mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=self.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != expected {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    # -- validation ---------------------------------------------------------

    def _check_ids(self, ids: np.ndarray, what: str) -> None:
        if ids.size == 0:
            return
        lo, hi = int(ids.min()), int(ids.max())
        if lo < 0 or hi >= self.config.vocab_size:
            bad = lo if lo < 0 else hi
            raise UnknownIdError(
                f"{what} id {bad} outside vocabulary of size {self.config.vocab_size}"
            )

    def _check_length(self, length: int, what: str) -> None:
        if length > self.config.max_positions:
            raise SequenceLengthError(
                f"{what} length {length} exceeds max_positions {self.config.max_positions}"
            )

    # -- forward passes -----------------------------------------------------

    def _embed(self, ids: np.ndarray, rng) -> Tensor:
        x = T.embedding_lookup(self.embedding, ids)
        x = T.mul_const(x, math.sqrt(self.config.d_model))
        x = T.add_const(x, self.positions[: ids.shape[-1]])
        return _maybe_dropout(x, self.config.dropout_p, rng)

    def encode_source(self, source_ids, source_keep=None, dropout_rng=None) -> Tensor:
        """Run the encoder: [batch, src_len] ids -> [batch, src_len, d_model].

        ``source_keep`` marks real (non-padding) positions; None means all.
        """
        ids = np.asarray(source_ids, dtype=np.int64)
        if ids.ndim != 2:
            raise T.ShapeError(f"encode_source expects [batch, src_len] ids, got {ids.shape}")
        self._check_ids(ids, "source")
        self._check_length(ids.shape[1], "source")
        keep = np.ones(ids.shape, dtype=bool) if source_keep is None else np.asarray(source_keep, bool)
        if keep.shape != ids.shape:
            raise T.ShapeError(f"source mask {keep.shape} does not match ids {ids.shape}")
        attend = keep[:, None, None, :]
        x = self._embed(ids, dropout_rng)
        for layer in self.encoder:
            x = layer.forward(x, attend, dropout_rng)
        return self.encoder_norm.forward(x)

    def decoder_logits(self, enc_out: Tensor, source_keep, target_in, dropout_rng=None) -> Tensor:
        """Teacher-forced decoder: [batch, tgt_len] ids -> [batch, tgt_len, vocab]."""
        ids = np.asarray(target_in, dtype=np.int64)
        if ids.ndim != 2:
            raise T.ShapeError(f"decoder_logits expects [batch, tgt_len] ids, got {ids.shape}")
        self._check_ids(ids, "target")
        self._check_length(ids.shape[1], "target")
        n_t = ids.shape[1]
        causal = np.tril(np.ones((n_t, n_t), dtype=bool))[None, None, :, :]
        if source_keep is None:
            cross = None
        else:
            cross = np.asarray(source_keep, bool)[:, None, None, :]
        y = self._embed(ids, dropout_rng)
        for layer in self.decoder:
            y = layer.forward(y, enc_out, causal, cross, dropout_rng)
        y = self.decoder_norm.forward(y)
        return T.add_bias(T.matmul(y, self.out_weight), self.out_bias)

    def forward_batch(self, source_ids, target_in, dropout_rng=None, pad_id: int = PAD_ID) -> Tensor:
        """Batched teacher forcing; padding is masked out of attention."""
        src = np.asarray(source_ids, dtype=np.int64)
        keep = src != pad_id
        enc = self.encode_source(src, keep, dropout_rng)
        return self.decoder_logits(enc, keep, target_in, dropout_rng)

    def forward(self, source_ids, target_prefix_ids) -> Tensor:
        """Single example, no dropout: logits [len(target_prefix), vocab]."""
        src = np.asarray(list(source_ids), dtype=np.int64)[None, :]
        tgt = np.asarray(list(target_prefix_ids), dtype=np.int64)[None, :]
        enc = self.encode_source(src, None)
        logits = self.decoder_logits(enc, None, tgt)
        return T.reshape(logits, (tgt.shape[1], self.config.vocab_size))


def resize_embeddings(model: TranscriptionModel, new_vocab_size: int, seed: int | None = None) -> TranscriptionModel:
    """Grow the vocabulary in place, preserving all trained rows bit-exactly.

    New embedding rows and output-projection columns are drawn from
    N(0, 0.02^2) on a stream keyed by (seed, old size, new size), so the
    same resize on the same run is reproducible.
    """
    old = model.config.vocab_size
    if new_vocab_size < old:
        raise ValueError(f"cannot shrink vocabulary from {old} to {new_vocab_size}")
    if new_vocab_size == old:
        return model
    rng = stream_rng(seed if seed is not None else model.seed, STREAM_RESIZE, old, new_vocab_size)
    extra = new_vocab_size - old
    d = model.config.d_model
    new_rows = rng.normal(0.0, INIT_STD, size=(extra, d)).astype(model.dtype)
    new_cols = rng.normal(0.0, INIT_STD, size=(d, extra)).astype(model.dtype)
    model.embedding = Tensor(
        np.concatenate([model.embedding.data, new_rows], axis=0), requires_grad=True
    )
    model.out_weight = Tensor(
        np.concatenate([model.out_weight.data, new_cols], axis=1), requires_grad=True
    )
    model.out_bias = Tensor(
        np.concatenate([model.out_bias.data, np.zeros(extra, dtype=model.dtype)]),
        requires_grad=True,
    )
    model.config = dataclasses.replace(model.config, vocab_size=new_vocab_size)
    return model
