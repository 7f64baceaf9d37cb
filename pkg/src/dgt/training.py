"""Teacher-forced training with AdamW and validation-WER early stopping.

The loop is deliberately boring: shuffle, sort within windows to bound
padding waste, step AdamW, then measure validation WER by actually
decoding (never by teacher forcing). Every random draw comes off a
stream keyed by (seed, purpose, epoch), so a run halted at an epoch
boundary and resumed from its saved state continues bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .data import Example, encode_corpus
from .decoding import DecodeConfig, greedy_decode
from .metrics import corpus_wer
from .model import SequenceLengthError, TranscriptionModel
from .seeding import STREAM_DROPOUT, STREAM_SHUFFLE, STREAM_SPLIT, stream_rng
from .tokenizer import PAD_ID, Vocabulary


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    learning_rate: float = 3e-4
    weight_decay: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.10
    seed: int = 0
    max_epochs: int = 50
    patience: int = 5
    sort_window: int = 64
    # Cap on validation-decode length; None derives a cap from the data
    # (twice the longest target) so early epochs cannot ramble for
    # thousands of steps.
    val_max_gen_len: int | None = None
    use_district_tokens: bool = True
    min_train_loss: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.sort_window < 1:
            raise ValueError(f"sort_window must be >= 1, got {self.sort_window}")


def split_train_val(
    examples: Sequence[Example], val_fraction: float, seed: int
) -> tuple[list[Example], list[Example]]:
    """Deterministic shuffle-split; validation takes round(fraction * N)."""
    n = len(examples)
    if n < 10:
        raise ValueError(f"need at least 10 examples to split, got {n}")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    k = round(val_fraction * n)
    if k == 0 or k == n:
        raise ValueError(f"val_fraction {val_fraction} leaves an empty split for {n} examples")
    order = stream_rng(seed, STREAM_SPLIT).permutation(n)
    val = [examples[i] for i in order[:k]]
    train = [examples[i] for i in order[k:]]
    return train, val


class AdamW:
    """Adam with decoupled weight decay over a named parameter dict.

    The decay term lr*wd*w is subtracted separately from the adaptive
    update. A step with any non-finite gradient aborts before touching
    parameters or moments.
    """

    def __init__(self, params: Mapping[str, T.Tensor], learning_rate: float = 3e-4,
                 weight_decay: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = dict(params)
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    @classmethod
    def for_model(cls, model: TranscriptionModel, config: TrainConfig) -> "AdamW":
        return cls(
            model.named_parameters(),
            learning_rate=config.learning_rate,
            weight_decay=config.weight_decay,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            eps=config.adam_eps,
        )

    def step(self) -> None:
        live = [(n, p, p.grad) for n, p in self.params.items() if p.grad is not None]
        for name, _, grad in live:
            if not np.all(np.isfinite(grad)):
                raise ValueError(f"non-finite gradient for parameter {name!r}; step aborted")
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for name, p, grad in live:
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / bias1
            v_hat = v / bias2
            p.data = (
                p.data
                - self.learning_rate * self.weight_decay * p.data
                - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
            )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "m": {n: a.copy() for n, a in self.m.items()},
            "v": {n: a.copy() for n, a in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        for kind in ("m", "v"):
            stored = state[kind]
            if set(stored) != set(self.params):
                raise ValueError(f"optimizer {kind} moments do not match the parameter set")
            target = self.m if kind == "m" else self.v
            for name, arr in stored.items():
                arr = np.asarray(arr, dtype=target[name].dtype)
                if arr.shape != target[name].shape:
                    raise ValueError(f"optimizer moment {kind}.{name}: shape mismatch")
                target[name] = arr.copy()
        self.step_count = int(state["step"])


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_wer: float
    best: bool


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_val_wer: float
    best_state: dict[str, np.ndarray]
    global_step: int
    stopped_early: bool


@dataclass
class ResumeState:
    """Counters and blobs needed to continue a run at an epoch boundary."""

    epoch: int
    global_step: int
    best_epoch: int
    best_val_wer: float
    epochs_since_best: int
    optimizer_state: dict
    best_state: dict[str, np.ndarray]
    use_district_tokens: bool


def _pad_batch(pairs: Sequence[tuple[list[int], list[int]]]):
    """Stack encoded pairs into (source, decoder input, labels) id grids.

    Decoder inputs are the targets shifted right behind a pad start
    token; label pads are ignored by the loss.
    """
    batch = len(pairs)
    s_max = max(len(src) for src, _ in pairs)
    t_max = max(len(tgt) for _, tgt in pairs)
    source = np.full((batch, s_max), PAD_ID, dtype=np.int64)
    dec_in = np.full((batch, t_max), PAD_ID, dtype=np.int64)
    labels = np.full((batch, t_max), PAD_ID, dtype=np.int64)
    for row, (src, tgt) in enumerate(pairs):
        source[row, : len(src)] = src
        dec_in[row, 1 : len(tgt)] = tgt[:-1]
        labels[row, : len(tgt)] = tgt
    return source, dec_in, labels


def _epoch_batches(pairs: Sequence[tuple[list[int], list[int]]], config: TrainConfig, epoch: int):
    """Batch index plan for one epoch: shuffle, then sort source lengths
    inside each window so batches pad against similar lengths."""
    order = stream_rng(config.seed, STREAM_SHUFFLE, epoch).permutation(len(pairs))
    batches: list[list[int]] = []
    for start in range(0, len(order), config.sort_window):
        window = sorted(order[start : start + config.sort_window], key=lambda i: len(pairs[i][0]))
        for b in range(0, len(window), config.batch_size):
            batches.append([int(i) for i in window[b : b + config.batch_size]])
    return batches


def _batch_loss(model: TranscriptionModel, source, dec_in, labels, dropout_rng):
    logits = model.forward_batch(source, dec_in, dropout_rng)
    batch, t_len, vocab = logits.shape
    flat = T.reshape(logits, (batch * t_len, vocab))
    return T.cross_entropy(flat, labels.reshape(-1), ignore_id=PAD_ID)


def evaluate_wer(
    model: TranscriptionModel,
    examples: Sequence[Example],
    vocab: Vocabulary,
    use_district_tokens: bool = True,
    max_gen_len: int | None = None,
) -> float:
    """Corpus WER of greedy decodes against the examples' targets."""
    cap = max_gen_len if max_gen_len is not None else model.config.max_gen_len
    decode_config = DecodeConfig(max_gen_len=cap)
    pairs = []
    for ex in examples:
        if ex.ipa is None:
            raise ValueError(f"index {ex.index}: example has no target to score against")
        district = ex.district if use_district_tokens else None
        hyp = greedy_decode(model, vocab, ex.contents, district, decode_config)
        pairs.append((ex.ipa, hyp))
    return corpus_wer(pairs).wer


def train(
    model: TranscriptionModel,
    examples: Sequence[Example],
    config: TrainConfig,
    vocab: Vocabulary,
    resume: ResumeState | None = None,
) -> TrainResult:
    """Run the loop; returns the per-epoch record and the best weights.

    "Best" means strictly lowest validation WER so far; training stops
    after ``patience`` epochs without improvement, at ``max_epochs``, or
    once train loss drops under ``min_train_loss`` when that is set.
    """
    for ex in examples:
        if ex.ipa is None:
            raise ValueError(f"index {ex.index}: training requires IPA targets on every row")
        vocab.district_id(ex.district)  # unregistered district fails fast

    train_examples, val_examples = split_train_val(examples, config.val_fraction, config.seed)
    pairs = encode_corpus(train_examples, vocab, config.use_district_tokens)

    max_pos = model.config.max_positions
    longest_src = max(len(src) for src, _ in pairs)
    longest_tgt = max(len(tgt) for _, tgt in pairs)
    if longest_src > max_pos or longest_tgt > max_pos:
        raise SequenceLengthError(
            f"encoded lengths (source {longest_src}, target {longest_tgt}) "
            f"exceed max_positions {max_pos}"
        )
    val_cap = config.val_max_gen_len
    if val_cap is None:
        val_cap = min(max_pos - 1, 2 * longest_tgt + 8)

    optimizer = AdamW.for_model(model, config)
    start_epoch = 1
    best_epoch = 0
    best_val_wer = math.inf
    best_state: dict[str, np.ndarray] = {}
    epochs_since_best = 0
    global_step = 0
    if resume is not None:
        optimizer.load_state_dict(resume.optimizer_state)
        start_epoch = resume.epoch + 1
        best_epoch = resume.best_epoch
        best_val_wer = resume.best_val_wer
        best_state = resume.best_state
        epochs_since_best = resume.epochs_since_best
        global_step = resume.global_step
        if resume.use_district_tokens != config.use_district_tokens:
            raise ValueError("resume state and config disagree on district token usage")

    history: list[EpochRecord] = []
    stopped_early = False
    for epoch in range(start_epoch, config.max_epochs + 1):
        dropout_rng = stream_rng(config.seed, STREAM_DROPOUT, epoch)
        loss_sum = 0.0
        token_sum = 0
        for batch_ids in _epoch_batches(pairs, config, epoch):
            source, dec_in, labels = _pad_batch([pairs[i] for i in batch_ids])
            optimizer.zero_grad()
            loss = _batch_loss(model, source, dec_in, labels, dropout_rng)
            T.backward(loss)
            optimizer.step()
            global_step += 1
            n_tokens = int((labels != PAD_ID).sum())
            loss_sum += loss.item() * n_tokens
            token_sum += n_tokens
        train_loss = loss_sum / token_sum

        val_wer = evaluate_wer(model, val_examples, vocab, config.use_district_tokens, val_cap)
        improved = val_wer < best_val_wer
        if improved:
            best_val_wer = val_wer
            best_epoch = epoch
            best_state = model.state_dict()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        history.append(EpochRecord(epoch, train_loss, val_wer, improved))

        if config.min_train_loss is not None and train_loss < config.min_train_loss:
            break
        if epochs_since_best >= config.patience:
            stopped_early = True
            break

    return TrainResult(history, best_epoch, best_val_wer, best_state, global_step, stopped_early)


# -- pause/resume plumbing ----------------------------------------------------


def save_train_state(
    path: str | Path,
    model: TranscriptionModel,
    vocab: Vocabulary,
    optimizer: AdamW,
    *,
    epoch: int,
    global_step: int,
    best_epoch: int,
    best_val_wer: float,
    epochs_since_best: int,
    best_state: Mapping[str, np.ndarray],
    use_district_tokens: bool,
) -> None:
    """Checkpoint the live run: current weights plus optimizer moments
    and the best-so-far snapshot, all restorable bit-exactly."""
    extras: dict[str, np.ndarray] = {}
    opt_state = optimizer.state_dict()
    for name, arr in opt_state["m"].items():
        extras[f"opt.m.{name}"] = arr
    for name, arr in opt_state["v"].items():
        extras[f"opt.v.{name}"] = arr
    for name, arr in best_state.items():
        extras[f"best.{name}"] = arr
    meta = {
        "kind": "train_state",
        "epoch": int(epoch),
        "global_step": int(global_step),
        "optimizer_step": int(opt_state["step"]),
        "best_epoch": int(best_epoch),
        "best_val_wer": float(best_val_wer),
        "epochs_since_best": int(epochs_since_best),
        "district_tokens": bool(use_district_tokens),
    }
    save_checkpoint(path, model, vocab, step=global_step, meta=meta, extras=extras)


def load_train_state(path: str | Path) -> tuple[TranscriptionModel, Vocabulary, ResumeState]:
    model, vocab, payload = load_checkpoint(path)
    meta = payload.meta
    if meta.get("kind") != "train_state":
        raise CheckpointFormatError(f"{path}: checkpoint does not hold a resumable run")
    moments_m: dict[str, np.ndarray] = {}
    moments_v: dict[str, np.ndarray] = {}
    best_state: dict[str, np.ndarray] = {}
    for name, arr in payload.tensors.items():
        if name.startswith("opt.m."):
            moments_m[name[len("opt.m.") :]] = arr
        elif name.startswith("opt.v."):
            moments_v[name[len("opt.v.") :]] = arr
        elif name.startswith("best."):
            best_state[name[len("best.") :]] = arr
    resume = ResumeState(
        epoch=int(meta["epoch"]),
        global_step=int(meta["global_step"]),
        best_epoch=int(meta["best_epoch"]),
        best_val_wer=float(meta["best_val_wer"]),
        epochs_since_best=int(meta["epochs_since_best"]),
        optimizer_state={"step": int(meta["optimizer_step"]), "m": moments_m, "v": moments_v},
        best_state=best_state,
        use_district_tokens=bool(meta["district_tokens"]),
    )
    return model, vocab, resume
