"""Binary checkpoints: header + named float32 tensor records.

Layout (all integers unsigned 64-bit little-endian):

    magic "DGT1"
    header_len, header          UTF-8 JSON: version, model config,
                                district labels, seed, step, meta
    repeated until EOF:
      name_len, name            UTF-8 tensor name
      rank, dims[rank]
      raw little-endian float32 data, C order

Round trips are bit-exact. Malformed files raise typed errors so
callers can distinguish corruption from version drift.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .model import ModelConfig, TranscriptionModel
from .tokenizer import Vocabulary

MAGIC = b"DGT1"
FORMAT_VERSION = 1

# Tensor names with these prefixes are auxiliary state (optimizer
# moments, best-model snapshots), not model parameters.
EXTRA_PREFIXES = ("opt.", "best.")

_MAX_NAME_LEN = 1 << 16
_MAX_RANK = 8


class CheckpointError(Exception):
    """Base for all checkpoint read/write failures."""


class CheckpointFormatError(CheckpointError):
    """Bad magic, malformed header, or inconsistent record structure."""


class CheckpointVersionError(CheckpointError):
    """The file's format version is not supported."""


class TruncatedCheckpointError(CheckpointError):
    """The file ends in the middle of a declared record."""


class CheckpointShapeError(CheckpointError):
    """A stored tensor's shape contradicts the stored configuration."""


@dataclass(frozen=True)
class CheckpointPayload:
    version: int
    config: ModelConfig
    districts: tuple[str, ...]
    seed: int
    step: int
    meta: dict = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def _write_u64(handle: BinaryIO, value: int) -> None:
    handle.write(int(value).to_bytes(8, "little"))


def _read_exact(handle: BinaryIO, n: int, what: str) -> bytes:
    # Corrupted length fields can demand absurd sizes; checking against
    # the bytes actually left keeps that a typed error, not a MemoryError.
    remaining = os.fstat(handle.fileno()).st_size - handle.tell()
    if n > remaining:
        raise TruncatedCheckpointError(
            f"file ended inside {what}: wanted {n} bytes, {remaining} remain"
        )
    data = handle.read(n)
    if len(data) != n:
        raise TruncatedCheckpointError(f"file ended inside {what}: wanted {n} bytes, got {len(data)}")
    return data


def _read_u64(handle: BinaryIO, what: str) -> int:
    return int.from_bytes(_read_exact(handle, 8, what), "little")


def write_checkpoint(
    path: str | Path,
    *,
    config: ModelConfig,
    districts: tuple[str, ...],
    tensors: Mapping[str, np.ndarray],
    seed: int,
    step: int,
    meta: Mapping | None = None,
) -> None:
    """Serialize tensors (sorted by name) under a JSON header."""
    header = {
        "version": FORMAT_VERSION,
        "config": config.to_dict(),
        "districts": list(districts),
        "seed": int(seed),
        "step": int(step),
        "meta": dict(meta or {}),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as handle:
        handle.write(MAGIC)
        _write_u64(handle, len(header_bytes))
        handle.write(header_bytes)
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            if arr.dtype != np.float32:
                raise ValueError(f"tensor {name!r} must be float32, got {arr.dtype}")
            name_bytes = name.encode("utf-8")
            _write_u64(handle, len(name_bytes))
            handle.write(name_bytes)
            _write_u64(handle, arr.ndim)
            for dim in arr.shape:
                _write_u64(handle, dim)
            handle.write(arr.astype("<f4", copy=False).tobytes())


def read_checkpoint(path: str | Path) -> CheckpointPayload:
    """Parse a checkpoint file into its header and tensor map."""
    with Path(path).open("rb") as handle:
        magic = handle.read(len(MAGIC))
        if len(magic) < len(MAGIC):
            raise TruncatedCheckpointError("file shorter than the magic prefix")
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        header_len = _read_u64(handle, "header length")
        header_bytes = _read_exact(handle, header_len, "header")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"header is not valid JSON: {exc}") from exc
        if not isinstance(header, dict):
            raise CheckpointFormatError("header must be a JSON object")
        version = header.get("version")
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(f"unsupported format version {version!r}")
        for key in ("config", "districts", "seed", "step"):
            if key not in header:
                raise CheckpointFormatError(f"header is missing {key!r}")
        try:
            config = ModelConfig.from_dict(header["config"])
        except (TypeError, ValueError) as exc:
            raise CheckpointFormatError(f"invalid model config in header: {exc}") from exc

        tensors: dict[str, np.ndarray] = {}
        while True:
            first = handle.read(8)
            if not first:
                break
            if len(first) != 8:
                raise TruncatedCheckpointError("file ended inside a tensor name length")
            name_len = int.from_bytes(first, "little")
            if name_len == 0 or name_len > _MAX_NAME_LEN:
                raise CheckpointFormatError(f"implausible tensor name length {name_len}")
            try:
                name = _read_exact(handle, name_len, "tensor name").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CheckpointFormatError(f"tensor name is not valid UTF-8: {exc}") from exc
            if name in tensors:
                raise CheckpointFormatError(f"duplicate tensor {name!r}")
            rank = _read_u64(handle, f"rank of {name!r}")
            if rank > _MAX_RANK:
                raise CheckpointFormatError(f"implausible rank {rank} for tensor {name!r}")
            dims = tuple(_read_u64(handle, f"dims of {name!r}") for _ in range(rank))
            count = 1
            for dim in dims:
                count *= dim
            data = _read_exact(handle, count * 4, f"data of {name!r}")
            tensors[name] = np.frombuffer(data, dtype="<f4").reshape(dims).copy()

    return CheckpointPayload(
        version=version,
        config=config,
        districts=tuple(header["districts"]),
        seed=int(header["seed"]),
        step=int(header["step"]),
        meta=dict(header.get("meta", {})),
        tensors=tensors,
    )


def save_checkpoint(
    path: str | Path,
    model: TranscriptionModel,
    vocab: Vocabulary,
    *,
    step: int = 0,
    meta: Mapping | None = None,
    extras: Mapping[str, np.ndarray] | None = None,
) -> None:
    """Write a model (plus optional auxiliary blobs) to ``path``.

    ``extras`` names must carry one of the reserved prefixes so loading
    can tell them apart from parameters.
    """
    if vocab.size != model.config.vocab_size:
        raise ValueError(
            f"vocabulary size {vocab.size} does not match model vocab {model.config.vocab_size}"
        )
    tensors = dict(model.state_dict())
    for name, arr in (extras or {}).items():
        if not name.startswith(EXTRA_PREFIXES):
            raise ValueError(f"extra tensor {name!r} must use one of the prefixes {EXTRA_PREFIXES}")
        if name in tensors:
            raise ValueError(f"extra tensor {name!r} collides with a model parameter")
        tensors[name] = np.asarray(arr, dtype=np.float32)
    write_checkpoint(
        path,
        config=model.config,
        districts=vocab.districts,
        tensors=tensors,
        seed=model.seed,
        step=step,
        meta=meta,
    )


def load_checkpoint(path: str | Path) -> tuple[TranscriptionModel, Vocabulary, CheckpointPayload]:
    """Rebuild the model and vocabulary stored at ``path``.

    Auxiliary blobs stay in the returned payload's tensor map; model
    parameters are validated against the stored config (every one
    present exactly once, shapes consistent) and loaded bit-exactly.
    """
    payload = read_checkpoint(path)
    vocab = Vocabulary(payload.districts)
    if vocab.size != payload.config.vocab_size:
        raise CheckpointShapeError(
            f"header declares {len(payload.districts)} districts (vocab {vocab.size}) "
            f"but config vocab_size is {payload.config.vocab_size}"
        )
    model = TranscriptionModel(payload.config, seed=payload.seed)
    params = model.named_parameters()
    stored = {n: a for n, a in payload.tensors.items() if not n.startswith(EXTRA_PREFIXES)}
    missing = sorted(set(params) - set(stored))
    unexpected = sorted(set(stored) - set(params))
    if missing:
        raise CheckpointFormatError(f"checkpoint is missing parameters: {missing}")
    if unexpected:
        raise CheckpointFormatError(f"checkpoint has unexpected tensors: {unexpected}")
    for name, p in params.items():
        if stored[name].shape != p.shape:
            raise CheckpointShapeError(
                f"parameter {name}: stored shape {stored[name].shape} != expected {p.shape}"
            )
    model.load_state_dict(stored)
    return model, vocab, payload
