"""Corpus files, descriptive statistics, and model-ready encoding.

The interchange format is UTF-8 CSV with a header. Training files carry
``index,district,contents,ipa``; test files omit ``ipa``; prediction
files carry ``index,ipa``. Quoted fields may contain commas, doubled
quotes, and newlines.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .tokenizer import Vocabulary

CORPUS_COLUMNS = ("index", "district", "contents")
TARGET_COLUMN = "ipa"
PREDICTION_COLUMNS = ("index", "ipa")


class CorpusFormatError(ValueError):
    """A corpus or prediction file violates the interchange schema."""


@dataclass(frozen=True)
class Example:
    """One corpus row; ``ipa`` is None for unlabeled test rows."""

    index: int
    district: str
    contents: str
    ipa: str | None = None


def _open_rows(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError(f"{path}: file does not exist")
    # utf-8-sig so a BOM from spreadsheet exports does not corrupt the header
    handle = path.open("r", encoding="utf-8-sig", newline="")
    return handle, csv.reader(handle)


def load_corpus(path: str | Path, expect_targets: bool) -> list[Example]:
    """Parse a corpus file; raises CorpusFormatError with the row number."""
    want = CORPUS_COLUMNS + (TARGET_COLUMN,) if expect_targets else CORPUS_COLUMNS
    handle, reader = _open_rows(path)
    examples: list[Example] = []
    seen_indices: set[int] = set()
    with handle:
        header = next(reader, None)
        if header is None:
            raise CorpusFormatError(f"{path}: empty file, expected header {','.join(want)}")
        if tuple(header) != want:
            raise CorpusFormatError(
                f"{path}: header {','.join(header)!r} does not match schema {','.join(want)}"
            )
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(want):
                raise CorpusFormatError(
                    f"{path}: row {row_no}: expected {len(want)} fields, got {len(row)}"
                )
            raw_index, district, contents = row[0], row[1], row[2]
            try:
                index = int(raw_index)
            except ValueError:
                raise CorpusFormatError(
                    f"{path}: row {row_no}: index {raw_index!r} is not an integer"
                ) from None
            if index in seen_indices:
                raise CorpusFormatError(f"{path}: row {row_no}: duplicate index {index}")
            seen_indices.add(index)
            if not district:
                raise CorpusFormatError(f"{path}: row {row_no}: district is empty")
            if len(contents) < 1:
                raise CorpusFormatError(f"{path}: row {row_no}: contents is empty")
            ipa: str | None = None
            if expect_targets:
                ipa = row[3]
                if not ipa:
                    raise CorpusFormatError(f"{path}: row {row_no}: ipa is empty")
            examples.append(Example(index, district, contents, ipa))
    return examples


def write_corpus(path: str | Path, examples: Sequence[Example]) -> None:
    """Write examples in the interchange schema; includes ipa when present."""
    with_targets = examples and examples[0].ipa is not None
    header = CORPUS_COLUMNS + (TARGET_COLUMN,) if with_targets else CORPUS_COLUMNS
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for ex in examples:
            row = [str(ex.index), ex.district, ex.contents]
            if with_targets:
                if ex.ipa is None:
                    raise CorpusFormatError(f"index {ex.index}: mixed labeled/unlabeled rows")
                row.append(ex.ipa)
            writer.writerow(row)


def load_predictions(path: str | Path) -> dict[int, str]:
    """Parse an ``index,ipa`` prediction file into an index-keyed map."""
    handle, reader = _open_rows(path)
    predictions: dict[int, str] = {}
    with handle:
        header = next(reader, None)
        if header is None or tuple(header) != PREDICTION_COLUMNS:
            got = ",".join(header) if header else "<empty>"
            raise CorpusFormatError(f"{path}: prediction header must be index,ipa, got {got!r}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise CorpusFormatError(f"{path}: row {row_no}: expected 2 fields, got {len(row)}")
            try:
                index = int(row[0])
            except ValueError:
                raise CorpusFormatError(
                    f"{path}: row {row_no}: index {row[0]!r} is not an integer"
                ) from None
            if index in predictions:
                raise CorpusFormatError(f"{path}: row {row_no}: duplicate index {index}")
            predictions[index] = row[1]
    return predictions


def write_predictions(path: str | Path, rows: Iterable[tuple[int, str]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for index, ipa in rows:
            writer.writerow([str(index), ipa])


@dataclass(frozen=True)
class ColumnStats:
    """Length and vocabulary statistics for one text column."""

    max_len: int
    min_len: int
    mean_len: float
    median_len: float
    unique_word_count: int


@dataclass(frozen=True)
class CorpusStats:
    """Per-column stats plus cross-corpus OOV when a test set is given."""

    train_contents: ColumnStats
    train_ipa: ColumnStats | None
    test_contents: ColumnStats | None = None
    oov_count: int | None = None
    oov_rate: float | None = None  # fraction of test word types unseen in train


def column_stats(texts: Sequence[str]) -> ColumnStats:
    """Codepoint-length stats and the unique whitespace-token count."""
    if not texts:
        raise ValueError("cannot compute statistics of an empty column")
    lengths = [len(t) for t in texts]
    words: set[str] = set()
    for t in texts:
        words.update(t.split())
    return ColumnStats(
        max_len=max(lengths),
        min_len=min(lengths),
        mean_len=statistics.fmean(lengths),
        median_len=float(statistics.median(lengths)),
        unique_word_count=len(words),
    )


def compute_stats(train: Sequence[Example], test: Sequence[Example] | None = None) -> CorpusStats:
    """Reproduce the corpus summary: lengths per column and test OOV rate.

    OOV is over word types: test-set unique whitespace tokens that never
    occur in the training contents.
    """
    if not train:
        raise ValueError("train corpus is empty")
    train_contents = column_stats([ex.contents for ex in train])
    ipa_texts = [ex.ipa for ex in train if ex.ipa is not None]
    train_ipa = column_stats(ipa_texts) if ipa_texts else None

    if test is None:
        return CorpusStats(train_contents, train_ipa)

    test_contents = column_stats([ex.contents for ex in test])
    train_words: set[str] = set()
    for ex in train:
        train_words.update(ex.contents.split())
    test_words: set[str] = set()
    for ex in test:
        test_words.update(ex.contents.split())
    oov = test_words - train_words
    rate = len(oov) / len(test_words) if test_words else 0.0
    return CorpusStats(train_contents, train_ipa, test_contents, len(oov), rate)


def encode_corpus(
    examples: Sequence[Example], vocab: Vocabulary, district_tokens: bool = True
) -> list[tuple[list[int], list[int]]]:
    """Encode labeled examples to (source ids, target ids) pairs.

    The district marker goes on the source side only; targets are the
    plain byte encoding of the IPA string. ``district_tokens=False``
    produces district-blind sources for ablation runs.
    """
    pairs: list[tuple[list[int], list[int]]] = []
    for ex in examples:
        if ex.ipa is None:
            raise CorpusFormatError(f"index {ex.index}: example has no target")
        source = vocab.encode(ex.contents, ex.district if district_tokens else None)
        target = vocab.encode(ex.ipa, None)
        pairs.append((source, target))
    return pairs
