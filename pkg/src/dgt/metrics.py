"""Word and character error rates via Levenshtein alignment.

WER = (substitutions + deletions + insertions) / reference words * 100,
computed from a minimum-edit-distance alignment with unit costs over
whitespace-split words, compared verbatim (no case folding, no
punctuation stripping). Corpus scores are micro-averaged: error counts
and reference lengths are summed over all pairs before dividing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)


class EmptyReferenceError(ValueError):
    """The reference side has no tokens, so the rate is undefined."""


@dataclass(frozen=True)
class WerBreakdown:
    """Edit-operation counts from aligning one or more sentence pairs."""

    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def correct(self) -> int:
        return self.ref_words - self.substitutions - self.deletions

    @property
    def wer(self) -> float:
        if self.ref_words == 0:
            raise EmptyReferenceError("error rate undefined for an empty reference")
        return 100.0 * self.errors / self.ref_words


def _align(ref: Sequence, hyp: Sequence) -> WerBreakdown:
    """Minimum-edit alignment counts between two token sequences.

    Ties during backtrace resolve match/substitute first, then deletion,
    then insertion, which keeps the S/D/I split deterministic (only the
    sum is mathematically unique).
    """
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        row = dist[i]
        prev = dist[i - 1]
        for j in range(1, m + 1):
            hit = prev[j - 1] + (ref[i - 1] != hyp[j - 1])
            row[j] = min(hit, prev[j] + 1, row[j - 1] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i -= 1
            j -= 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WerBreakdown(int(subs), int(dels), int(ins), n)


def wer(reference: str, hypothesis: str) -> WerBreakdown:
    """Word-level alignment counts for one sentence pair.

    Words come from ``str.split()``: Unicode whitespace, runs collapsed.
    """
    ref_words = reference.split()
    if not ref_words:
        raise EmptyReferenceError("reference contains no words")
    return _align(ref_words, hypothesis.split())


def corpus_wer(pairs: Sequence[tuple[str, str]]) -> WerBreakdown:
    """Micro-averaged word-level counts over (reference, hypothesis) pairs.

    Pairs with an empty reference are skipped with a warning; if every
    pair is empty the rate is undefined and this raises.
    """
    subs = dels = ins = total = 0
    skipped = 0
    for reference, hypothesis in pairs:
        ref_words = reference.split()
        if not ref_words:
            skipped += 1
            continue
        b = _align(ref_words, hypothesis.split())
        subs += b.substitutions
        dels += b.deletions
        ins += b.insertions
        total += b.ref_words
    if skipped:
        logger.warning("skipped %d pair(s) with empty references", skipped)
    if total == 0:
        raise EmptyReferenceError("no non-empty references to score")
    return WerBreakdown(subs, dels, ins, total)


def cer(reference: str, hypothesis: str) -> WerBreakdown:
    """Character-level counts over Unicode codepoints, whitespace included."""
    if not reference:
        raise EmptyReferenceError("reference contains no characters")
    return _align(list(reference), list(hypothesis))
