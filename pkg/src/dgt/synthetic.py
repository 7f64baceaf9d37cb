"""Synthetic district-conditioned transcription corpora.

Words are random strings over a small grapheme alphabet; each district
carries its own grapheme-to-IPA rewrite rules, so the same spelling can
map to different transcriptions depending on the district. The generator
also reports the ambiguity floor: the best word accuracy any predictor
that cannot see the district could possibly reach on the generated
distribution, which is what makes conditioning measurable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .data import Example
from .seeding import STREAM_CORPUS, stream_rng


class MissingDistrictRules(ValueError):
    """A district was requested that the rule set has no entry for."""


@dataclass(frozen=True)
class RewriteRule:
    """Rewrite ``source`` (one or more graphemes) to ``output``."""

    source: str
    output: str

    def __post_init__(self):
        if not self.source:
            raise ValueError("rewrite rule source must be non-empty")


@dataclass(frozen=True)
class RuleSet:
    """Per-district rewrite rules over a shared grapheme alphabet.

    Application is leftmost-longest in a single pass: at each position
    the longest matching rule fires (first listed wins ties), its output
    is emitted without rescanning, and unmatched graphemes pass through
    unchanged.
    """

    alphabet: tuple[str, ...]
    district_rules: dict[str, tuple[RewriteRule, ...]] = field(default_factory=dict)

    def rules_for(self, district: str) -> tuple[RewriteRule, ...]:
        try:
            return self.district_rules[district]
        except KeyError:
            raise MissingDistrictRules(f"no rules for district {district!r}") from None

    def apply(self, word: str, district: str) -> str:
        rules = self.rules_for(district)
        out: list[str] = []
        i = 0
        while i < len(word):
            best: RewriteRule | None = None
            for rule in rules:
                if word.startswith(rule.source, i):
                    if best is None or len(rule.source) > len(best.source):
                        best = rule
            if best is None:
                out.append(word[i])
                i += 1
            else:
                out.append(best.output)
                i += len(best.source)
        return "".join(out)

    def ambiguous_graphemes(self, districts: Sequence[str]) -> tuple[str, ...]:
        """Alphabet symbols whose transcription differs across districts."""
        found = []
        for g in self.alphabet:
            outputs = {self.apply(g, d) for d in districts}
            if len(outputs) > 1:
                found.append(g)
        return tuple(found)


# Base graphemes and the IPA strings districts rewrite them to. 'k' leads
# so the two-district default gives k -> kʰ / k -> x.
_GRAPHEME_BASE = "kabdegilmnoprstuvwyz"
_IPA_POOL = (
    "kʰ", "x", "ɣ", "q", "tʃ", "dʒ", "ʃ", "ʒ", "θ", "ð",
    "ŋ", "ɲ", "ʂ", "ʐ", "ɸ", "β", "ʈ", "ɖ", "ħ", "ʕ",
)


def build_rules(districts: Sequence[str], n_graphemes: int, n_ambiguous: int) -> RuleSet:
    """A rule set where the first ``n_ambiguous`` graphemes are district
    dependent and the rest pass through identically everywhere."""
    if not districts:
        raise ValueError("need at least one district")
    if not 1 <= n_graphemes <= len(_GRAPHEME_BASE):
        raise ValueError(f"n_graphemes must be in [1, {len(_GRAPHEME_BASE)}], got {n_graphemes}")
    if not 0 <= n_ambiguous <= n_graphemes:
        raise ValueError(f"n_ambiguous must be in [0, {n_graphemes}], got {n_ambiguous}")
    alphabet = tuple(_GRAPHEME_BASE[:n_graphemes])
    n_districts = len(districts)
    rules: dict[str, tuple[RewriteRule, ...]] = {}
    for j, district in enumerate(districts):
        per_district = []
        for i in range(n_ambiguous):
            output = _IPA_POOL[(i * n_districts + j) % len(_IPA_POOL)]
            per_district.append(RewriteRule(alphabet[i], output))
        rules[district] = tuple(per_district)
    return RuleSet(alphabet, rules)


@dataclass(frozen=True)
class AmbiguityFloor:
    """Ceiling on district-blind performance over a word distribution.

    ``accuracy`` is the expected word accuracy of the best predictor that
    maps each spelling to a single fixed transcription; ``min_wer`` is
    the word error rate (percent) that accuracy translates to when every
    example is a single word.
    """

    accuracy: float
    min_wer: float
    ambiguous_word_fraction: float


def ambiguity_floor(
    rules: RuleSet, districts: Sequence[str], words: Sequence[str]
) -> AmbiguityFloor:
    """Best district-blind accuracy, averaged over ``words``.

    Districts are weighted uniformly: for each word the optimal blind
    guess is the transcription shared by the most districts, scoring
    that count over the district total. ``words`` should be draws from
    the distribution of interest (e.g. all corpus rows), so the average
    estimates the distributional ceiling rather than row memorization.
    """
    if not words:
        raise ValueError("need at least one word")
    if not districts:
        raise ValueError("need at least one district")
    n = len(districts)
    total = 0.0
    ambiguous = 0
    for word in words:
        counts: dict[str, int] = {}
        for d in districts:
            t = rules.apply(word, d)
            counts[t] = counts.get(t, 0) + 1
        total += max(counts.values()) / n
        ambiguous += len(counts) > 1
    accuracy = total / len(words)
    return AmbiguityFloor(
        accuracy=accuracy,
        min_wer=100.0 * (1.0 - accuracy),
        ambiguous_word_fraction=ambiguous / len(words),
    )


@dataclass(frozen=True)
class SyntheticCorpus:
    examples: tuple[Example, ...]
    floor: AmbiguityFloor


def generate_corpus(
    rules: RuleSet,
    districts: Sequence[str],
    n_per_district: int,
    word_len_range: tuple[int, int],
    seed: int,
) -> SyntheticCorpus:
    """Sample labeled examples, one random word each, per district.

    Deterministic given ``seed``: the word stream depends only on
    (seed, district order, n_per_district, word_len_range).
    """
    if not districts:
        raise ValueError("need at least one district")
    if n_per_district < 1:
        raise ValueError(f"n_per_district must be >= 1, got {n_per_district}")
    lo, hi = word_len_range
    if not 1 <= lo <= hi:
        raise ValueError(f"word length range must satisfy 1 <= lo <= hi, got {word_len_range}")
    for d in districts:
        rules.rules_for(d)

    rng = stream_rng(seed, STREAM_CORPUS)
    alphabet = rules.alphabet
    examples: list[Example] = []
    index = 0
    for district in districts:
        for _ in range(n_per_district):
            length = int(rng.integers(lo, hi + 1))
            word = "".join(alphabet[k] for k in rng.integers(0, len(alphabet), size=length))
            examples.append(Example(index, district, word, rules.apply(word, district)))
            index += 1
    floor = ambiguity_floor(rules, districts, [ex.contents for ex in examples])
    return SyntheticCorpus(tuple(examples), floor)
