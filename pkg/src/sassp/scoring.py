"""Word importance scores and target selection.

Saliency is the victim's per-word loss-gradient norm, attention the per-word
attention the victim reports. Both are min-max rescaled over the eligible
words of the sentence before being mixed, so ``alpha`` and ``beta`` act as
mixing weights regardless of the backend's gradient scale.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Sequence

from .core import MASK, LabeledExample, VictimOracle, check_word_scores

SASSP = "sassp"
CLARE = "clare"
MODES = (SASSP, CLARE)

DETERMINERS = frozenset({"a", "an", "the"})


class EmptyEligibleSet(ValueError):
    """No word of the sentence may be perturbed."""


@dataclass(frozen=True)
class SelectionConfig:
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 0.7
    top_k: int = 5
    mode: str = SASSP

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("alpha, beta must be >= 0 with alpha + beta > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be a positive integer")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class TokenScores:
    saliency: tuple[float, ...]
    attention: tuple[float, ...]
    saliency_norm: tuple[float, ...]
    attention_norm: tuple[float, ...]
    combined: tuple[float, ...]
    eligible: tuple[bool, ...]


def is_punctuation(word: str) -> bool:
    return all(ch in string.punctuation or not ch.isalnum() for ch in word)


def eligibility_mask(words: Sequence[str]) -> tuple[bool, ...]:
    """Punctuation, determiners and the mask symbol are never targets."""
    return tuple(
        not (w == MASK or is_punctuation(w) or w.lower() in DETERMINERS) for w in words
    )


def compute_saliency(example: LabeledExample, victim: VictimOracle) -> tuple[float, ...]:
    n = len(example.attackable)
    if n == 0:
        raise ValueError("attackable text has no words")
    return check_word_scores(victim.loss_gradient_norms(example, example.gold_label), n,
                             what="loss_gradient_norms")


def compute_attention(example: LabeledExample, victim: VictimOracle) -> tuple[float, ...]:
    n = len(example.attackable)
    if n == 0:
        raise ValueError("attackable text has no words")
    return check_word_scores(victim.attention_received(example), n, upper=1.0,
                             what="attention_received")


def normalize_scores(raw: Sequence[float], eligible: Sequence[bool]) -> tuple[float, ...]:
    """Min-max rescale the eligible entries into [0, 1]; others become 0.

    If every eligible entry is equal they all map to 1.
    """
    if len(raw) != len(eligible):
        raise ValueError("raw and eligible differ in length")
    vals = [x for x, ok in zip(raw, eligible) if ok]
    if not vals:
        return tuple(0.0 for _ in raw)
    lo, hi = min(vals), max(vals)
    span = hi - lo
    out = []
    for x, ok in zip(raw, eligible):
        if not ok:
            out.append(0.0)
        elif span == 0:
            out.append(1.0)
        else:
            out.append((x - lo) / span)
    return tuple(out)


def combine_scores(saliency_norm: Sequence[float], attention_norm: Sequence[float],
                   config: SelectionConfig) -> tuple[float, ...]:
    if len(saliency_norm) != len(attention_norm):
        raise ValueError("score lists differ in length")
    return tuple(config.alpha * s + config.beta * a for s, a in zip(saliency_norm, attention_norm))


def score_words(example: LabeledExample, victim: VictimOracle,
                config: SelectionConfig) -> TokenScores:
    """Score every word of the attackable text.

    Clare mode ranks by saliency alone, so the attention query is skipped and
    attention is reported as zeros.
    """
    words = example.attackable.words
    eligible = eligibility_mask(words)
    saliency = compute_saliency(example, victim)
    if config.mode == CLARE:
        attention = tuple(0.0 for _ in words)
    else:
        attention = compute_attention(example, victim)
    s_norm = normalize_scores(saliency, eligible)
    a_norm = normalize_scores(attention, eligible)
    combined = tuple(c if ok else 0.0
                     for c, ok in zip(combine_scores(s_norm, a_norm, config), eligible))
    return TokenScores(saliency, attention, s_norm, a_norm, combined, eligible)


def _descending(indices, values) -> list[int]:
    return sorted(indices, key=lambda i: (-values[i], i))


def select_targets(combined: Sequence[float], eligible: Sequence[bool],
                   config: SelectionConfig,
                   saliency: Sequence[float] | None = None) -> list[int]:
    """Pick the word indices to perturb, most important first.

    sassp: every eligible word whose combined score reaches
    ``gamma * max(combined over eligible)``.
    clare: the ``top_k`` eligible words by raw saliency (``saliency`` when
    given, otherwise ``combined``). Ties go to the lower index.
    """
    if len(combined) != len(eligible):
        raise ValueError("combined and eligible differ in length")
    pool = [i for i, ok in enumerate(eligible) if ok]
    if not pool:
        raise EmptyEligibleSet("no eligible word to perturb")
    if config.mode == CLARE:
        ranking = saliency if saliency is not None else combined
        return _descending(pool, ranking)[: config.top_k]
    threshold = config.gamma * max(combined[i] for i in pool)
    return _descending([i for i in pool if combined[i] >= threshold], combined)
