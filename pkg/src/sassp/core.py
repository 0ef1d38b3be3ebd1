"""Shared value types and the oracle interfaces the attack is parameterized by.

Every model the attack touches (victim classifier, mask filler, sentence
embedder, paraphrase scorer, causal LM, grammar checker) is reached through
one of the ``Protocol`` classes below. Nothing in the algorithm constructs a
model itself.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol, Sequence, runtime_checkable

MASK = "[MASK]"

TEXT_FIELDS = ("text", "text_a", "text_b")

_WORD_RE = re.compile(r"\w+(?:['’\-]\w+)*|[^\w\s]", re.UNICODE)

_CLOSING = set(".,!?;:%)]}")
_OPENING = set("([{$#")
_QUOTES = {'"', "`"}


class OracleError(RuntimeError):
    """An oracle returned something that violates its contract."""


def tokenize(raw: str) -> "TokenizedText":
    """Split ``raw`` into words, detaching punctuation into its own words.

    Apostrophes and hyphens between word characters stay inside the word, so
    ``"don't stop"`` gives ``["don't", "stop"]``.
    """
    words = tuple(_WORD_RE.findall(raw))
    return TokenizedText(words=words, raw=raw)


def detokenize(text: "TokenizedText | Sequence[str]") -> str:
    """Join words with single spaces, re-attaching punctuation.

    Closing punctuation sticks to the word before it, opening brackets to the
    word after. Double quotes alternate between opening and closing.
    """
    words = text.words if isinstance(text, TokenizedText) else tuple(text)
    out: list[str] = []
    glue_next = False
    quote_open = False
    for w in words:
        if w in _QUOTES:
            closing = quote_open
            quote_open = not quote_open
        else:
            closing = w in _CLOSING
        if out and (closing or glue_next):
            out[-1] += w
        else:
            out.append(w)
        glue_next = w in _OPENING or (w in _QUOTES and quote_open)
    return " ".join(out)


@dataclass(frozen=True)
class TokenizedText:
    """Word-level view of a text.

    ``subword_spans`` maps each word to a half-open range of the backend's
    subword positions. Backends without subwords use the identity alignment.
    """

    words: tuple[str, ...]
    raw: str = ""
    subword_spans: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        if not self.subword_spans:
            spans = tuple((i, i + 1) for i in range(len(self.words)))
            object.__setattr__(self, "subword_spans", spans)
        else:
            spans = tuple(tuple(s) for s in self.subword_spans)
            object.__setattr__(self, "subword_spans", spans)
            if len(spans) != len(self.words):
                raise ValueError("one subword span per word required")
            prev_end = None
            for start, end in spans:
                if end <= start or (prev_end is not None and start < prev_end):
                    raise ValueError(f"subword spans must be ordered and non-overlapping: {spans}")
                prev_end = end
        if not self.raw and self.words:
            object.__setattr__(self, "raw", detokenize(self.words))

    def __len__(self) -> int:
        return len(self.words)

    def __str__(self) -> str:
        return detokenize(self)

    @classmethod
    def from_words(cls, words: Sequence[str]) -> "TokenizedText":
        return cls(words=tuple(words), raw=detokenize(words))

    def with_word(self, index: int, word: str) -> "TokenizedText":
        if not 0 <= index < len(self.words):
            raise IndexError(f"word index {index} out of range for {len(self.words)} words")
        words = list(self.words)
        words[index] = word
        return TokenizedText.from_words(words)


@dataclass(frozen=True)
class LabeledExample:
    """One classification input, single-text or sentence pair.

    ``attack_field`` names the member the attack perturbs; the other member of
    a pair is held fixed.
    """

    text_a: TokenizedText
    gold_label: int
    text_b: Optional[TokenizedText] = None
    attack_field: str = "text_a"

    def __post_init__(self):
        if self.gold_label < 0:
            raise ValueError("gold_label must be >= 0")
        if self.attack_field not in ("text_a", "text_b"):
            raise ValueError(f"attack_field must be text_a or text_b, got {self.attack_field!r}")
        if self.attack_field == "text_b" and self.text_b is None:
            raise ValueError("attack_field text_b requires a sentence pair")

    @classmethod
    def from_strings(cls, text_a: str, gold_label: int, text_b: str | None = None,
                     attack_field: str | None = None) -> "LabeledExample":
        if attack_field is None:
            attack_field = "text_b" if text_b is not None else "text_a"
        return cls(
            text_a=tokenize(text_a),
            gold_label=gold_label,
            text_b=tokenize(text_b) if text_b is not None else None,
            attack_field=attack_field,
        )

    @property
    def is_pair(self) -> bool:
        return self.text_b is not None

    @property
    def attackable(self) -> TokenizedText:
        return getattr(self, self.attack_field)

    def with_attackable(self, text: TokenizedText) -> "LabeledExample":
        return replace(self, **{self.attack_field: text})


@dataclass(frozen=True)
class PredictionProfile:
    class_probabilities: tuple[float, ...]
    predicted_label: int = field(default=-1)

    def __post_init__(self):
        probs = tuple(float(p) for p in self.class_probabilities)
        object.__setattr__(self, "class_probabilities", probs)
        if not probs:
            raise OracleError("empty probability vector")
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise OracleError(f"invalid class probabilities {probs}")
        if abs(sum(probs) - 1.0) > 1e-6:
            raise OracleError(f"class probabilities sum to {sum(probs)}, not 1")
        best = max(range(len(probs)), key=lambda i: (probs[i], -i))
        if self.predicted_label == -1:
            object.__setattr__(self, "predicted_label", best)
        elif self.predicted_label != best:
            raise OracleError(f"predicted_label {self.predicted_label} is not argmax {best}")

    def prob(self, label: int) -> float:
        return self.class_probabilities[label]

    @property
    def num_classes(self) -> int:
        return len(self.class_probabilities)


@runtime_checkable
class VictimOracle(Protocol):
    """The classifier under attack.

    ``loss_gradient_norms`` and ``attention_received`` return one value per
    word of ``example.attackable``.
    """

    def predict(self, example: LabeledExample) -> PredictionProfile: ...

    def loss_gradient_norms(self, example: LabeledExample, gold_label: int) -> Sequence[float]: ...

    def attention_received(self, example: LabeledExample) -> Sequence[float]: ...


@runtime_checkable
class MaskFillOracle(Protocol):
    def fill(self, masked: "MaskedContext", mask_position: int, k: int) -> list[tuple[str, float]]: ...


@runtime_checkable
class SentenceEmbedOracle(Protocol):
    def embed(self, text: str) -> Sequence[float]: ...


@runtime_checkable
class ParaphraseOracle(Protocol):
    def score(self, text_a: str, text_b: str) -> float: ...


@runtime_checkable
class CausalLMOracle(Protocol):
    def log_likelihood(self, text: str) -> tuple[float, int]:
        """Return (sum of natural-log token probabilities, token count)."""
        ...


@runtime_checkable
class GrammarOracle(Protocol):
    def error_count(self, text: str) -> int: ...


def is_thread_safe(oracle) -> bool:
    """Oracles opt out of concurrent use with ``thread_safe = False``."""
    return bool(getattr(oracle, "thread_safe", True))


@dataclass(frozen=True)
class MaskedContext:
    """A text with exactly one word replaced by :data:`MASK`.

    ``original_word`` is kept alongside so table-driven fillers can look it
    up; contextual fillers ignore it.
    """

    text: TokenizedText
    mask_index: int
    original_word: str

    def __post_init__(self):
        if self.text.words[self.mask_index] != MASK:
            raise ValueError("mask_index does not point at the mask symbol")


@dataclass(frozen=True)
class OracleSuite:
    victim: VictimOracle
    mlm: MaskFillOracle
    embedder: SentenceEmbedOracle
    paraphraser: ParaphraseOracle
    lm: CausalLMOracle
    grammar: GrammarOracle
    # SES may be measured with a different embedder than the one gating edits
    metrics_embedder: Optional[SentenceEmbedOracle] = None

    @property
    def ses_embedder(self) -> SentenceEmbedOracle:
        return self.metrics_embedder if self.metrics_embedder is not None else self.embedder

    def members(self) -> dict[str, object]:
        return {
            "victim": self.victim,
            "mlm": self.mlm,
            "embedder": self.embedder,
            "paraphraser": self.paraphraser,
            "lm": self.lm,
            "grammar": self.grammar,
            "metrics_embedder": self.ses_embedder,
        }

    @property
    def thread_safe(self) -> bool:
        return all(is_thread_safe(o) for o in self.members().values())


def check_word_scores(values: Sequence[float], n_words: int, *, upper: float | None = None,
                      what: str = "scores") -> tuple[float, ...]:
    """Validate per-word oracle output at the interface boundary."""
    vals = tuple(float(v) for v in values)
    if len(vals) != n_words:
        raise OracleError(f"{what}: expected {n_words} values, got {len(vals)}")
    for v in vals:
        if not math.isfinite(v) or v < 0 or (upper is not None and v > upper + 1e-9):
            raise OracleError(f"{what}: value {v} out of range")
    return vals
