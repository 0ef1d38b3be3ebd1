"""Deterministic, closed-form oracles for exact end-to-end checks.

The toy victim scores a text with the bilinear logit

    z = sum_i (v . e_i) * (u . e_i)

and reports class probabilities ``(sigmoid(z), 1 - sigmoid(z))``. Because the
per-word term is quadratic, loss gradients differ from word to word and can
be written down by hand.

Fixture format
--------------
Toy specs are loaded from a plain-text file with one directive per line.
Blank lines and ``#`` comments are ignored. Words are case-insensitive.

    dim 2
    v 1 0
    u 0 1
    embed good 2 1          # word embedding, ``dim`` numbers
    mlm good great:0.6 fine:0.3
    vocab film movie        # extra words the bag-of-words embedder knows
    weight awful 5          # embedder count weight (default 1)
    lm_vocab_size 4         # uniform fallback for the toy LM
    lm_prob the 0.5         # explicit per-token LM probability
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (
    LabeledExample,
    MaskedContext,
    OracleSuite,
    PredictionProfile,
    tokenize,
)


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@dataclass(frozen=True)
class ToyVictimSpec:
    embeddings: Mapping[str, np.ndarray]
    v: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if v.ndim != 1 or v.shape != u.shape or v.size < 2:
            raise ValueError("v and u must be vectors of equal dimension >= 2")
        emb = {}
        for word, vec in self.embeddings.items():
            arr = np.asarray(vec, dtype=float)
            if arr.shape != v.shape:
                raise ValueError(f"embedding for {word!r} has shape {arr.shape}, expected {v.shape}")
            arr.setflags(write=False)
            emb[word.lower()] = arr
        v.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "embeddings", emb)

    @property
    def dim(self) -> int:
        return self.v.size

    def embedding(self, word: str) -> np.ndarray:
        vec = self.embeddings.get(word.lower())
        return vec if vec is not None else np.zeros(self.dim)

    def contribution(self, word: str) -> float:
        e = self.embedding(word)
        return float((self.v @ e) * (self.u @ e))


class ToyVictim:
    """Binary bilinear classifier; pair inputs are scored over both texts."""

    thread_safe = True

    def __init__(self, spec: ToyVictimSpec):
        self.spec = spec

    def _all_words(self, example: LabeledExample) -> tuple[str, ...]:
        words = example.text_a.words
        if example.text_b is not None:
            words = words + example.text_b.words
        return words

    def logit(self, example: LabeledExample) -> float:
        return math.fsum(self.spec.contribution(w) for w in self._all_words(example))

    def predict(self, example: LabeledExample) -> PredictionProfile:
        p0 = sigmoid(self.logit(example))
        return PredictionProfile((p0, 1.0 - p0))

    def word_gradients(self, example: LabeledExample, gold_label: int) -> list[np.ndarray]:
        """dL/de_i for each word of the attackable text (cross-entropy loss)."""
        if gold_label not in (0, 1):
            raise ValueError("toy victim is binary")
        # class 0 has probability sigmoid(z), so dL/dz = sigmoid(z) - [gold == 0];
        # sigmoid(z) - 1 is written as -sigmoid(-z) to avoid cancellation
        z = self.logit(example)
        residual = -sigmoid(-z) if gold_label == 0 else sigmoid(z)
        v, u = self.spec.v, self.spec.u
        grads = []
        for w in example.attackable.words:
            e = self.spec.embedding(w)
            grads.append(residual * ((u @ e) * v + (v @ e) * u))
        return grads

    def loss_gradient_norms(self, example: LabeledExample, gold_label: int) -> list[float]:
        return [float(np.linalg.norm(g)) for g in self.word_gradients(example, gold_label)]

    def attention_received(self, example: LabeledExample) -> list[float]:
        words = example.attackable.words
        if not words:
            return []
        logits = np.array([self.spec.u @ self.spec.embedding(w) for w in words])
        weights = np.exp(logits - logits.max())
        return list(weights / weights.sum())


class ToyMaskFiller:
    """Looks up the masked word in a fixed candidate table."""

    thread_safe = True

    def __init__(self, table: Mapping[str, Sequence[tuple[str, float]]]):
        clean = {}
        for word, entries in table.items():
            probs = [p for _, p in entries]
            if len(set(probs)) != len(probs):
                raise ValueError(f"candidate probabilities for {word!r} must be distinct")
            if any(not 0 < p <= 1 for p in probs):
                raise ValueError(f"candidate probabilities for {word!r} must lie in (0, 1]")
            clean[word.lower()] = tuple((c, float(p)) for c, p in entries)
        self.table = clean

    def fill(self, masked: MaskedContext, mask_position: int, k: int) -> list[tuple[str, float]]:
        return list(self.table.get(masked.original_word.lower(), ())[:k])


class ToyEmbedder:
    """Weighted word-count vectors over a fixed vocabulary.

    Words outside the vocabulary share one overflow slot.
    """

    thread_safe = True

    def __init__(self, vocabulary: Sequence[str], weights: Mapping[str, float] | None = None):
        vocab = sorted({w.lower() for w in vocabulary})
        self.index = {w: i for i, w in enumerate(vocab)}
        self.weights = {w.lower(): float(x) for w, x in (weights or {}).items()}

    @property
    def dim(self) -> int:
        return len(self.index) + 1

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        overflow = len(self.index)
        for w in tokenize(text).words:
            w = w.lower()
            vec[self.index.get(w, overflow)] += self.weights.get(w, 1.0)
        return vec


class ToyParaphraser:
    """F1 of the lowercase token-multiset overlap."""

    thread_safe = True

    def score(self, text_a: str, text_b: str) -> float:
        a = Counter(w.lower() for w in tokenize(text_a).words)
        b = Counter(w.lower() for w in tokenize(text_b).words)
        common = sum((a & b).values())
        if common == 0:
            return 0.0
        precision = common / sum(b.values())
        recall = common / sum(a.values())
        return 2 * precision * recall / (precision + recall)


class ToyLanguageModel:
    """Independent per-token probabilities with a uniform fallback."""

    thread_safe = True

    def __init__(self, vocab_size: int = 4, probabilities: Mapping[str, float] | None = None):
        if vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        self.vocab_size = vocab_size
        self.probabilities = {w.lower(): float(p) for w, p in (probabilities or {}).items()}
        for w, p in self.probabilities.items():
            if not 0 < p <= 1:
                raise ValueError(f"probability for {w!r} must lie in (0, 1]")

    def token_probability(self, token: str) -> float:
        return self.probabilities.get(token.lower(), 1.0 / self.vocab_size)

    def log_likelihood(self, text: str) -> tuple[float, int]:
        tokens = tokenize(text).words
        return math.fsum(math.log(self.token_probability(t)) for t in tokens), len(tokens)


_SPACE_BEFORE_PUNCT = re.compile(r"\s+[.,!?;:]")
_BRACKETS = {")": "(", "]": "[", "}": "{"}


class RuleGrammarChecker:
    """Counts violations of a small fixed rule set.

    Rules: a word repeated immediately (case-insensitive), a lowercase word
    opening a sentence that follows ``.``, ``!`` or ``?``, an unmatched
    bracket or an odd number of double quotes, and whitespace before
    ``.,!?;:``. The first word of the text is exempt from the casing rule
    because corpora are often lowercased fragments.
    """

    thread_safe = True

    def error_count(self, text: str) -> int:
        words = tokenize(text).words
        errors = 0
        for prev, cur in zip(words, words[1:]):
            if cur[0].isalnum() and prev.lower() == cur.lower():
                errors += 1
        for prev, cur in zip(words, words[1:]):
            if prev in (".", "!", "?") and cur[0].isalpha() and cur[0].islower():
                errors += 1
        stack: list[str] = []
        for ch in text:
            if ch in "([{":
                stack.append(ch)
            elif ch in _BRACKETS:
                if stack and stack[-1] == _BRACKETS[ch]:
                    stack.pop()
                else:
                    errors += 1
        errors += len(stack)
        errors += text.count('"') % 2
        errors += len(_SPACE_BEFORE_PUNCT.findall(text))
        return errors


@dataclass
class ToyFixture:
    """Everything a toy fixture file defines."""

    spec: ToyVictimSpec
    mlm_table: dict[str, list[tuple[str, float]]] = field(default_factory=dict)
    extra_vocab: list[str] = field(default_factory=list)
    embed_weights: dict[str, float] = field(default_factory=dict)
    lm_vocab_size: int = 4
    lm_probabilities: dict[str, float] = field(default_factory=dict)

    def vocabulary(self) -> list[str]:
        words = set(self.spec.embeddings)
        for word, entries in self.mlm_table.items():
            words.add(word)
            words.update(c.lower() for c, _ in entries)
        words.update(w.lower() for w in self.extra_vocab)
        words.update(self.embed_weights)
        return sorted(words)

    def oracles(self) -> OracleSuite:
        embedder = ToyEmbedder(self.vocabulary(), self.embed_weights)
        return OracleSuite(
            victim=ToyVictim(self.spec),
            mlm=ToyMaskFiller(self.mlm_table),
            embedder=embedder,
            paraphraser=ToyParaphraser(),
            lm=ToyLanguageModel(self.lm_vocab_size, self.lm_probabilities),
            grammar=RuleGrammarChecker(),
        )


class FixtureError(ValueError):
    pass


def parse_fixture(source: str) -> ToyFixture:
    dim = None
    v = u = None
    embeddings: dict[str, list[float]] = {}
    fixture_kwargs: dict = {"mlm_table": {}, "extra_vocab": [], "embed_weights": {},
                            "lm_probabilities": {}}
    for lineno, line in enumerate(source.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        try:
            if key == "dim":
                dim = int(rest[0])
            elif key in ("v", "u"):
                vec = [float(x) for x in rest]
                if key == "v":
                    v = vec
                else:
                    u = vec
            elif key == "embed":
                embeddings[rest[0].lower()] = [float(x) for x in rest[1:]]
            elif key == "mlm":
                entries = []
                for item in rest[1:]:
                    cand, prob = item.rsplit(":", 1)
                    entries.append((cand, float(prob)))
                fixture_kwargs["mlm_table"][rest[0].lower()] = entries
            elif key == "vocab":
                fixture_kwargs["extra_vocab"].extend(rest)
            elif key == "weight":
                fixture_kwargs["embed_weights"][rest[0].lower()] = float(rest[1])
            elif key == "lm_vocab_size":
                fixture_kwargs["lm_vocab_size"] = int(rest[0])
            elif key == "lm_prob":
                fixture_kwargs["lm_probabilities"][rest[0].lower()] = float(rest[1])
            else:
                raise FixtureError(f"line {lineno}: unknown directive {key!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, FixtureError):
                raise
            raise FixtureError(f"line {lineno}: cannot parse {line!r}: {exc}") from exc
    if v is None or u is None:
        raise FixtureError("fixture must define both v and u")
    if dim is not None and (len(v) != dim or len(u) != dim):
        raise FixtureError(f"v and u must have dim {dim} entries")
    try:
        spec = ToyVictimSpec(embeddings=embeddings, v=np.array(v), u=np.array(u))
        fixture = ToyFixture(spec=spec, **fixture_kwargs)
        ToyMaskFiller(fixture.mlm_table)
    except ValueError as exc:
        raise FixtureError(str(exc)) from exc
    return fixture


def load_fixture(path: str | Path) -> ToyFixture:
    return parse_fixture(Path(path).read_text(encoding="utf-8"))
