"""Mask-fill candidate generation, candidate ranking and the attack loop."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .core import (
    MASK,
    LabeledExample,
    MaskedContext,
    OracleSuite,
    PredictionProfile,
    TokenizedText,
    detokenize,
)
from .scoring import CLARE, EmptyEligibleSet, SelectionConfig, is_punctuation, score_words, select_targets
from .semfilter import GateConfig, gate

log = logging.getLogger(__name__)

MIN_CHANGE = "min_change"
GOLD_DROP = "gold_drop"
OBJECTIVES = (MIN_CHANGE, GOLD_DROP)

SUCCESS = "success"
FAILED = "failed"
UNATTACKABLE = "unattackable"
SKIPPED = "skipped"


class QueryBudgetExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class RankConfig:
    alpha_rank: float = 1.0
    beta_rank: float = 1.0
    k_candidates: int = 50
    objective: str = GOLD_DROP

    def __post_init__(self):
        if self.alpha_rank < 0 or self.beta_rank < 0 or self.alpha_rank + self.beta_rank <= 0:
            raise ValueError("alpha_rank, beta_rank must be >= 0 with a positive sum")
        if self.k_candidates < 1:
            raise ValueError("k_candidates must be a positive integer")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")


@dataclass(frozen=True)
class BudgetConfig:
    max_edits_fraction: float = 0.4
    max_edits: Optional[int] = None  # absolute cap; overrides the fraction
    max_queries: int = 2000

    def __post_init__(self):
        if not 0 <= self.max_edits_fraction <= 1:
            raise ValueError("max_edits_fraction must lie in [0, 1]")
        if self.max_edits is not None and self.max_edits < 0:
            raise ValueError("max_edits must be >= 0")
        if self.max_queries < 0:
            raise ValueError("max_queries must be >= 0")

    def edit_limit(self, n_words: int) -> int:
        if self.max_edits is not None:
            return self.max_edits
        return math.ceil(self.max_edits_fraction * n_words)


@dataclass(frozen=True)
class AttackConfig:
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    rank: RankConfig = field(default_factory=RankConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    reselect_each_step: bool = False

    @property
    def mode(self) -> str:
        return self.selection.mode


@dataclass(frozen=True)
class Candidate:
    word: str
    fill_probability: float
    prediction_after: Optional[PredictionProfile] = None
    rank_score: Optional[float] = None


@dataclass(frozen=True)
class Edit:
    word_index: int
    original_word: str
    new_word: str


@dataclass(frozen=True)
class AttackResult:
    original: LabeledExample
    adversarial_text: TokenizedText
    status: str
    mode: str
    edits: tuple[Edit, ...] = ()
    queries_used: int = 0
    sim_score: Optional[float] = None
    para_score: Optional[float] = None
    gates_passed: bool = False
    original_prediction: Optional[PredictionProfile] = None
    final_prediction: Optional[PredictionProfile] = None
    reason: Optional[str] = None

    @property
    def success(self) -> bool:
        return self.status == SUCCESS

    @property
    def admitted(self) -> bool:
        return self.status != SKIPPED

    @property
    def original_text(self) -> str:
        return detokenize(self.original.attackable)

    @property
    def adversarial(self) -> str:
        return detokenize(self.adversarial_text)

    def to_dict(self) -> dict:
        ex = self.original

        def profile(p):
            return None if p is None else {"class_probabilities": list(p.class_probabilities),
                                           "predicted_label": p.predicted_label}

        return {
            "status": self.status,
            "mode": self.mode,
            "success": self.success,
            "reason": self.reason,
            "gold_label": ex.gold_label,
            "attack_field": ex.attack_field,
            "text_a": detokenize(ex.text_a),
            "text_b": detokenize(ex.text_b) if ex.text_b is not None else None,
            "original": self.original_text,
            "adversarial": self.adversarial,
            "edits": [[e.word_index, e.original_word, e.new_word] for e in self.edits],
            "queries_used": self.queries_used,
            "sim_score": self.sim_score,
            "para_score": self.para_score,
            "gates_passed": self.gates_passed,
            "original_prediction": profile(self.original_prediction),
            "final_prediction": profile(self.final_prediction),
        }


class CountingVictim:
    """Victim proxy that counts queries and refuses calls beyond ``limit``."""

    def __init__(self, victim, limit: int):
        self.victim = victim
        self.limit = limit
        self.used = 0

    def _charge(self):
        if self.used >= self.limit:
            raise QueryBudgetExhausted(f"query budget of {self.limit} exhausted")
        self.used += 1

    def predict(self, example):
        self._charge()
        return self.victim.predict(example)

    def loss_gradient_norms(self, example, gold_label):
        self._charge()
        return self.victim.loss_gradient_norms(example, gold_label)

    def attention_received(self, example):
        self._charge()
        return self.victim.attention_received(example)


def mask_at(text: TokenizedText, index: int) -> MaskedContext:
    if not 0 <= index < len(text):
        raise IndexError(f"word index {index} out of range for {len(text)} words")
    return MaskedContext(text=text.with_word(index, MASK), mask_index=index,
                         original_word=text.words[index])


def substitute(text: TokenizedText, index: int, word: str) -> TokenizedText:
    if not word:
        raise ValueError("replacement word must be non-empty")
    return text.with_word(index, word)


def _sentence_initial(words: Sequence[str], index: int) -> bool:
    return index == 0 or words[index - 1] in (".", "!", "?")


def match_case(candidate: str, original: str, sentence_initial: bool) -> str:
    word = candidate.lower()
    if len(original) > 1 and original.isupper():
        return word.upper()
    if sentence_initial and original[:1].isupper():
        return word[:1].upper() + word[1:]
    return word


def _is_fragment(word: str) -> bool:
    return (word.startswith("##") or (word.startswith("<") and word.endswith(">"))
            or any(ch.isspace() for ch in word))


def generate_candidates(context: MaskedContext, example: LabeledExample, oracles: OracleSuite,
                        config: RankConfig) -> list[Candidate]:
    """Ask the mask filler for replacements and score each with the victim.

    ``example`` is the current working example; each surviving candidate costs
    one victim query.
    """
    idx = context.mask_index
    original = context.original_word
    initial = _sentence_initial(context.text.words, idx)
    raw = oracles.mlm.fill(context, idx, config.k_candidates)
    seen: set[str] = set()
    words: list[tuple[str, float]] = []
    for word, prob in raw:
        word = word.strip()
        if not word or word == MASK or _is_fragment(word) or is_punctuation(word):
            continue
        prob = float(prob)
        if not 0 < prob <= 1:
            continue
        word = match_case(word, original, initial)
        if word.lower() == original.lower() or word.lower() in seen:
            continue
        seen.add(word.lower())
        words.append((word, prob))
        if len(words) == config.k_candidates:
            break
    base = example.attackable
    out = []
    for word, prob in words:
        trial = example.with_attackable(substitute(base, idx, word))
        out.append(Candidate(word=word, fill_probability=prob,
                             prediction_after=oracles.victim.predict(trial)))
    return out


def rank_candidates(candidates: Sequence[Candidate], original_profile: PredictionProfile,
                    gold_label: int, config: RankConfig) -> list[Candidate]:
    """Score candidates and sort best first.

    ``min_change`` penalizes any change in the gold-label probability;
    ``gold_drop`` rewards a decrease of it.
    """
    p_gold = original_profile.prob(gold_label)
    scored = []
    for cand in candidates:
        if cand.prediction_after is None:
            raise ValueError(f"candidate {cand.word!r} has no prediction")
        p_after = cand.prediction_after.prob(gold_label)
        if config.objective == MIN_CHANGE:
            score = config.alpha_rank * cand.fill_probability - config.beta_rank * abs(p_after - p_gold)
        else:
            score = config.alpha_rank * cand.fill_probability + config.beta_rank * (p_gold - p_after)
        scored.append(replace(cand, rank_score=score))
    return sorted(scored, key=lambda c: (-c.rank_score, -c.fill_probability, c.word))


def run_attack(example: LabeledExample, oracles: OracleSuite,
               sel: SelectionConfig | None = None, rank: RankConfig | None = None,
               gate_config: GateConfig | None = None, budget: BudgetConfig | None = None,
               *, reselect_each_step: bool = False) -> AttackResult:
    sel = sel or SelectionConfig()
    rank = rank or RankConfig()
    gate_config = gate_config or GateConfig()
    budget = budget or BudgetConfig()
    mode = sel.mode
    victim = CountingVictim(oracles.victim, budget.max_queries)
    suite = replace(oracles, victim=victim)
    source = example.attackable
    original_str = detokenize(source)

    state = {"working": example, "profile": None, "original_profile": None}
    edits: list[Edit] = []
    verdict = None

    def finish(status: str, reason: str | None = None) -> AttackResult:
        working = state["working"]
        sim = para = None
        passed = False
        if verdict is not None and edits:
            sim, para, passed = verdict.sim_score, verdict.para_score, verdict.passed
        return AttackResult(
            original=example,
            adversarial_text=working.attackable,
            status=status,
            mode=mode,
            edits=tuple(edits),
            queries_used=victim.used,
            sim_score=sim,
            para_score=para,
            gates_passed=passed,
            original_prediction=state["original_profile"],
            final_prediction=state["profile"],
            reason=reason,
        )

    if len(source) == 0:
        return finish(UNATTACKABLE, "empty_text")
    try:
        profile = victim.predict(example)
        state["profile"] = state["original_profile"] = profile
        if profile.predicted_label != example.gold_label:
            return finish(SKIPPED, "misclassified")
        max_edits = budget.edit_limit(len(source))
        if max_edits == 0:
            return finish(FAILED, "edit_budget")
        tried: set[int] = set()
        targets = select_targets_for(state["working"], suite, sel)
        while targets:
            idx = targets.pop(0)
            tried.add(idx)
            working = state["working"]
            context = mask_at(working.attackable, idx)
            candidates = generate_candidates(context, working, suite, rank)
            if not candidates:
                continue
            ranked = rank_candidates(candidates, state["profile"], example.gold_label, rank)
            chosen = None
            for cand in ranked:
                trial_text = substitute(working.attackable, idx, cand.word)
                if mode == CLARE:
                    chosen = cand
                    break
                v = gate(original_str, detokenize(trial_text), suite, gate_config)
                if v.passed:
                    chosen, verdict = cand, v
                    break
            if chosen is None:
                continue
            edits.append(Edit(idx, source.words[idx], chosen.word))
            state["working"] = working.with_attackable(substitute(working.attackable, idx, chosen.word))
            state["profile"] = chosen.prediction_after
            if chosen.prediction_after.predicted_label != example.gold_label:
                return finish(SUCCESS)
            if len(edits) >= max_edits:
                return finish(FAILED, "edit_budget")
            if reselect_each_step:
                targets = [i for i in select_targets_for(state["working"], suite, sel)
                           if i not in tried]
        return finish(FAILED, "targets_exhausted")
    except QueryBudgetExhausted:
        return finish(FAILED, "query_budget")
    except EmptyEligibleSet:
        return finish(UNATTACKABLE, "no_eligible_words")
    except Exception as exc:  # oracle failure: keep the partial edit log
        log.warning("sample skipped after oracle failure: %s", exc)
        return finish(SKIPPED, f"oracle_error: {type(exc).__name__}: {exc}")


def select_targets_for(example: LabeledExample, oracles: OracleSuite,
                       sel: SelectionConfig) -> list[int]:
    scores = score_words(example, oracles.victim, sel)
    return select_targets(scores.combined, scores.eligible, sel, saliency=scores.saliency)


def attack_with(example: LabeledExample, oracles: OracleSuite, config: AttackConfig) -> AttackResult:
    return run_attack(example, oracles, config.selection, config.rank, config.gate,
                      config.budget, reselect_each_step=config.reselect_each_step)


def run_batch(dataset: Sequence[LabeledExample], oracles: OracleSuite, config: AttackConfig,
              workers: int = 1) -> list[AttackResult]:
    """Attack every example; results keep the input order.

    Runs serially when any oracle declares ``thread_safe = False``.
    """
    if workers > 1 and oracles.thread_safe and len(dataset) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda ex: attack_with(ex, oracles, config), dataset))
    return [attack_with(ex, oracles, config) for ex in dataset]
