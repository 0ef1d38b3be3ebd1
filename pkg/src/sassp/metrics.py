"""Evaluation metrics: ASR, PER, WMR, SYE, SES.

PER, WMR, SYE and SES are averaged over successful attacks only. ASR is
taken over admitted samples, i.e. those the victim classified correctly
before the attack. Lower PER is reported as better.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .core import CausalLMOracle, GrammarOracle, OracleSuite, SentenceEmbedOracle
from .perturb import AttackResult
from .semfilter import embedding_similarity

log = logging.getLogger(__name__)


class NoAdmittedSamples(ValueError):
    pass


@dataclass(frozen=True)
class SampleMetrics:
    success: bool
    wmr: float
    perplexity: Optional[float] = None
    sye: Optional[int] = None
    ses: Optional[float] = None
    errors: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["errors"] = list(self.errors)
        return d


@dataclass(frozen=True)
class AggregateReport:
    asr: float
    mean_per: Optional[float]
    mean_wmr: Optional[float]  # percent
    mean_sye: Optional[float]
    mean_ses: Optional[float]
    sample_count: int
    admitted_count: int
    success_count: int
    skipped_count: int
    excluded: dict = field(default_factory=dict)  # metric -> successes lacking a value
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateReport":
        return cls(**d)


def attack_success_rate(results: Sequence[AttackResult]) -> float:
    admitted = [r for r in results if r.admitted]
    if not admitted:
        raise NoAdmittedSamples("no admitted samples")
    return 100.0 * sum(r.success for r in admitted) / len(admitted)


def word_manipulation_rate(result: AttackResult) -> float:
    n = len(result.original.attackable)
    if n == 0:
        return 0.0
    return len(result.edits) / n


def perplexity(text: str, lm: CausalLMOracle) -> float:
    if not text:
        raise ValueError("text must be non-empty")
    total, count = lm.log_likelihood(text)
    if count <= 0:
        raise ValueError("language model scored zero tokens")
    return math.exp(-total / count)


def syntactic_errors(original: str, adversarial: str, grammar: GrammarOracle) -> int:
    if not original or not adversarial:
        raise ValueError("texts must be non-empty")
    return max(0, int(grammar.error_count(adversarial)) - int(grammar.error_count(original)))


def semantic_similarity_metric(original: str, adversarial: str,
                               embedder: SentenceEmbedOracle) -> float:
    return embedding_similarity(original, adversarial, embedder)


def sample_metrics(result: AttackResult, oracles: OracleSuite) -> SampleMetrics:
    """Per-sample metrics; PER/SYE/SES only for successes.

    An oracle failure leaves that metric unset and names it in ``errors``.
    """
    wmr = word_manipulation_rate(result)
    if not result.success:
        return SampleMetrics(success=False, wmr=wmr)
    original, adversarial = result.original_text, result.adversarial
    values: dict = {}
    errors = []
    for name, fn in (
        ("perplexity", lambda: perplexity(adversarial, oracles.lm)),
        ("sye", lambda: syntactic_errors(original, adversarial, oracles.grammar)),
        ("ses", lambda: semantic_similarity_metric(original, adversarial, oracles.ses_embedder)),
    ):
        try:
            values[name] = fn()
        except Exception as exc:
            log.warning("%s unavailable: %s", name, exc)
            errors.append(f"{name}: {type(exc).__name__}: {exc}")
    return SampleMetrics(success=True, wmr=wmr, errors=tuple(errors), **values)


def _mean(values: list) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def aggregate(results: Sequence[AttackResult], metrics: Sequence[SampleMetrics],
              config: dict | None = None) -> AggregateReport:
    if len(results) != len(metrics):
        raise ValueError("results and metrics differ in length")
    asr = attack_success_rate(results)
    wins = [m for r, m in zip(results, metrics) if r.success]
    # sort before summing so the mean does not depend on input order
    pers = sorted(m.perplexity for m in wins if m.perplexity is not None)
    syes = sorted(m.sye for m in wins if m.sye is not None)
    sess = sorted(m.ses for m in wins if m.ses is not None)
    wmrs = sorted(m.wmr for m in wins)
    mean_wmr = _mean(wmrs)
    return AggregateReport(
        asr=asr,
        mean_per=_mean(pers),
        mean_wmr=None if mean_wmr is None else 100.0 * mean_wmr,
        mean_sye=_mean(syes),
        mean_ses=_mean(sess),
        sample_count=len(results),
        admitted_count=sum(r.admitted for r in results),
        success_count=len(wins),
        skipped_count=sum(not r.admitted for r in results),
        excluded={
            "perplexity": len(wins) - len(pers),
            "sye": len(wins) - len(syes),
            "ses": len(wins) - len(sess),
        },
        config=dict(config or {}),
    )
