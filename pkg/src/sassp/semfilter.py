"""Two-stage semantic gate for candidate edits.

A candidate text must first stay close to the original in sentence-embedding
space; only then is the paraphrase scorer consulted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import OracleError, OracleSuite, ParaphraseOracle, SentenceEmbedOracle


class ZeroVector(OracleError):
    """An embedder returned a zero-norm vector."""


@dataclass(frozen=True)
class GateConfig:
    sim_threshold: float = 0.80
    para_threshold: float = 0.70

    def __post_init__(self):
        # values above 1 are allowed: they make the gate unsatisfiable
        if self.sim_threshold < 0 or self.para_threshold < 0:
            raise ValueError("gate thresholds must be >= 0")


@dataclass(frozen=True)
class GateVerdict:
    sim_score: float
    para_score: Optional[float]  # None: paraphrase stage was never reached
    passed_sim: bool
    passed_para: bool

    @property
    def passed(self) -> bool:
        return self.passed_sim and self.passed_para


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("embedding has zero norm")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def embedding_similarity(a: str, b: str, embedder: SentenceEmbedOracle) -> float:
    if not a or not b:
        raise ValueError("both texts must be non-empty")
    return cosine(embedder.embed(a), embedder.embed(b))


def paraphrase_probability(a: str, b: str, paraphraser: ParaphraseOracle) -> float:
    if not a or not b:
        raise ValueError("both texts must be non-empty")
    score = float(paraphraser.score(a, b))
    if math.isnan(score):
        raise OracleError("paraphrase scorer returned NaN")
    return min(1.0, max(0.0, score))


def gate(original: str, candidate_text: str, oracles: OracleSuite,
         config: GateConfig) -> GateVerdict:
    sim = embedding_similarity(original, candidate_text, oracles.embedder)
    if sim < config.sim_threshold:
        return GateVerdict(sim_score=sim, para_score=None, passed_sim=False, passed_para=False)
    para = paraphrase_probability(original, candidate_text, oracles.paraphraser)
    return GateVerdict(sim_score=sim, para_score=para, passed_sim=True,
                       passed_para=para >= config.para_threshold)
