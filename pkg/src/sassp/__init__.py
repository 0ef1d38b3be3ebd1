"""Word-substitution adversarial attacks on text classifiers.

Two attack modes share one pipeline: ``clare`` picks target words by
gradient saliency alone, ``sassp`` mixes saliency with transformer attention
and only accepts edits that pass an embedding-similarity and paraphrase gate.
"""

from .core import (
    MASK,
    LabeledExample,
    OracleSuite,
    PredictionProfile,
    TokenizedText,
    detokenize,
    tokenize,
)
from .perturb import AttackConfig, AttackResult, BudgetConfig, RankConfig, run_attack, run_batch
from .scoring import SelectionConfig
from .semfilter import GateConfig

__all__ = [
    "MASK",
    "AttackConfig",
    "AttackResult",
    "BudgetConfig",
    "GateConfig",
    "LabeledExample",
    "OracleSuite",
    "PredictionProfile",
    "RankConfig",
    "SelectionConfig",
    "TokenizedText",
    "detokenize",
    "run_attack",
    "run_batch",
    "tokenize",
]
