"""Adapters that put pretrained transformer models behind the oracle protocols.

Requires the ``hf`` extra (torch, transformers, sentence-transformers). The
harness imports this module lazily, only when an identifier such as
``hf:bert-base-uncased`` is configured.

Identifiers per role:

* victim: a sequence-classification checkpoint.
* mlm: a masked-LM checkpoint.
* embedder / metrics_embedder: a sentence-transformers model.
* paraphraser: a sentence-transformers model (clipped cosine), or
  ``cross:<checkpoint>`` for a pair classifier whose label 1 means paraphrase.
* lm: a causal-LM checkpoint.

Torch modules are not shared across threads, so every adapter declares
``thread_safe = False`` and the harness runs serially.
"""

from __future__ import annotations

import functools
import math
from typing import Sequence

import numpy as np
import torch
from transformers import (
    AutoModelForCausalLM,
    AutoModelForMaskedLM,
    AutoModelForSequenceClassification,
    AutoTokenizer,
)

from .core import MASK, LabeledExample, MaskedContext, OracleError, PredictionProfile, detokenize


def load_tokenizer(name: str):
    tokenizer = AutoTokenizer.from_pretrained(name)
    # byte-level BPE tokenizers need this to accept pre-split words
    if getattr(tokenizer, "add_prefix_space", None) is False:
        tokenizer = AutoTokenizer.from_pretrained(name, add_prefix_space=True)
    return tokenizer


def _encode_words(tokenizer, example: LabeledExample):
    """Encode pre-split words; returns the batch and, per subword, the
    index of its word in the attackable text (or None)."""
    a = list(example.text_a.words)
    if example.text_b is None:
        enc = tokenizer(a, is_split_into_words=True, truncation=True, return_tensors="pt")
        target_seq = 0
    else:
        b = list(example.text_b.words)
        enc = tokenizer(a, b, is_split_into_words=True, truncation=True, return_tensors="pt")
        target_seq = 0 if example.attack_field == "text_a" else 1
    seq_ids = enc.sequence_ids(0)
    owners = [w if s == target_seq else None for w, s in zip(enc.word_ids(0), seq_ids)]
    return enc, owners


def _per_word(values: np.ndarray, owners: Sequence, n_words: int, reduce) -> list[float]:
    buckets: list[list[float]] = [[] for _ in range(n_words)]
    for value, owner in zip(values, owners):
        if owner is not None:
            buckets[owner].append(float(value))
    # words lost to truncation contribute nothing
    return [reduce(b) if b else 0.0 for b in buckets]


class HFVictim:
    """Sequence classifier exposing predictions, gradients and attention."""

    thread_safe = False

    def __init__(self, name: str, model=None, tokenizer=None):
        self.tokenizer = tokenizer or load_tokenizer(name)
        self.model = model or AutoModelForSequenceClassification.from_pretrained(name)
        # fused attention kernels do not return attention weights
        self.model.set_attn_implementation("eager")
        self.model.eval()

    def predict(self, example: LabeledExample) -> PredictionProfile:
        enc, _ = _encode_words(self.tokenizer, example)
        with torch.no_grad():
            logits = self.model(**enc).logits[0]
        probs = torch.softmax(logits.double(), dim=-1).tolist()
        return PredictionProfile(tuple(probs))

    def loss_gradient_norms(self, example: LabeledExample, gold_label: int) -> list[float]:
        enc, owners = _encode_words(self.tokenizer, example)
        embeddings = self.model.get_input_embeddings()(enc["input_ids"]).detach()
        embeddings.requires_grad_(True)
        inputs = {k: v for k, v in enc.items() if k != "input_ids"}
        logits = self.model(inputs_embeds=embeddings, **inputs).logits
        loss = torch.nn.functional.cross_entropy(logits, torch.tensor([gold_label]))
        (grad,) = torch.autograd.grad(loss, embeddings)
        # the norm of a word's concatenated subword gradients
        sq = grad[0].double().pow(2).sum(dim=-1).numpy()
        n = len(example.attackable.words)
        return _per_word(sq, owners, n, lambda b: math.sqrt(sum(b)))

    def attention_received(self, example: LabeledExample) -> list[float]:
        enc, owners = _encode_words(self.tokenizer, example)
        with torch.no_grad():
            out = self.model(**enc, output_attentions=True)
        # (layers, heads, query, key) -> mean over layers, heads and real queries
        stacked = torch.stack([a[0] for a in out.attentions]).double()
        # special tokens have no sequence id; unknown words still count
        queries = torch.tensor([s is not None for s in enc.sequence_ids(0)])
        received = stacked.mean(dim=(0, 1))[queries].mean(dim=0).numpy()
        n = len(example.attackable.words)
        per_word = _per_word(received, owners, n, sum)
        total = sum(per_word)
        return [w / total for w in per_word] if total > 0 else [0.0] * n


class HFMaskFiller:
    """Top-k whole-word fills from a masked language model."""

    thread_safe = False

    def __init__(self, name: str, model=None, tokenizer=None):
        self.tokenizer = tokenizer or AutoTokenizer.from_pretrained(name)
        self.model = model or AutoModelForMaskedLM.from_pretrained(name)
        self.model.eval()

    def fill(self, masked: MaskedContext, mask_position: int, k: int) -> list[tuple[str, float]]:
        words = list(masked.text.words)
        words[mask_position] = self.tokenizer.mask_token
        enc = self.tokenizer(detokenize(words).replace(MASK, self.tokenizer.mask_token),
                             truncation=True, return_tensors="pt")
        where = (enc["input_ids"][0] == self.tokenizer.mask_token_id).nonzero()
        if len(where) != 1:
            raise OracleError("mask token lost during tokenization")
        with torch.no_grad():
            logits = self.model(**enc).logits[0, int(where[0])]
        probs = torch.softmax(logits.double(), dim=-1)
        top = torch.topk(probs, min(k, probs.numel()))
        return [(self.tokenizer.decode([int(i)]).strip(), float(p))
                for p, i in zip(top.values, top.indices)]


@functools.lru_cache(maxsize=None)
def _sentence_model(name: str):
    from sentence_transformers import SentenceTransformer

    return SentenceTransformer(name)


class SentenceEmbedder:
    thread_safe = False

    def __init__(self, name: str, model=None):
        self.model = model or _sentence_model(name)

    def embed(self, text: str) -> list[float]:
        return self.model.encode(text, convert_to_numpy=True).astype(float).tolist()


class EmbeddingParaphraser:
    """Paraphrase probability as the clipped cosine of paraphrase-tuned embeddings."""

    thread_safe = False

    def __init__(self, name: str, model=None):
        self.model = model or _sentence_model(name)

    def score(self, text_a: str, text_b: str) -> float:
        a, b = self.model.encode([text_a, text_b], convert_to_numpy=True).astype(float)
        denom = np.linalg.norm(a) * np.linalg.norm(b)
        return 0.0 if denom == 0 else float(np.clip(a @ b / denom, 0.0, 1.0))


class PairParaphraser:
    """Pair classifier; the probability of label 1 is the paraphrase score."""

    thread_safe = False

    def __init__(self, name: str, model=None, tokenizer=None):
        self.tokenizer = tokenizer or AutoTokenizer.from_pretrained(name)
        self.model = model or AutoModelForSequenceClassification.from_pretrained(name)
        self.model.eval()

    def score(self, text_a: str, text_b: str) -> float:
        enc = self.tokenizer(text_a, text_b, truncation=True, return_tensors="pt")
        with torch.no_grad():
            logits = self.model(**enc).logits[0]
        return float(torch.softmax(logits.double(), dim=-1)[1])


class CausalLM:
    """Token log-likelihood under a causal LM, each token conditioned on its prefix."""

    thread_safe = False

    def __init__(self, name: str, model=None, tokenizer=None):
        self.tokenizer = tokenizer or AutoTokenizer.from_pretrained(name)
        self.model = model or AutoModelForCausalLM.from_pretrained(name)
        self.model.eval()

    def log_likelihood(self, text: str) -> tuple[float, int]:
        ids = self.tokenizer(text, return_tensors="pt")["input_ids"][0]
        bos = self.tokenizer.bos_token_id
        if bos is not None:
            ids = torch.cat([torch.tensor([bos]), ids])
        if len(ids) < 2:
            raise OracleError("text is empty after tokenization")
        with torch.no_grad():
            logits = self.model(ids.unsqueeze(0)).logits[0, :-1]
        logp = torch.log_softmax(logits.double(), dim=-1)
        picked = logp.gather(1, ids[1:].unsqueeze(1))
        return float(picked.sum()), len(ids) - 1


def build(role: str, argument: str, config=None):
    """Adapter for ``role`` from an ``hf:<argument>`` identifier."""
    if not argument:
        raise ValueError(f"{role}: hf backend needs a model name, as in hf:<name>")
    if role == "victim":
        return HFVictim(argument)
    if role == "mlm":
        return HFMaskFiller(argument)
    if role in ("embedder", "metrics_embedder"):
        return SentenceEmbedder(argument)
    if role == "paraphraser":
        kind, _, name = argument.partition(":")
        return PairParaphraser(name) if kind == "cross" and name else EmbeddingParaphraser(argument)
    if role == "lm":
        return CausalLM(argument)
    raise ValueError(f"{role}: no hf adapter for this role; use the toy grammar checker")
