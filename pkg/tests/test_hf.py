"""Transformer adapters, exercised offline on tiny randomly initialized models."""

import math

import numpy as np
import pytest

torch = pytest.importorskip("torch")
transformers = pytest.importorskip("transformers")

from sassp import hf  # noqa: E402
from sassp.core import LabeledExample, OracleError, tokenize  # noqa: E402
from sassp.harness import ConfigError, RunConfig, resolve_oracles  # noqa: E402
from sassp.perturb import mask_at, run_attack  # noqa: E402
from sassp.scoring import SelectionConfig  # noqa: E402

VOCAB = ("[PAD] [UNK] [CLS] [SEP] [MASK] the film was good bad great awful . , and it "
         "plot ##s fun dull").split()


@pytest.fixture(scope="module")
def tokenizer():
    return transformers.BertTokenizerFast(vocab={w: i for i, w in enumerate(VOCAB)}, do_lower_case=True)


def bert_config(**extra):
    return transformers.BertConfig(vocab_size=len(VOCAB), hidden_size=8, num_hidden_layers=2,
                                   num_attention_heads=2, intermediate_size=16,
                                   max_position_embeddings=32, **extra)


@pytest.fixture(scope="module")
def victim(tokenizer):
    torch.manual_seed(0)
    model = transformers.BertForSequenceClassification(bert_config(num_labels=3)).double()
    return hf.HFVictim("tiny", model=model, tokenizer=tokenizer)


EXAMPLE = LabeledExample.from_strings("the films was good .", 1)  # "films" -> film ##s


def test_predict_is_a_distribution(victim):
    p = victim.predict(EXAMPLE).class_probabilities
    assert len(p) == 3 and math.isclose(sum(p), 1.0) and min(p) > 0


def loss_from_embeds(victim, enc, embeds, gold):
    inputs = {k: v for k, v in enc.items() if k != "input_ids"}
    logits = victim.model(inputs_embeds=embeds, **inputs).logits
    return float(torch.nn.functional.cross_entropy(logits, torch.tensor([gold])))


def test_gradient_norms_match_finite_differences(victim, tokenizer):
    enc = tokenizer(list(EXAMPLE.text_a.words), is_split_into_words=True, return_tensors="pt")
    word_ids = enc.word_ids(0)
    with torch.no_grad():
        base = victim.model.get_input_embeddings()(enc["input_ids"]).clone()
        h = 1e-6
        sq = [0.0] * len(EXAMPLE.text_a.words)
        for t, owner in enumerate(word_ids):
            if owner is None:
                continue
            for j in range(base.shape[-1]):
                plus, minus = base.clone(), base.clone()
                plus[0, t, j] += h
                minus[0, t, j] -= h
                g = (loss_from_embeds(victim, enc, plus, 1) - loss_from_embeds(victim, enc, minus, 1)) / (2 * h)
                sq[owner] += g * g
    expected = [math.sqrt(s) for s in sq]
    got = victim.loss_gradient_norms(EXAMPLE, 1)
    assert word_ids.count(1) == 2  # the subword case is covered
    assert got == pytest.approx(expected, rel=1e-5)


def test_attention_received_matches_manual_average(victim, tokenizer):
    got = victim.attention_received(EXAMPLE)
    enc = tokenizer(list(EXAMPLE.text_a.words), is_split_into_words=True, return_tensors="pt")
    with torch.no_grad():
        attn = [a[0].numpy() for a in victim.model(**enc, output_attentions=True).attentions]
    word_ids = enc.word_ids(0)
    real = [t for t, w in enumerate(word_ids) if w is not None]
    per_word = np.zeros(len(EXAMPLE.text_a.words))
    for layer in attn:
        for head in layer:
            for q in real:
                for k in real:
                    per_word[word_ids[k]] += head[q, k]
    per_word /= per_word.sum()
    assert got == pytest.approx(per_word.tolist(), rel=1e-9)
    assert math.isclose(sum(got), 1.0)


def test_pair_scores_cover_attacked_text_only(victim):
    ex = LabeledExample.from_strings("it was fun", 0, "the plot was dull .")
    assert len(victim.loss_gradient_norms(ex, 0)) == 5
    assert len(victim.attention_received(ex)) == 5
    first = LabeledExample(ex.text_a, 0, ex.text_b, attack_field="text_a")
    assert len(victim.attention_received(first)) == 3


@pytest.fixture(scope="module")
def filler(tokenizer):
    torch.manual_seed(1)
    model = transformers.BertForMaskedLM(bert_config())
    return hf.HFMaskFiller("tiny", model=model, tokenizer=tokenizer)


def test_mask_fill_top_k(filler):
    ctx = mask_at(tokenize("the film was good ."), 3)
    fills = filler.fill(ctx, 3, 4)
    assert len(fills) == 4
    probs = [p for _, p in fills]
    assert probs == sorted(probs, reverse=True) and all(0 < p <= 1 for p in probs)
    assert all(isinstance(w, str) and " " not in w for w, _ in fills)


def test_mask_fill_feeds_the_attack(victim, filler, toy_oracles):
    from dataclasses import replace

    oracles = replace(toy_oracles, victim=victim, mlm=filler)
    ex = LabeledExample.from_strings("the film was good .", int(np.argmax(victim.predict(
        LabeledExample.from_strings("the film was good .", 0)).class_probabilities)))
    res = run_attack(ex, oracles, sel=SelectionConfig(gamma=0.1))
    assert res.status in ("success", "failed")
    assert res.queries_used > 0


def test_causal_lm_matches_prefix_by_prefix(tokenizer):
    torch.manual_seed(2)
    cfg = transformers.GPT2Config(vocab_size=len(VOCAB), n_embd=8, n_layer=2, n_head=2, n_positions=32)
    lm = hf.CausalLM("tiny", model=transformers.GPT2LMHeadModel(cfg).double().eval(), tokenizer=tokenizer)
    text = "the film was fun ."
    total, count = lm.log_likelihood(text)
    ids = tokenizer(text)["input_ids"]
    expected = 0.0
    with torch.no_grad():
        for t in range(1, len(ids)):
            logits = lm.model(torch.tensor([ids[:t]])).logits[0, -1]
            expected += float(torch.log_softmax(logits, -1)[ids[t]])
    assert count == len(ids) - 1
    assert total == pytest.approx(expected, rel=1e-9)


class StubEncoder:
    def __init__(self, table):
        self.table = table

    def encode(self, texts, convert_to_numpy=True):
        if isinstance(texts, str):
            return np.array(self.table[texts], dtype=np.float32)
        return np.array([self.table[t] for t in texts], dtype=np.float32)


def test_embedding_adapters():
    enc = StubEncoder({"a": [1, 0], "b": [1, 1], "c": [-1, 0]})
    assert hf.SentenceEmbedder("stub", model=enc).embed("b") == [1.0, 1.0]
    para = hf.EmbeddingParaphraser("stub", model=enc)
    assert para.score("a", "b") == pytest.approx(1 / math.sqrt(2))
    assert para.score("a", "c") == 0.0


def test_pair_paraphraser(tokenizer):
    torch.manual_seed(3)
    model = transformers.BertForSequenceClassification(bert_config(num_labels=2)).eval()
    para = hf.PairParaphraser("tiny", model=model, tokenizer=tokenizer)
    assert 0.0 <= para.score("the film was good", "the film was great") <= 1.0


def test_build_errors():
    with pytest.raises(ValueError, match="model name"):
        hf.build("victim", "", None)
    with pytest.raises(ValueError, match="grammar"):
        hf.build("grammar", "anything", None)


def test_hf_errors_become_config_problems():
    with pytest.raises(ConfigError) as info:
        resolve_oracles(RunConfig(victim="hf", grammar="hf:x"))
    text = " | ".join(info.value.problems)
    assert "victim" in text and "grammar" in text


def test_mask_lost_is_an_oracle_error(filler):
    class NoMask:
        mask_token = "[MASK]"
        mask_token_id = -1

        def __call__(self, text, **kw):
            return filler.tokenizer(text, **kw)

    broken = hf.HFMaskFiller("tiny", model=filler.model, tokenizer=NoMask())
    with pytest.raises(OracleError):
        broken.fill(mask_at(tokenize("the film"), 1), 1, 2)
