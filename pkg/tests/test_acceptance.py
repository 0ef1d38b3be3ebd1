"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed in the
terminal summary (and immediately with ``pytest -s``).
"""

import json
import os
import subprocess
import sys
import time
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from sassp.core import LabeledExample, tokenize
from sassp.metrics import aggregate, sample_metrics, word_manipulation_rate
from sassp.perturb import (
    FAILED,
    SKIPPED,
    SUCCESS,
    UNATTACKABLE,
    AttackConfig,
    AttackResult,
    BudgetConfig,
    Edit,
    run_attack,
    run_batch,
)
from sassp.scoring import CLARE, SASSP, SelectionConfig, select_targets
from sassp.semfilter import GateConfig
from sassp.toybackend import (
    RuleGrammarChecker,
    ToyLanguageModel,
    ToyVictim,
    ToyVictimSpec,
    load_fixture,
    parse_fixture,
)

from .conftest import ACCEPTANCE_LINES, bundled
from .oracles import brute_force_targets, finite_difference_gradients_mp, stable_descending

DATA = Path(__file__).parent / "data"


def record(number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def fresh_toy_oracles():
    return parse_fixture(bundled("toy_fixture.txt")).oracles()


def corpus():
    rows = [json.loads(line) for line in bundled("toy_corpus.jsonl").splitlines() if line.strip()]
    return [LabeledExample.from_strings(r["text"], r["label"]) for r in rows]


def random_instance(rng):
    """Scores with deliberate ties, a random eligibility mask and gamma."""
    n = int(rng.integers(1, 13))
    scores = np.round(rng.uniform(0, 1, n), int(rng.integers(1, 4)))
    eligible = rng.random(n) < 0.75
    eligible[rng.integers(n)] = True
    gamma = 1.0 if rng.random() < 0.1 else float(rng.uniform(0.01, 1.0))
    return scores.tolist(), eligible.tolist(), gamma


# 1


def test_gradient_fidelity():
    rng = np.random.default_rng(20241016)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        d, n = int(rng.integers(2, 5)), int(rng.integers(1, 7))
        E = rng.uniform(-3, 3, (n, d))
        v, u = rng.uniform(-3, 3, d), rng.uniform(-3, 3, d)
        gold = int(rng.integers(0, 2))
        words = [f"w{i}" for i in range(n)]
        victim = ToyVictim(ToyVictimSpec(dict(zip(words, E)), v, u))
        analytic = victim.word_gradients(LabeledExample.from_strings(" ".join(words), gold), gold)
        numeric = finite_difference_gradients_mp(E, v, u, gold, h=1e-6)
        for i in range(n):
            scale = max(np.linalg.norm(analytic[i]), np.linalg.norm(numeric[i]))
            err = 0.0 if scale == 0 else np.linalg.norm(analytic[i] - numeric[i]) / scale
            worst = max(worst, err)
    elapsed = time.perf_counter() - start
    record(1, "gradient fidelity", worst <= 1e-6 and elapsed < 2.0,
           f"max rel err {worst:.2e}, {elapsed:.2f}s")


# 2


def test_selection_oracle_equivalence():
    rng = np.random.default_rng(2)
    matches = 0
    for _ in range(1000):
        scores, eligible, gamma = random_instance(rng)
        got = select_targets(scores, eligible, SelectionConfig(gamma=gamma))
        want = brute_force_targets(scores, eligible, gamma)
        matches += set(got) == want and list(got) == stable_descending(sorted(want), scores)
    record(2, "selection oracle equivalence", matches == 1000, f"{matches}/1000")


# 3


def test_selection_scale_invariance():
    rng = np.random.default_rng(3)
    matches = 0
    for _ in range(200):
        scores, eligible, gamma = random_instance(rng)
        cfg = SelectionConfig(gamma=gamma)
        base = list(select_targets(scores, eligible, cfg))
        matches += all(
            list(select_targets([lam * s for s in scores], eligible, cfg)) == base
            for lam in (0.01, 3, 1e4)
        )
    record(3, "selection scale invariance", matches == 200, f"{matches}/200")


# 4


def cosine(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_gate_soundness():
    gate_cfg = GateConfig()
    results = run_batch(corpus(), fresh_toy_oracles(), AttackConfig(gate=gate_cfg))
    checker = fresh_toy_oracles()
    wins = [r for r in results if r.success]
    sound = sum(
        cosine(checker.embedder.embed(r.original_text), checker.embedder.embed(r.adversarial))
        >= gate_cfg.sim_threshold
        and checker.paraphraser.score(r.original_text, r.adversarial)
        >= gate_cfg.para_threshold
        for r in wins
    )
    record(4, "gate soundness", bool(wins) and sound == len(wins), f"{sound}/{len(wins)} successes")


# 5


# hand-counted tokens per corpus line (punctuation counts as a word)
CORPUS_WORD_COUNTS = [10] * 11 + [9] * 7 + [8] * 2


def test_end_to_end_toy_attack():
    examples = corpus()
    assert sorted(len(ex.attackable.words) for ex in examples) == sorted(CORPUS_WORD_COUNTS)
    expected_wmr = float(100 * sum(Fraction(1, n) for n in CORPUS_WORD_COUNTS) / 20)
    oracles = fresh_toy_oracles()
    details, ok = [], True
    for mode in (SASSP, CLARE):
        start = time.perf_counter()
        cfg = AttackConfig(selection=SelectionConfig(mode=mode))
        results = run_batch(examples, oracles, cfg)
        report = aggregate(results, [sample_metrics(r, oracles) for r in results])
        elapsed = time.perf_counter() - start
        one_edit = all(len(r.edits) == 1 for r in results)
        ok &= (report.asr == 100.0 and one_edit and abs(report.mean_wmr - expected_wmr) <= 1e-12
               and elapsed < 5.0)
        details.append(f"{mode}: ASR {report.asr}, WMR {report.mean_wmr:.6f}% vs {expected_wmr:.6f}%, "
                       f"{elapsed:.2f}s")
    record(5, "end-to-end toy attack", ok, "; ".join(details))


# 6


def test_mode_contrast():
    oracles = load_fixture(DATA / "contrast_fixture.txt").oracles()
    ex = LabeledExample.from_strings("The service was good and quick.", 0)
    clare = run_attack(ex, oracles, sel=SelectionConfig(mode=CLARE))
    sassp = run_attack(ex, oracles, sel=SelectionConfig(mode=SASSP))
    got = ([e.new_word for e in clare.edits], [e.new_word for e in sassp.edits])
    record(6, "mode contrast", got == (["awful"], ["poor"]) and clare.success and sassp.success,
           f"clare {got[0]}, sassp {got[1]}")


# 7

# (original, adversarial, status, hand WMR, hand SYE); SYE only for successes
METRIC_FIXTURE = [
    ("The film was good .", "The film was bad .", SUCCESS, Fraction(1, 5), 0),
    ("A truly great and moving story", "A truly great great moving story", SUCCESS, Fraction(1, 6), 1),
    ("It was fine . We left happy .", "It was fine . we left sad .", SUCCESS, Fraction(2, 8), 1),
    ("the the plot was thin", "the a plot was thin", SUCCESS, Fraction(1, 5), 0),
    ("Nothing much happened here at all", "Nothing much happened here at all", FAILED, Fraction(0), None),
    ("I liked the soundtrack", "I hated the soundtrack", FAILED, Fraction(1, 4), None),
    ("Wrong label sample", "Wrong label sample", SKIPPED, Fraction(0), None),
    ("Great cast , weak script", "Great cast , strong script", SUCCESS, Fraction(1, 5), 0),
    ("one two three four five six seven eight nine ten",
     "one 2 three four 5 six seven eight 9 ten", SUCCESS, Fraction(3, 10), 0),
    ("? !", "? !", UNATTACKABLE, Fraction(0), None),
]
HAND_ASR = Fraction(600, 9)  # 6 successes of 9 admitted
HAND_MEAN_WMR = 100 * Fraction(79, 360)  # (1/5 + 1/6 + 1/4 + 1/5 + 1/5 + 3/10) / 6
HAND_MEAN_SYE = Fraction(2, 6)


def fixture_result(original, adversarial, status):
    before, after = original.split(), adversarial.split()
    edits = tuple(Edit(i, a, b) for i, (a, b) in enumerate(zip(before, after)) if a != b)
    return AttackResult(original=LabeledExample(tokenize(original), 0),
                        adversarial_text=tokenize(adversarial), status=status, mode=SASSP, edits=edits)


def test_metric_exactness():
    oracles = replace(fresh_toy_oracles(), lm=ToyLanguageModel(4), grammar=RuleGrammarChecker())
    results = [fixture_result(o, a, s) for o, a, s, _, _ in METRIC_FIXTURE]
    metrics = [sample_metrics(r, oracles) for r in results]
    report = aggregate(results, metrics)
    problems = []
    for k, ((_, _, status, wmr, sye), r, m) in enumerate(zip(METRIC_FIXTURE, results, metrics)):
        if word_manipulation_rate(r) != wmr.numerator / wmr.denominator:
            problems.append(f"wmr[{k}]")
        if status == SUCCESS:
            if m.sye != sye:
                problems.append(f"sye[{k}]={m.sye}")
            if abs(m.perplexity - 4.0) > 1e-9:
                problems.append(f"per[{k}]={m.perplexity}")
    if report.asr != float(HAND_ASR):
        problems.append(f"asr={report.asr}")
    if report.mean_sye != float(HAND_MEAN_SYE):
        problems.append(f"mean sye={report.mean_sye}")
    if report.mean_wmr != float(HAND_MEAN_WMR):
        problems.append(f"mean wmr={report.mean_wmr!r}")
    record(7, "metric exactness", not problems,
           ", ".join(problems) or f"ASR {report.asr:.4f}, WMR {report.mean_wmr:.4f}%, SYE {report.mean_sye:.4f}")


# 8


def run_toy_demo(out):
    return subprocess.run([sys.executable, "-m", "sassp.cli", "toy-demo", "--out", str(out)],
                          capture_output=True, text=True, check=True)


def bundle_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_determinism(tmp_path):
    run_toy_demo(tmp_path / "a")
    run_toy_demo(tmp_path / "b")
    a, b = bundle_bytes(tmp_path / "a"), bundle_bytes(tmp_path / "b")
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    record(8, "determinism", bool(a) and not differing,
           f"{len(a)} files compared" + (f", differ: {differing[:3]}" if differing else ""))


# 9


def test_budget_safety():
    oracles = fresh_toy_oracles()
    examples = corpus()
    seen, ok = [], True
    for mode in (SASSP, CLARE):
        cfg = AttackConfig(selection=SelectionConfig(mode=mode), budget=BudgetConfig(max_queries=10))
        try:
            results = run_batch(examples, oracles, cfg)
        except Exception as exc:  # any crash fails the criterion
            record(9, "budget safety", False, f"{mode} raised {exc!r}")
        for r in results:
            ok &= r.queries_used <= 10 and r.status in (SUCCESS, FAILED)
            ok &= (r.status == SUCCESS) == (r.final_prediction.predicted_label != r.original.gold_label)
            seen.append(r.status)
    counts = {s: seen.count(s) for s in sorted(set(seen))}
    record(9, "budget safety", ok, f"max_queries=10, statuses {counts}")


# 10 (network-gated)


@pytest.mark.integration
@pytest.mark.skipif(os.environ.get("SASSP_INTEGRATION") != "1",
                    reason="set SASSP_INTEGRATION=1 to run the network-gated anchor")
def test_integration_anchor(tmp_path):
    from sassp import harness

    dataset = os.environ.get("SASSP_INTEGRATION_DATA")
    if not dataset:
        pytest.skip("SASSP_INTEGRATION_DATA must name a JSONL news-classification file")
    cfg = harness.config_from_mapping({
        "mode": "clare, sassp",
        "victim": os.environ.get("SASSP_VICTIM", "hf:textattack/bert-base-uncased-ag-news"),
        "mlm": "hf:distilroberta-base",
        "embedder": "hf:sentence-transformers/all-MiniLM-L6-v2",
        "paraphraser": "hf:sentence-transformers/paraphrase-MiniLM-L6-v2",
        "lm": "hf:gpt2",
        "grammar": "toy",
        "sample_size": 50,
        "seed": 0,
    })
    bundle = harness.run_command(cfg, Path(dataset), tmp_path / "out", "single")
    agg = {run["mode"]: run["aggregate"] for run in bundle["runs"]}
    sassp = agg["sassp"]
    ok = sassp["asr"] > 0 and sassp["mean_ses"] is not None and sassp["mean_ses"] >= cfg.sim_threshold
    record(10, "integration anchor", ok,
           f"sassp ASR {sassp['asr']:.1f} vs clare {agg['clare']['asr']:.1f}, SES {sassp['mean_ses']}")
