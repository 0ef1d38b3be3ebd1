"""Datasets, run configuration, oracle registry and report bundles."""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

from .core import LabeledExample, OracleSuite
from .metrics import AggregateReport, NoAdmittedSamples, aggregate, sample_metrics
from .perturb import OBJECTIVES, AttackConfig, AttackResult, BudgetConfig, RankConfig, run_batch
from .scoring import MODES, SelectionConfig
from .semfilter import GateConfig
from .toybackend import ToyFixture, load_fixture, parse_fixture

log = logging.getLogger(__name__)

SINGLE = "single"
PAIR = "pair"


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class AllLinesMalformed(ValueError):
    pass


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class DatasetRecord:
    label: int
    text: Optional[str] = None
    text_a: Optional[str] = None
    text_b: Optional[str] = None

    def to_example(self, attack_field: str = "text_b") -> LabeledExample:
        if self.text is not None:
            return LabeledExample.from_strings(self.text, self.label)
        return LabeledExample.from_strings(self.text_a, self.label, self.text_b,
                                           attack_field=attack_field)


@dataclass
class LoadResult:
    records: list[DatasetRecord]
    errors: list[tuple[int, str]] = field(default_factory=list)


def _parse_record(line: str, schema: str) -> DatasetRecord:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    if "label" not in obj:
        raise ValueError("missing field 'label'")
    label = obj["label"]
    if isinstance(label, bool) or not isinstance(label, int) or label < 0:
        raise ValueError(f"label must be a non-negative integer, got {label!r}")
    names = ("text",) if schema == SINGLE else ("text_a", "text_b")
    values = {}
    for name in names:
        value = obj.get(name)
        if not isinstance(value, str) or not value.strip():
            raise ValueError(f"missing or empty field {name!r}")
        values[name] = value
    return DatasetRecord(label=label, **values)


def load_dataset(path: str | Path, schema: str = SINGLE) -> LoadResult:
    """Read line-delimited JSON records.

    Malformed lines are collected with their 1-based line numbers and
    skipped. Raises ``AllLinesMalformed`` only if no line could be loaded.
    """
    if schema not in (SINGLE, PAIR):
        raise ValueError(f"schema must be {SINGLE!r} or {PAIR!r}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    result = LoadResult(records=[])
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                result.records.append(_parse_record(line, schema))
            except ValueError as exc:
                result.errors.append((lineno, str(exc)))
    if result.errors and not result.records:
        raise AllLinesMalformed(f"{path}: every line is malformed ({len(result.errors)} lines)")
    for lineno, msg in result.errors:
        log.warning("%s:%d skipped: %s", path, lineno, msg)
    return result


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class RunConfig:
    mode: tuple[str, ...] = ("sassp",)
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 0.7
    top_k: int = 5
    alpha_rank: float = 1.0
    beta_rank: float = 1.0
    k_candidates: int = 50
    objective: str = "gold_drop"
    sim_threshold: float = 0.80
    para_threshold: float = 0.70
    max_edits_fraction: float = 0.4
    max_edits: Optional[int] = None
    max_queries: int = 2000
    reselect_each_step: bool = False
    victim: str = "toy"
    mlm: str = "toy"
    embedder: str = "toy"
    paraphraser: str = "toy"
    lm: str = "toy"
    grammar: str = "toy"
    metrics_embedder: Optional[str] = None
    toy_fixture: Optional[str] = None
    seed: int = 0
    attack_field: str = "text_b"
    sample_size: Optional[int] = None
    workers: int = 1

    def attack_config(self, mode: str) -> AttackConfig:
        return AttackConfig(
            selection=SelectionConfig(self.alpha, self.beta, self.gamma, self.top_k, mode),
            rank=RankConfig(self.alpha_rank, self.beta_rank, self.k_candidates, self.objective),
            gate=GateConfig(self.sim_threshold, self.para_threshold),
            budget=BudgetConfig(self.max_edits_fraction, self.max_edits, self.max_queries),
            reselect_each_step=self.reselect_each_step,
        )

    def echo(self) -> dict:
        d = asdict(self)
        d["mode"] = list(self.mode)
        return d


def _coerce(name: str, raw, annotation: str):
    optional = annotation.startswith("Optional")
    if optional and (raw is None or (isinstance(raw, str) and raw.lower() in ("", "none", "null"))):
        return None
    if name == "mode":
        items = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
        return tuple(str(m).strip() for m in items if str(m).strip())
    base = annotation.removeprefix("Optional[").rstrip("]")
    if base == "bool":
        if isinstance(raw, bool):
            return raw
        text = str(raw).lower()
        if text in ("true", "yes", "1", "on"):
            return True
        if text in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if base == "int":
        if isinstance(raw, bool) or (isinstance(raw, float) and not raw.is_integer()):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(raw)
    if base == "float":
        return float(raw)
    return str(raw)


def _range_problems(cfg: RunConfig) -> list[str]:
    problems = []
    for m in cfg.mode:
        if m not in MODES:
            problems.append(f"mode: unknown mode {m!r} (expected {', '.join(MODES)})")
    if not cfg.mode:
        problems.append("mode: at least one mode is required")
    if len(set(cfg.mode)) != len(cfg.mode):
        problems.append("mode: modes must not repeat")
    if cfg.attack_field not in ("text", "text_a", "text_b"):
        problems.append(f"attack_field: expected text, text_a or text_b, got {cfg.attack_field!r}")
    if cfg.sample_size is not None and cfg.sample_size < 1:
        problems.append("sample_size: must be a positive integer")
    if cfg.workers < 1:
        problems.append("workers: must be >= 1")
    checks = [
        ("alpha", cfg.alpha >= 0, "must be >= 0"),
        ("beta", cfg.beta >= 0, "must be >= 0"),
        ("alpha+beta", cfg.alpha + cfg.beta > 0, "alpha + beta must be > 0"),
        ("gamma", 0 < cfg.gamma <= 1, "must lie in (0, 1]"),
        ("top_k", cfg.top_k >= 1, "must be >= 1"),
        ("alpha_rank", cfg.alpha_rank >= 0, "must be >= 0"),
        ("beta_rank", cfg.beta_rank >= 0, "must be >= 0"),
        ("alpha_rank+beta_rank", cfg.alpha_rank + cfg.beta_rank > 0,
         "alpha_rank + beta_rank must be > 0"),
        ("k_candidates", cfg.k_candidates >= 1, "must be >= 1"),
        ("objective", cfg.objective in OBJECTIVES, f"must be one of {', '.join(OBJECTIVES)}"),
        ("sim_threshold", 0 <= cfg.sim_threshold <= 1, "must lie in [0, 1]"),
        ("para_threshold", 0 <= cfg.para_threshold <= 1, "must lie in [0, 1]"),
        ("max_edits_fraction", 0 <= cfg.max_edits_fraction <= 1, "must lie in [0, 1]"),
        ("max_edits", cfg.max_edits is None or cfg.max_edits >= 0, "must be >= 0"),
        ("max_queries", cfg.max_queries >= 0, "must be >= 0"),
    ]
    problems.extend(f"{name}: {msg}" for name, ok, msg in checks if not ok)
    return problems


def config_from_mapping(values: dict) -> RunConfig:
    """Build a validated ``RunConfig``; every problem is reported at once."""
    types = {f.name: str(f.type) for f in fields(RunConfig)}
    problems = []
    kwargs = {}
    for key, raw in values.items():
        if key not in types:
            problems.append(f"unknown key {key!r}")
            continue
        try:
            kwargs[key] = _coerce(key, raw, types[key])
        except (TypeError, ValueError) as exc:
            problems.append(f"{key}: {exc}")
    cfg = RunConfig(**kwargs)
    problems.extend(_range_problems(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse the flat ``key = value`` format (``#`` starts a comment)."""
    values = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            problems.append(f"line {lineno}: duplicate key {key!r}")
        values[key] = value.strip("\"'")
    if problems:
        raise ConfigError(problems)
    return config_from_mapping(values)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- registry

ROLES = ("victim", "mlm", "embedder", "paraphraser", "lm", "grammar")

# factory(role, argument, config) -> oracle; identifiers look like "name" or "name:argument"
BackendFactory = Callable[[str, str, RunConfig], object]
_BACKENDS: dict[str, BackendFactory] = {}


def register_backend(name: str, factory: BackendFactory) -> None:
    _BACKENDS[name] = factory


def bundled_text(name: str) -> str:
    return resources.files("sassp").joinpath("data", name).read_text(encoding="utf-8")


def _toy_fixture(config: RunConfig, argument: str = "") -> ToyFixture:
    path = argument or config.toy_fixture
    return load_fixture(path) if path else parse_fixture(bundled_text("toy_fixture.txt"))


def _toy_factory(role: str, argument: str, config: RunConfig):
    suite = _toy_fixture(config, argument).oracles()
    return getattr(suite, "embedder" if role == "metrics_embedder" else role)


def _hf_factory(role: str, argument: str, config: RunConfig):
    from . import hf

    return hf.build(role, argument, config)


register_backend("toy", _toy_factory)
register_backend("hf", _hf_factory)


def resolve_oracles(config: RunConfig) -> OracleSuite:
    built = {}
    problems = []
    ids = {role: getattr(config, role) for role in ROLES}
    ids["metrics_embedder"] = config.metrics_embedder or config.embedder
    for role, ident in ids.items():
        name, _, argument = ident.partition(":")
        factory = _BACKENDS.get(name)
        if factory is None:
            problems.append(f"{role}: unknown backend {ident!r}")
            continue
        try:
            built[role] = factory(role, argument, config)
        except ImportError as exc:
            problems.append(f"{role}: backend {name!r} is not installed ({exc.name or exc})")
        except ValueError as exc:
            problems.append(str(exc))
    if problems:
        raise ConfigError(problems)
    return OracleSuite(**built)


def sample_seed(seed: int, index: int) -> int:
    digest = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def choose_subset(n: int, config: RunConfig) -> list[int]:
    """Indices to attack: all, or a seeded random sample kept in file order."""
    if config.sample_size is None or config.sample_size >= n:
        return list(range(n))
    return sorted(random.Random(config.seed).sample(range(n), config.sample_size))


# ----------------------------------------------------------------- reports


@dataclass
class ModeRun:
    mode: str
    results: list[AttackResult]
    metrics: list
    report: Optional[AggregateReport]
    indices: list[int]


def run_modes(examples: Sequence[LabeledExample], oracles: OracleSuite, config: RunConfig,
              indices: Sequence[int] | None = None) -> list[ModeRun]:
    indices = list(range(len(examples))) if indices is None else list(indices)
    runs = []
    for mode in config.mode:
        results = run_batch(examples, oracles, config.attack_config(mode), workers=config.workers)
        metrics = [sample_metrics(r, oracles) for r in results]
        echo = config.echo()
        echo["mode"] = mode
        try:
            report = aggregate(results, metrics, echo)
        except NoAdmittedSamples:
            report = None
        runs.append(ModeRun(mode, results, metrics, report, indices))
    return runs


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _fmt(value, digits: int) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def render_table(bundle: dict) -> str:
    lines = [
        "| Model | ASR | PER | WMR | SYE | SES |",
        "|---|---|---|---|---|---|",
    ]
    notes = []
    for run in bundle["runs"]:
        agg = run["aggregate"]
        name = run["mode"].upper()
        if agg is None:
            lines.append(f"| {name} | n/a | n/a | n/a | n/a | n/a |")
            notes.append(f"**{name}: all {run['sample_count']} samples skipped "
                         f"(no admitted samples)**")
            continue
        lines.append(
            f"| {name} | {_fmt(agg['asr'], 1)} | {_fmt(agg['mean_per'], 1)} | "
            f"{_fmt(agg['mean_wmr'], 1)} | {_fmt(agg['mean_sye'], 2)} | {_fmt(agg['mean_ses'], 2)} |"
        )
        if agg["skipped_count"]:
            notes.append(f"{name}: {agg['skipped_count']} of {agg['sample_count']} samples skipped")
    text = "\n".join(lines) + "\n"
    if notes:
        text += "\n" + "\n".join(notes) + "\n"
    return text


def emit_report(runs: Sequence[ModeRun], config: RunConfig, out_dir: str | Path,
                load_errors: Sequence[tuple[int, str]] = ()) -> dict:
    """Write ``report.json``, ``report.md`` and ``samples/<mode>/NNNN.json``."""
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    bundle = {"config": config.echo(), "load_errors": [list(e) for e in load_errors], "runs": []}
    for run in runs:
        samples = []
        sample_dir = out / "samples" / run.mode
        sample_dir.mkdir(parents=True, exist_ok=True)
        for index, result, metric in zip(run.indices, run.results, run.metrics):
            record = result.to_dict()
            record["index"] = index
            record["sample_seed"] = sample_seed(config.seed, index)
            record["metrics"] = metric.to_dict()
            samples.append(record)
            (sample_dir / f"{index:04d}.json").write_text(_dump(record), encoding="utf-8")
        bundle["runs"].append({
            "mode": run.mode,
            "sample_count": len(run.results),
            "aggregate": None if run.report is None else run.report.to_dict(),
            "samples": samples,
        })
    (out / "report.json").write_text(_dump(bundle), encoding="utf-8")
    (out / "report.md").write_text(render_table(bundle), encoding="utf-8")
    return bundle


def read_report(out_dir: str | Path) -> dict:
    return json.loads((Path(out_dir) / "report.json").read_text(encoding="utf-8"))


def aggregates_from_bundle(bundle: dict) -> dict[str, Optional[AggregateReport]]:
    return {run["mode"]: None if run["aggregate"] is None else AggregateReport.from_dict(run["aggregate"])
            for run in bundle["runs"]}


def run_command(config: RunConfig, dataset_path: str | Path, out_dir: str | Path,
                schema: str = SINGLE) -> dict:
    loaded = load_dataset(dataset_path, schema)
    if schema == PAIR and config.attack_field == "text":
        raise ConfigError(["attack_field: pair datasets need text_a or text_b"])
    examples = [rec.to_example(config.attack_field) for rec in loaded.records]
    indices = choose_subset(len(examples), config)
    oracles = resolve_oracles(config)
    runs = run_modes([examples[i] for i in indices], oracles, config, indices)
    return emit_report(runs, config, out_dir, loaded.errors)
