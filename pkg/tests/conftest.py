import json
from importlib import resources

import numpy as np
import pytest

from sassp.core import LabeledExample
from sassp.toybackend import ToyVictim, ToyVictimSpec, parse_fixture


def bundled(name):
    return resources.files("sassp").joinpath("data", name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def toy_fixture():
    return parse_fixture(bundled("toy_fixture.txt"))


@pytest.fixture(scope="session")
def toy_oracles(toy_fixture):
    return toy_fixture.oracles()


@pytest.fixture(scope="session")
def toy_corpus():
    rows = [json.loads(line) for line in bundled("toy_corpus.jsonl").splitlines() if line.strip()]
    return [LabeledExample.from_strings(r["text"], r["label"]) for r in rows]


def unit_victim(embeddings):
    """Toy victim with v = (1, 0), u = (0, 1)."""
    spec = ToyVictimSpec(embeddings={w: np.array(e, float) for w, e in embeddings.items()},
                         v=np.array([1.0, 0.0]), u=np.array([0.0, 1.0]))
    return ToyVictim(spec)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
