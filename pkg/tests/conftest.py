import json
import sys
import time
from pathlib import Path

import pytest

from ceci.ontology import desk_ontology_path, load_ontology

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"
DATA = Path(__file__).parents[1] / "src" / "ceci" / "data"
DESK_SEED = 7

_acceptance_lines: list[str] = []


def record_acceptance(line: str) -> None:
    _acceptance_lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_ontology():
    return load_ontology(desk_ontology_path())


@pytest.fixture(scope="session")
def toy_ontology():
    return load_ontology(FIXTURES / "toy_ontology.json")


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Full desk pipeline, run once per session: 300 base graphs, 4-layer model, 300 epochs."""
    from ceci.cli import run_pipeline

    out = tmp_path_factory.mktemp("desk_run")
    start = time.perf_counter()
    paths = run_pipeline(DATA / "desk_pipeline.json", out, DESK_SEED)
    elapsed = time.perf_counter() - start
    report = json.loads(paths["report"].read_text())
    return {"paths": paths, "elapsed": elapsed, "report": report}


@pytest.fixture(scope="session")
def desk_model(desk_run):
    from ceci.model import load_checkpoint

    return load_checkpoint(desk_run["paths"]["model"])


@pytest.fixture(scope="session")
def desk_dataset(desk_run):
    from ceci.cli import _load_dataset

    return _load_dataset(desk_run["paths"]["corpus"], desk_run["paths"]["splits"])
