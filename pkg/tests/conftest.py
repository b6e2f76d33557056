from __future__ import annotations

from pathlib import Path

import pytest

from dflow.costmodel import CostModel
from dflow.dsl import compile_source
from dflow.graph import build_graph
from dflow.transport import Topology

FIXTURES = Path(__file__).parent / "fixtures"
MB = 1_000_000


def fixture_source(name: str) -> str:
    return (FIXTURES / f"{name}.dflow").read_text()


def fixture_graph(name: str, cost: CostModel | None = None):
    cost = cost or CostModel.uniform(1000, overhead=0)
    return build_graph(compile_source(fixture_source(name)), cost)


def sites(n: int, orchestrator: str = "s0") -> Topology:
    return Topology.uniform([f"s{i}" for i in range(n + 1)], orchestrator=orchestrator)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def pytest_configure(config):
    config.acceptance_verdicts = []


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line, then fail the test if the check failed."""
    lines = request.config.acceptance_verdicts

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if config.acceptance_verdicts:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_verdicts:
            terminalreporter.write_line(line)
