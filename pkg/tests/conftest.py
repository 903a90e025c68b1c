from __future__ import annotations

import json
from pathlib import Path

import pytest

from agroevo.landscape import EconomicParams, generate_landscape, write_landscape_file
from agroevo.offline import render_baseline_script, render_global_script
from agroevo.sandbox import Candidate, CandidateKind, ExecutionLimits

BASELINE_PARAMS = {"habitat_threshold": 400.0, "margin_threshold": 900.0, "habitat_level": 1.0, "margin_level": 0.5}
GLOBAL_PARAMS = {"touch_buffer": 1.0, "habitat_threshold": 400.0}

FAST_LIMITS = ExecutionLimits(timeout=20.0)


@pytest.fixture(scope="session")
def prices() -> dict[str, float]:
    return EconomicParams.default().crop_prices


@pytest.fixture(scope="session")
def landscape7():
    return generate_landscape(7)


@pytest.fixture
def farm_file(tmp_path: Path, landscape7) -> Path:
    path = tmp_path / "farm_1" / "input.geojson"
    write_landscape_file(landscape7.farm(1), path)
    return path


@pytest.fixture(scope="session")
def good_script(prices) -> str:
    return render_baseline_script(BASELINE_PARAMS, prices)


@pytest.fixture(scope="session")
def global_script(prices) -> str:
    return render_global_script(GLOBAL_PARAMS, prices)


def script(body: str, cid: str = "c0") -> Candidate:
    return Candidate(cid, CandidateKind.SCRIPT, body)


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = sorted(getattr(config, "_acceptance_lines", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
