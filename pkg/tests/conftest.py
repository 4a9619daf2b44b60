import json
from pathlib import Path

import pytest

from dpc.cli import main

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}

SMALL_CONFIG = {
    "plant": {"days": 12},
    "ssm": {"epochs": 2, "n_past": 4, "observer_hidden": [8], "input_hidden": [6],
            "dist_hidden": [4]},
    "policy": {"updates": 5, "hidden": [8], "dev_scenarios": 50, "batch_size": 32},
    "run": {"horizon": 4, "sim_days": 1},
}


def run_cli(*args) -> int:
    return main([str(a) for a in args])


def pipeline(out: Path, *extra) -> None:
    for cmd in ("generate-data", "train-ssm", "train-policy", "simulate"):
        assert run_cli(cmd, "--out", out, *extra) == 0, cmd


@pytest.fixture(scope="session")
def small_config(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return path


@pytest.fixture(scope="session")
def small_run(tmp_path_factory, small_config) -> Path:
    out = tmp_path_factory.mktemp("small")
    pipeline(out, "--config", small_config)
    return out


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory) -> Path:
    """The full desk-scale pipeline with default settings (about 80 s)."""
    out = tmp_path_factory.mktemp("desk")
    pipeline(out)
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
