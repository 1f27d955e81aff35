import re
from pathlib import Path

import pytest

from token_insight.imageio import load_image
from token_insight.vit import PRESETS, ViTSubsetClassifier
from token_insight.weights_io import read_archive, validate_vit_schema

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def tiny_config():
    return PRESETS["tiny"]


@pytest.fixture(scope="session")
def tiny_tensors():
    return read_archive(FIXTURES / "tiny_weights.tnsa")


@pytest.fixture(scope="session")
def tiny_weights(tiny_tensors, tiny_config):
    return validate_vit_schema(tiny_tensors, tiny_config)


@pytest.fixture(scope="session")
def tiny_image():
    return load_image(FIXTURES / "tiny_input.png")


@pytest.fixture(scope="session")
def tiny_model(tiny_image, tiny_weights):
    return ViTSubsetClassifier.from_image(tiny_image, tiny_weights)


@pytest.fixture(scope="session")
def golden_tensors():
    return read_archive(FIXTURES / "golden_tensors.tnsa")


@pytest.fixture(scope="session")
def golden_trace_text():
    return (FIXTURES / "golden_trace.json").read_text()


# --- acceptance reporting: one pass/fail line per criterion -------------------

_acceptance_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _acceptance_outcomes[name] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance_outcomes):
        m = re.match(r"test_c(\d+)_(.*)", name)
        label = f"criterion {int(m.group(1))}: {m.group(2)}" if m else name
        outcome = _acceptance_outcomes[name].upper()
        terminalreporter.write_line(f"  {label:<55} {outcome}")
