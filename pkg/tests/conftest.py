import numpy as np
import pytest

from lenstext import optics, scene


@pytest.fixture(scope="session")
def glyphs():
    return scene.default_glyphs()


@pytest.fixture(scope="session")
def speckle_psf():
    return optics.simulate_psf(scene.CANVAS_WIDTH, scene.CANVAS_HEIGHT, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with its measured values."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or (rep.when != "call" and outcome != "error"):
                continue
            name = nodeid.split("::test_criterion_")[1]
            label = name.split("_", 1)[0].lstrip("0")
            verdict = dict(rep.user_properties).get("verdict", "")
            lines.append((name, f"criterion {label:<3} {'PASS' if outcome == 'passed' else 'FAIL'}  {verdict}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
