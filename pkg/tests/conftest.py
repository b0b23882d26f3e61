import numpy as np
import pytest

from curation_mia.datamodel import TargetSet, sample_selected
from curation_mia.fixtures import make_image_fixture, make_trak_fixture


@pytest.fixture
def image_case():
    pool, targets = make_image_fixture(3, 400, 20, 16)
    truth = sample_selected(TargetSet.full(targets.n), 0.5, 3).mask
    return pool, targets, truth


@pytest.fixture
def trak_case():
    pool, targets = make_trak_fixture(5, 300, 24, 32)
    truth = sample_selected(TargetSet.full(targets.n), 0.5, 5).mask
    return pool, targets, truth


def unit_rows(rng, n, d):
    a = rng.standard_normal((n, d))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
