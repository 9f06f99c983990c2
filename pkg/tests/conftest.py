import numpy as np
import pytest

from melanopipe.slide_io import write_slide_package
from melanopipe.synthgen import aligned_slide_spec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def malignant_slide():
    """2x2 cells of 1024 base px: one malignant cell, three plain tissue."""
    return generate(aligned_slide_spec("mal", ["mp", "pp"], cols=2))


@pytest.fixture
def benign_slide():
    return generate(aligned_slide_spec("ben", ["bp", "pe"], cols=2))


@pytest.fixture
def slide_dir(tmp_path):
    """Write a list of aligned specs as packages; returns a factory."""
    def make(specs):
        paths = []
        for spec in specs:
            pyr, _ = generate(spec)
            paths.append(write_slide_package(pyr, tmp_path / "slides" / spec.slide_id))
        return paths
    return make


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
