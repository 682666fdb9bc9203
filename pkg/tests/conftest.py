import numpy as np
import pytest

from echosig.experiments import train_synthetic_model


@pytest.fixture(scope="session")
def model():
    """Desk-scale clean-speech model shared by the integration tests."""
    return train_synthetic_model(n_utterances=10, duration_s=30.0, n_mixtures=16, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = {}


@pytest.fixture
def record_criterion():
    """Log one PASS/FAIL line per acceptance criterion and return the verdict."""

    def _record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[number])
