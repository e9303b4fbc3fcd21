import numpy as np
import pytest

from ettk import tensor as T

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def f64():
    with T.precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_ser():
    """2 sessions x 2 speakers x 20 clips, split on fold 0."""
    from ettk.pipeline import ser_fold
    from ettk.synth import SerSynthSpec, synth_ser_corpus

    clips, records = synth_ser_corpus(SerSynthSpec(sessions=2, clips_per_speaker=20), seed=0)
    return ser_fold(clips, records, 0)
