import sys
from pathlib import Path

import numpy as np
import pytest

from speechforge.corpus import SourcePool
from speechforge.synthetic import babble_noise, cafeteria_noise, speech_like

sys.path.insert(0, str(Path(__file__).parent))

FS = 16000


@pytest.fixture(scope="session")
def desk_pool():
    """Four generated utterances and two noises, kept in memory."""
    clean = {f"utt{i}": speech_like(100 + i, 1.5, FS) for i in range(4)}
    noise = {"babble": babble_noise(7, 4.0, FS), "cafeteria": cafeteria_noise(8, 4.0, FS)}
    return SourcePool(clean, noise, sample_rate_hz=FS)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
