import numpy as np
import pytest

from scifdm_fmcw.waveform import WaveformParams


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_params():
    """A short frame that keeps both chirp directions."""
    return WaveformParams(M=32, N=32, L_cp=8, psi=10.0, S=4)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion(capsys):
    """Print one PASS/FAIL line for an acceptance criterion and remember it for the summary."""

    def record(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
