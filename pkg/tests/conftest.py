import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scriptgauge import _lstm_py, kernels  # noqa: E402

BACKENDS = sorted(kernels.available_backends())


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available LSTM kernel backend."""
    module = kernels.available_backends()[request.param]

    def pick(dtype):
        return module if dtype in (np.float32, np.float64) else _lstm_py

    monkeypatch.setattr(kernels, "for_dtype", pick)
    return request.param


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request, capsys):
    """Print and remember one PASS/FAIL line; the caller still asserts."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def emit(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
