import json
import math
from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


def correlated_pair(shape, mu, psi, rng):
    """Unit-power circular Gaussian pair with coherence ``mu`` and phase ``psi``."""
    n1 = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
    n2 = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
    return n1, np.exp(1j * np.asarray(psi)) * (mu * n1 + math.sqrt(1 - mu * mu) * n2)


@pytest.fixture(scope="session")
def derived():
    path = FIXTURES / "derived_values.json"
    if not path.is_file():
        pytest.skip("derived_values.json missing; run scripts/verify_derived.py")
    return json.loads(path.read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one pass/fail line for the terminal summary."""
    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
