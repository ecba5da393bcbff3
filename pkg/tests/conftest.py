import numpy as np
import pytest

ACCEPTANCE: list[str] = []


@pytest.fixture
def rng():
    """Fresh generator per test so tests do not depend on execution order."""
    return np.random.default_rng(1234)


@pytest.fixture
def verdict():
    """Record one pass/fail line for the acceptance summary."""
    def record(number: int, title: str, ok: bool, detail: str) -> None:
        ACCEPTANCE.append(f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
