import sys

import pytest

from sinr.evaluation.corpus import synthetic_corpus


def words(n: int, stem: str = "w") -> list[str]:
    return [f"{stem}{i}" for i in range(n)]


def para(n: int, stem: str = "w") -> str:
    return " ".join(words(n, stem))


@pytest.fixture(scope="session")
def small_corpus():
    return synthetic_corpus(40, seed=11)


def pytest_terminal_summary(terminalreporter):
    lines = getattr(sys.modules.get("test_acceptance"), "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for num in sorted(lines):
            terminalreporter.write_line(lines[num])
