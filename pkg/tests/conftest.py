from __future__ import annotations

import pytest
from hypothesis import settings

from nlel.schema import canonical_schema
from nlel.synthetic import SyntheticEnv, default_env_spec

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture(scope="session")
def schema():
    return canonical_schema()


@pytest.fixture(scope="session")
def pi0(schema):
    return schema.defaults()


@pytest.fixture(scope="session")
def env(schema):
    return SyntheticEnv(default_env_spec(), schema)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion, printed at the end of the session."""

    def record(number: int, name: str, passed: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {name}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
