from types import SimpleNamespace

import pytest

from coopcheck.runtime import ProgramSpec


def program(main, setup=None, name="micro"):
    """Wrap a bare ``main(t, g)`` (and optional setup) as a ProgramSpec."""
    return ProgramSpec(name, setup or (lambda b: SimpleNamespace()), main)


@pytest.fixture
def make_program():
    return program


# criterion number -> (passed, description); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {desc}")
