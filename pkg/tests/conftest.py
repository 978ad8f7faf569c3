import contextlib
import time

import pytest

_RESULTS = {}


class _Criterion:
    def __init__(self, number, title, budget_s):
        self.number, self.title, self.budget_s = number, title, budget_s
        self.details = []

    def note(self, text):
        self.details.append(text)


@pytest.fixture
def criterion():
    """Context manager recording PASS/FAIL and runtime for one acceptance criterion."""

    @contextlib.contextmanager
    def run(number, title, budget_s):
        crit = _Criterion(number, title, budget_s)
        t0 = time.perf_counter()
        ok = False
        try:
            yield crit
            elapsed = time.perf_counter() - t0
            crit.note(f"{elapsed:.1f}s of {budget_s:g}s")
            assert elapsed < budget_s, f"runtime {elapsed:.1f}s exceeds {budget_s:g}s"
            ok = True
        finally:
            _RESULTS[number] = (ok, crit)

    return run


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        ok, crit = _RESULTS[number]
        detail = "; ".join(crit.details)
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {crit.title}  [{detail}]")
