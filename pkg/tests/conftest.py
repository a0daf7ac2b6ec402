"""Shared pytest plumbing: acceptance-criterion reporting."""

import time
from contextlib import contextmanager

import pytest

_RESULTS = []


class Criterion:
    """Collects measured values for one acceptance criterion."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.values = {}

    def record(self, **values):
        self.values.update(values)

    def detail(self):
        parts = []
        for k, v in self.values.items():
            parts.append(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}")
        return ", ".join(parts)


@pytest.fixture
def criterion():
    @contextmanager
    def run(number, title):
        c = Criterion(number, title)
        t0 = time.perf_counter()
        ok = False
        try:
            yield c
            ok = True
        finally:
            c.values["runtime_s"] = time.perf_counter() - t0
            _RESULTS.append((number, title, ok, c.detail()))
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({c.detail()})")

    return run


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_RESULTS):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {number:2d}. {title}: {detail}")
