import numpy as np
import pytest

from emokd.predictors import SyntheticSpec, generate_synthetic

_criteria: dict[int, list[tuple[str, str]]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for mark in getattr(report, "criterion_marks", ()):
        _criteria.setdefault(mark, []).append((report.nodeid.split("::")[-1], report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    rep.criterion_marks = tuple(m.args[0] for m in item.iter_markers("criterion"))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        results = _criteria[n]
        ok = all(outcome == "passed" for _, outcome in results)
        failed = [name for name, outcome in results if outcome != "passed"]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({len(results)} check(s))"
        if failed:
            line += " failing: " + ", ".join(failed)
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    return generate_synthetic(SyntheticSpec(n=200, C=8, d=12, seed=5))
