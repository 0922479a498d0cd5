from pathlib import Path

import pytest
from hypothesis import settings

from nsvtp.sim import Component, Grade, Pool, StackTopology, core_blueprint
from nsvtp.dvfs import DEFAULT_PARAMS

settings.register_profile("default", deadline=None)
settings.load_profile("default")

DATA = Path(__file__).resolve().parents[1] / "src" / "nsvtp" / "data"

# property suites run at least this many cases
PROPERTY_CASES = 1000


def stack(core_grade="high", spares=(), delta=0.01, params=DEFAULT_PARAMS):
    """Five-layer single-column stack with an optional spare pool."""
    core = Component("cpu-core-017", "core", core_grade, core_blueprint(params, delta, Grade(core_grade)))
    comps = [
        core,
        Component("hv-01", "hypervisor"),
        Component("os-01", "guest-os"),
        Component("rt-01", "runtime"),
        Component("app-01", "app"),
    ]
    pool = Pool(
        Component(cid, "core", grade, core_blueprint(params, delta, Grade(grade))) for cid, grade in spares
    )
    return StackTopology([comps], pool=pool)


@pytest.fixture
def data_dir():
    return DATA


# -- acceptance summary: one line per criterion ------------------------------

_ACCEPTANCE: dict[int, list] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_c" not in report.nodeid:
        return
    if report.when != "call" and report.passed:
        return
    name = report.nodeid.split("::")[-1]
    n = int(name[len("test_c")])
    detail = dict(report.user_properties).get("detail", "")
    _ACCEPTANCE.setdefault(n, []).append((name, report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    from test_acceptance import CRITERIA

    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        checks = _ACCEPTANCE[n]
        ok = all(outcome == "passed" for _, outcome, _ in checks)
        failed = [name for name, outcome, _ in checks if outcome != "passed"]
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n}: {CRITERIA[n]}" + (f"  (failed: {', '.join(failed)})" if failed else ""))
        for name, outcome, detail in checks:
            if detail:
                tr.write_line(f"        {outcome:6s} {name}: {detail}")
