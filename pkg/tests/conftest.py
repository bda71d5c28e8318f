import sys
import time

import numpy as np
import pytest

from silbench.scene import EnvConditions, load_bundled


@pytest.fixture(scope="session")
def panel():
    return load_bundled("dexrov-panel")


@pytest.fixture(scope="session")
def degraded():
    return load_bundled("dexrov-panel-degraded-nav")


@pytest.fixture(scope="session")
def panel_e0(panel):
    return panel.with_env(EnvConditions(name="E0"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SUITE_BUDGET_S = 120.0


def pytest_sessionstart(session):
    session.config._silbench_t0 = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    elapsed = time.perf_counter() - config._silbench_t0
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(acc.RESULTS):
        tr.write_line(acc.RESULTS[n])
    for n in range(1, 8):
        if n not in acc.RESULTS:
            tr.write_line(f"criterion {n}: FAIL  did not complete")
    ok = elapsed < SUITE_BUDGET_S
    tr.write_line(f"criterion 7 (suite runtime): {'PASS' if ok else 'FAIL'}  {elapsed:.1f} s for "
                  f"{tr._numcollected} tests, bound {SUITE_BUDGET_S:.0f} s")


def pytest_sessionfinish(session, exitstatus):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS or exitstatus != 0:
        return
    if time.perf_counter() - session.config._silbench_t0 >= SUITE_BUDGET_S:
        session.exitstatus = 1
