import numpy as np
import pytest

from lengthbias.advantage import Trajectory

ACCEPTANCE = {}


def make_traj(log_diffs, advantage=1.0, old=None, reward=None):
    """Trajectory whose per-token log-ratios are exactly ``log_diffs``."""
    d = np.asarray(log_diffs, dtype=np.float64)
    old = np.full(d.shape, -1.0) if old is None else np.asarray(old, dtype=np.float64)
    return Trajectory(
        tokens=np.ones(d.size, dtype=np.int64),
        old_logprobs=old,
        new_logprobs=old + d,
        advantage=advantage,
        reward=reward,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        ACCEPTANCE[name] = report.outcome
    elif report.when == "setup" and report.outcome != "passed" and "test_acceptance" in report.nodeid:
        ACCEPTANCE[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda n: int(n.split("_")[2]) if n.split("_")[2].isdigit() else 99):
        verdict = "PASS" if ACCEPTANCE[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
