import numpy as np
import pytest

from lie_svi import models

# criterion number -> list of (check name, passed, detail)
ACCEPTANCE = {}


def record(criterion: int, check: str, passed: bool, detail: str = ""):
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(passed), detail))
    status = "PASS" if passed else "FAIL"
    print(f"[criterion {criterion}] {status} {check}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in checks)
        parts = "; ".join(f"{name} {'ok' if p else 'FAILED'} ({d})" for name, p, d in checks)
        terminalreporter.write_line(f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'} - {parts}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def rigid():
    return models.rigid_body()


@pytest.fixture
def pend():
    return models.pendulum()


RIGID_OMEGA0 = np.array([2.0, -1.9, 1.0])
PEND_OMEGA0 = np.array([0.5, -0.5, 0.4])
UNSTABLE_R0 = np.diag([-1.0, 1.0, -1.0])
