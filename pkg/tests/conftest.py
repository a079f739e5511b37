import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """criterion -> list of (part, passed, detail), printed after the run."""
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE, None)
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(log, key=lambda c: int(c.split()[0][1:])):
        parts = log[crit]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name} {'pass' if p else 'FAIL'} ({d})" for name, p, d in parts)
        terminalreporter.write_line(f"{crit}: {'PASS' if ok else 'FAIL'}  [{detail}]")
