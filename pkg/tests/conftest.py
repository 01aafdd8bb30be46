import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE, CRITERIA
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        ok, detail = ACCEPTANCE.get(n, (False, "not run or errored"))
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {n:>2} {title}: {detail}")
