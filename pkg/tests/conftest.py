import dataclasses

import pytest
from hypothesis import HealthCheck, settings

from lighttrail.config import load_config

settings.register_profile("lighttrail", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lighttrail")


@pytest.fixture(scope="session")
def cfg():
    return load_config(None)


def with_fields(cfg, section, **kw):
    """Copy of ``cfg`` with fields of one section replaced."""
    return dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **kw)})


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
