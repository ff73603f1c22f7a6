from __future__ import annotations

import pytest

from .shared import ACCEPTANCE_LINES, PARAM_SETS, param_id


@pytest.fixture(params=PARAM_SETS, ids=param_id)
def params(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
