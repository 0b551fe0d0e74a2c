import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import runs

    if not runs.verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(runs.verdicts, key=lambda n: int(n[1:])):
        ok, detail = runs.verdicts[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
