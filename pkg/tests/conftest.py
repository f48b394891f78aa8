import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import verdicts

settings.register_profile("bonegraph", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("bonegraph")


def pytest_configure(config):
    # every solve in the suite goes through the bound monitor, including
    # those made inside the pipeline
    import bonegraph
    import bonegraph.pipeline
    import bonegraph.trws

    monitored = verdicts.MONITOR.wrap(bonegraph.trws.solve)
    for mod in (bonegraph, bonegraph.pipeline, bonegraph.trws):
        mod.solve = monitored


def pytest_terminal_summary(terminalreporter):
    mon = verdicts.MONITOR
    if verdicts.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in verdicts.VERDICTS:
            terminalreporter.write_line(line)
    terminalreporter.write_line(f"solver calls monitored: {mon.calls}, bound decreases: {len(mon.violations)}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
