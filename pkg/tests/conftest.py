import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CRITERIA_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


TOU = np.array([0.4883] * 7 + [0.8135] * 4 + [0.3515] * 8 + [0.8135] * 5)


@pytest.fixture(scope="session")
def tou():
    return TOU.copy()


@pytest.fixture(scope="session")
def small_config():
    """Seconds-scale run: 30 scenarios kept down to 4, 8 EVs per microgrid."""
    from mgexchange.config import load_config
    return load_config(None, profile="desk", seed=3,
                       scenarios={"generate": 30, "keep": 4},
                       system={"ev_counts": 8})


@pytest.fixture(scope="session")
def small_run(small_config):
    from mgexchange.pipeline import generate_scenarios, reduce_scenarios, run_schedules
    sset = reduce_scenarios(small_config, generate_scenarios(small_config))
    return run_schedules(small_config, sset, "compare")


@pytest.fixture(scope="session")
def desk_data():
    """The desk-scale stage-1 data (5 microgrids, 10 scenarios, 20 EVs each), seed 0."""
    from mgexchange.config import load_config
    from mgexchange.pipeline import generate_scenarios, reduce_scenarios, system_data
    cfg = load_config(None, profile="desk", seed=0)
    return system_data(cfg, reduce_scenarios(cfg, generate_scenarios(cfg)))
