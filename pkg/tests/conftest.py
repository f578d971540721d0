import os

import numpy as np
import pytest

from leo_handover.env import HandoverEnv, RewardParams, build_geometry
from leo_handover.link import LinkBudgetParams
from leo_handover.mobility import spawn_users
from leo_handover.orbits import ConstellationArrays, ConstellationSpec, generate_walker

# Small shell over the Stockholm boxes; a few satellites are overhead in the first minutes.
DESK_SHELL = ConstellationSpec(4, 6, 1200.0, 87.9, raan_spread=30.0, phase_offset=0.5, raan_origin=5.0)
DESK_COUNTS = {"aircraft": 2, "evtol": 2, "uav": 2, "ground": 6}


def desk_constellation(spec=DESK_SHELL):
    return ConstellationArrays.from_states(generate_walker(spec))


@pytest.fixture(scope="session")
def small_geometry():
    """12 users, 24 satellites, 30 sections of 10 s."""
    users = spawn_users(7, DESK_COUNTS)
    return build_geometry(desk_constellation(), users, LinkBudgetParams(), 10.0, 30)


@pytest.fixture
def small_env(small_geometry):
    return HandoverEnv(small_geometry, RewardParams(capacity=8))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 12):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
    if os.environ.get("LEO_HANDOVER_NO_NUMBA"):
        terminalreporter.write_line("(numpy fallback kernels)")
