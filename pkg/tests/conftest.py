import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from laminasim.dynamics import DynamicState, SimulationConfig, assemble_eom, simulate, step  # noqa: E402
from laminasim.kinematics import build_tree  # noqa: E402
from laminasim.mechanism import load_mechanism  # noqa: E402
from laminasim.constraints import BaumgarteParams, build_constraints  # noqa: E402

FIXTURES = resources.files("laminasim") / "fixtures"


def fixture_path(name: str) -> Path:
    return Path(str(FIXTURES / name))


def load_fixture(name: str):
    return load_mechanism(fixture_path(name))


def load_json_fixture(name: str):
    return json.loads(fixture_path(name).read_text(encoding="utf-8"))


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    """Trigger numba compilation once so timed tests measure the simulation, not the JIT."""
    mech = load_fixture("fourbar.yaml")
    tree = build_tree(mech)
    config = SimulationConfig.from_mechanism(mech, burn_in_steps=2, production_duration=2e-4,
                                             constraint_tolerance=1.0)
    simulate(mech, config, tree)
    q = np.full(len(mech.joints), 0.1)
    state = DynamicState(0.0, q, np.zeros_like(q))
    step(state, config, tree)
    assemble_eom(mech, tree, build_constraints(tree), BaumgarteParams(), state)
    pend = load_fixture("pendulum.yaml")
    simulate(pend, SimulationConfig.from_mechanism(pend, production_duration=2e-4))


@pytest.fixture(scope="session")
def pendulum():
    return load_fixture("pendulum.yaml")


@pytest.fixture(scope="session")
def fourbar():
    return load_fixture("fourbar.yaml")


@pytest.fixture(scope="session")
def sixbar():
    return load_fixture("sixbar.yaml")


@pytest.fixture(scope="session")
def triple():
    return load_fixture("triple_pendulum.yaml")


@pytest.fixture(scope="session")
def sixbar_run(sixbar):
    """Full two-phase run of the six-bar fixture, shared by the tests that need it."""
    import time

    start = time.perf_counter()
    phase1, phase2 = simulate(sixbar, SimulationConfig.from_mechanism(sixbar))
    return phase1, phase2, time.perf_counter() - start
